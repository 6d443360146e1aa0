#include <iostream>
#include <string>
#include <vector>

#include "g2kit/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return g2kit::cli::run_cli(args, std::cout, std::cerr);
}
