#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace g2kit::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitWarning = 1;  // only with --strict
inline constexpr int kExitError = 2;

/// Runs one g2kit command. `args` excludes the program name. Every
/// successful command writes <out>.manifest.json next to its primary output.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// 64-bit FNV-1a of a file's bytes, as 16 hex digits.
std::string file_checksum(const std::filesystem::path& path);

std::filesystem::path manifest_path(const std::filesystem::path& out);

}  // namespace g2kit::cli
