#include "g2kit/keyvalue.hpp"

#include <fstream>
#include <sstream>

#include "g2kit/error.hpp"

namespace g2kit {

namespace {

std::string trimmed(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

}  // namespace

KeyValues parse_key_values(const std::string& text) {
  KeyValues out;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string row = trimmed(line);
    if (row.empty() || row.front() == '#') continue;
    const auto eq = row.find('=');
    if (eq == std::string::npos) throw ParseError("expected key=value", line_no);
    const std::string key = trimmed(row.substr(0, eq));
    if (key.empty()) throw ParseError("empty key", line_no);
    if (!out.emplace(key, trimmed(row.substr(eq + 1))).second) {
      throw ParseError("duplicate key '" + key + "'", line_no);
    }
  }
  return out;
}

KeyValues read_key_values(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_key_values(buffer.str());
}

std::string format_key_values(const KeyValues& values) {
  std::ostringstream out;
  for (const auto& [k, v] : values) out << k << '=' << v << '\n';
  return out.str();
}

}  // namespace g2kit
