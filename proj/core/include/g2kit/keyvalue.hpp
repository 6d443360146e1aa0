#pragma once

#include <filesystem>
#include <map>
#include <string>

namespace g2kit {

/// Ordered key=value pairs. Blank lines and lines starting with '#' are
/// ignored; whitespace around keys and values is trimmed.
using KeyValues = std::map<std::string, std::string>;

/// Throws ParseError on a line without '=' or a duplicate key.
KeyValues parse_key_values(const std::string& text);
KeyValues read_key_values(const std::filesystem::path& path);
std::string format_key_values(const KeyValues& values);

}  // namespace g2kit
