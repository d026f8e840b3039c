#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace flexsdr::util {

// Lowercase hex SHA-256 of the input bytes.
std::string sha256_hex(std::string_view bytes);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view content);

}  // namespace flexsdr::util
