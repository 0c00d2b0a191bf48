#pragma once

#include <filesystem>
#include <span>
#include <string>

namespace iqt {

/// Lowercase hex SHA-256 of a byte range.
std::string sha256_hex(std::span<const unsigned char> bytes);

/// Lowercase hex SHA-256 of a file's contents.
std::string sha256_file(const std::filesystem::path& path);

}  // namespace iqt
