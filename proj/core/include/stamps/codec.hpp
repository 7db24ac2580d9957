#pragma once

// Byte-level helpers: content hashing and base64.

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace stamps {

using Bytes = std::vector<std::uint8_t>;

/// Lowercase hex SHA-256 digest.
std::string sha256_hex(std::span<const std::uint8_t> data);
std::string sha256_hex(std::string_view data);
std::string sha256_file(const std::string& path);

std::string base64_encode(std::span<const std::uint8_t> data);
/// Throws FormatError on malformed input.
Bytes base64_decode(std::string_view text);

}  // namespace stamps
