#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace spacealign {

// Lowercase hex SHA-256 digest.
std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string sha256_hex(std::string_view text);

std::string base64_encode(std::span<const std::uint8_t> bytes);
// Throws DataError on characters outside the standard alphabet.
std::string base64_decode(std::string_view text);

}  // namespace spacealign
