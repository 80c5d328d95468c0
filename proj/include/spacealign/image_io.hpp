#pragma once

#include "spacealign/world.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace spacealign {

// 8-bit RGB bytes, values rounded half-to-even from [0, 1].
std::vector<std::uint8_t> quantize_image(const Image& img);

// Optional tEXt chunks (keyword -> Latin-1 text) are written after IHDR.
std::vector<std::uint8_t> encode_png(const Image& img, const std::map<std::string, std::string>& text = {});
// tEXt chunks of an encoded PNG.
std::map<std::string, std::string> png_text(const std::vector<std::uint8_t>& bytes);
// Throws DataError on malformed input.
Image decode_png(const std::vector<std::uint8_t>& bytes);

void write_png(const std::filesystem::path& path, const Image& img,
               const std::map<std::string, std::string>& text = {});
Image read_png(const std::filesystem::path& path);

// SHA-256 of the quantized bytes; equal for images that encode to identical PNG pixels.
std::string image_hash(const Image& img);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

}  // namespace spacealign
