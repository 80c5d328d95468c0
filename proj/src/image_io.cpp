#include "spacealign/image_io.hpp"

#include "spacealign/hashing.hpp"

#include <png.h>
#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>

namespace spacealign {

std::vector<std::uint8_t> quantize_image(const Image& img) {
  std::vector<std::uint8_t> bytes(img.pixels.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    // nearbyint honours the default round-to-nearest-even mode.
    const double v = std::nearbyint(std::clamp(img.pixels[i], 0.0, 1.0) * 255.0);
    bytes[i] = static_cast<std::uint8_t>(v);
  }
  return bytes;
}

namespace {

constexpr std::size_t kSignatureBytes = 8;

std::uint32_t read_be32(const std::uint8_t* p) {
  return (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) | (std::uint32_t{p[2]} << 8) | std::uint32_t{p[3]};
}

void append_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int shift = 24; shift >= 0; shift -= 8) out.push_back(static_cast<std::uint8_t>(v >> shift));
}

std::vector<std::uint8_t> text_chunk(const std::string& key, const std::string& value) {
  if (key.empty() || key.size() > 79) throw ContractError("png text keyword must be 1-79 bytes");
  std::vector<std::uint8_t> body{'t', 'E', 'X', 't'};
  body.insert(body.end(), key.begin(), key.end());
  body.push_back(0);
  body.insert(body.end(), value.begin(), value.end());
  std::vector<std::uint8_t> chunk;
  append_be32(chunk, static_cast<std::uint32_t>(body.size() - 4));
  chunk.insert(chunk.end(), body.begin(), body.end());
  append_be32(chunk, static_cast<std::uint32_t>(crc32(0L, body.data(), static_cast<uInt>(body.size()))));
  return chunk;
}

}  // namespace

std::vector<std::uint8_t> encode_png(const Image& img, const std::map<std::string, std::string>& text) {
  const std::vector<std::uint8_t> bytes = quantize_image(img);
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width);
  image.height = static_cast<png_uint_32>(img.height);
  image.format = PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&image, nullptr, &size, 0, bytes.data(), 0, nullptr)) {
    throw DataError(std::string("png encode: ") + image.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&image, out.data(), &size, 0, bytes.data(), 0, nullptr)) {
    throw DataError(std::string("png encode: ") + image.message);
  }
  out.resize(size);
  if (!text.empty()) {
    // IHDR is always first: 8 signature bytes, then 4 length + 4 type + 13 data + 4 crc.
    const std::size_t after_ihdr = kSignatureBytes + 25;
    std::vector<std::uint8_t> chunks;
    for (const auto& [key, value] : text) {
      const auto c = text_chunk(key, value);
      chunks.insert(chunks.end(), c.begin(), c.end());
    }
    out.insert(out.begin() + static_cast<std::ptrdiff_t>(after_ihdr), chunks.begin(), chunks.end());
  }
  return out;
}

std::map<std::string, std::string> png_text(const std::vector<std::uint8_t>& bytes) {
  std::map<std::string, std::string> text;
  std::size_t pos = kSignatureBytes;
  while (pos + 12 <= bytes.size()) {
    const std::size_t len = read_be32(&bytes[pos]);
    if (pos + 12 + len > bytes.size()) throw DataError("png: truncated chunk");
    const std::string type(bytes.begin() + static_cast<std::ptrdiff_t>(pos + 4),
                           bytes.begin() + static_cast<std::ptrdiff_t>(pos + 8));
    if (type == "tEXt") {
      const auto* data = &bytes[pos + 8];
      const auto* end = data + len;
      const auto* nul = std::find(data, end, std::uint8_t{0});
      if (nul != end) text[std::string(data, nul)] = std::string(nul + 1, end);
    }
    if (type == "IEND") break;
    pos += 12 + len;
  }
  return text;
}

Image decode_png(const std::vector<std::uint8_t>& bytes) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (bytes.empty() || !png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
    png_image_free(&image);
    throw DataError(std::string("png decode: ") + (bytes.empty() ? "empty input" : image.message));
  }
  image.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
    png_image_free(&image);
    throw DataError(std::string("png decode: ") + image.message);
  }
  Image img(static_cast<int>(image.height), static_cast<int>(image.width));
  for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = buffer[i] / 255.0;
  return img;
}

void write_png(const std::filesystem::path& path, const Image& img, const std::map<std::string, std::string>& text) {
  write_file_bytes(path, encode_png(img, text));
}

Image read_png(const std::filesystem::path& path) { return decode_png(read_file_bytes(path)); }

std::string image_hash(const Image& img) {
  const std::vector<std::uint8_t> bytes = quantize_image(img);
  return sha256_hex(std::span<const std::uint8_t>(bytes));
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace spacealign
