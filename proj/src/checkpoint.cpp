#include "spacealign/checkpoint.hpp"

#include "spacealign/hashing.hpp"
#include "spacealign/image_io.hpp"

#include <bit>
#include <cstring>

namespace spacealign {

namespace {

constexpr char kMagic[8] = {'S', 'P', 'A', 'L', 'I', 'G', 'N', '1'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

std::vector<std::uint8_t> parameter_bytes(const nn::ParameterSet& params) {
  std::vector<std::uint8_t> out;
  out.reserve(params.scalar_count() * sizeof(float));
  for (const Mat& block : params.values) {
    for (Eigen::Index i = 0; i < block.size(); ++i) {
      const float f = static_cast<float>(block.data()[i]);
      std::uint8_t raw[sizeof(float)];
      std::memcpy(raw, &f, sizeof(float));
      out.insert(out.end(), raw, raw + sizeof(float));
    }
  }
  return out;
}

}  // namespace

std::string Checkpoint::content_hash() const {
  const auto bytes = parameter_bytes(params);
  return sha256_hex(std::span<const std::uint8_t>(bytes));
}

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt) {
  nlohmann::json header = ckpt.header;
  nlohmann::json blocks = nlohmann::json::array();
  for (std::size_t i = 0; i < ckpt.params.size(); ++i) {
    blocks.push_back({{"name", ckpt.params.names[i]},
                      {"rows", ckpt.params.values[i].rows()},
                      {"cols", ckpt.params.values[i].cols()}});
  }
  header["blocks"] = blocks;
  const std::string text = header.dump();
  std::vector<std::uint8_t> out(kMagic, kMagic + sizeof(kMagic));
  const std::uint64_t length = text.size();
  std::uint8_t raw[sizeof(length)];
  std::memcpy(raw, &length, sizeof(length));
  out.insert(out.end(), raw, raw + sizeof(length));
  out.insert(out.end(), text.begin(), text.end());
  const auto data = parameter_bytes(ckpt.params);
  out.insert(out.end(), data.begin(), data.end());
  return out;
}

Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < sizeof(kMagic) + sizeof(std::uint64_t) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw DataError("checkpoint: bad magic");
  }
  std::uint64_t length = 0;
  std::memcpy(&length, bytes.data() + sizeof(kMagic), sizeof(length));
  std::size_t offset = sizeof(kMagic) + sizeof(length);
  if (length > bytes.size() - offset) throw DataError("checkpoint: truncated header");
  Checkpoint ckpt;
  try {
    ckpt.header = nlohmann::json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(offset),
                                        bytes.begin() + static_cast<std::ptrdiff_t>(offset + length));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint: header is not JSON: ") + e.what());
  }
  offset += length;
  if (!ckpt.header.contains("blocks") || !ckpt.header["blocks"].is_array()) throw DataError("checkpoint: no block table");
  for (const auto& block : ckpt.header["blocks"]) {
    const auto rows = block.at("rows").get<Eigen::Index>();
    const auto cols = block.at("cols").get<Eigen::Index>();
    const std::size_t count = static_cast<std::size_t>(rows * cols);
    if (count * sizeof(float) > bytes.size() - offset) throw DataError("checkpoint: truncated parameter data");
    Mat m(rows, cols);
    for (std::size_t i = 0; i < count; ++i) {
      float f = 0.0f;
      std::memcpy(&f, bytes.data() + offset + i * sizeof(float), sizeof(float));
      m.data()[i] = f;
    }
    offset += count * sizeof(float);
    ckpt.params.add(block.at("name").get<std::string>(), std::move(m));
  }
  if (offset != bytes.size()) throw DataError("checkpoint: trailing bytes");
  ckpt.header.erase("blocks");
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  write_file_bytes(path, serialize_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return deserialize_checkpoint(read_file_bytes(path)); }

}  // namespace spacealign
