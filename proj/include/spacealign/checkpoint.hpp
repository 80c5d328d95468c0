#pragma once

#include "spacealign/nn.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>

namespace spacealign {

// Binary checkpoint container:
//   8-byte magic "SPALIGN1", u64 little-endian header length, UTF-8 JSON
//   header, then every parameter block as raw little-endian float32 in the
//   order listed under header["blocks"].
struct Checkpoint {
  nlohmann::json header = nlohmann::json::object();
  nn::ParameterSet params;

  // SHA-256 over the float32 parameter bytes; identifies the weights.
  std::string content_hash() const;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
// Throws DataError on a bad magic, truncated data or block shape mismatch.
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes);

}  // namespace spacealign
