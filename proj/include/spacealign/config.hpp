#pragma once

#include "spacealign/alignment.hpp"
#include "spacealign/embedder.hpp"
#include "spacealign/evaluation.hpp"
#include "spacealign/world.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

namespace spacealign {

struct EditingConfig {
  // Empty means the stock bank.
  std::vector<std::string> templates;
  double default_alpha = 1.0;
  std::string inversion = "canonical";  // or "noisy"
  std::uint64_t noisy_seed = 5;

  PromptBank bank() const;
  void validate() const;
};

void to_json(nlohmann::json& j, const EditingConfig& cfg);
void from_json(const nlohmann::json& j, EditingConfig& cfg);

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string embedder_checkpoint;
  std::string alignment_checkpoint;
  std::string shift_library;
  int max_sessions = 256;
  int session_ttl_seconds = 3600;
  int threads = 4;
  // Serves a built UI from this directory at / when set.
  std::string static_dir;

  void validate() const;
};

void to_json(nlohmann::json& j, const ServiceConfig& cfg);
void from_json(const nlohmann::json& j, ServiceConfig& cfg);

struct EmbedderSection {
  EmbedderConfig model;
  EmbedderTrainConfig train;
};

// The single pipeline config file. Every section is optional; missing keys
// take their defaults and unknown keys are rejected.
struct CliConfig {
  WorldConfig world;
  EmbedderSection embedder;
  TrainConfig alignment;
  EditingConfig editing;
  EvalConfig evaluation;
  ServiceConfig service;

  nlohmann::json to_json() const;
  static CliConfig from_json(const nlohmann::json& j);
  static CliConfig load(const std::filesystem::path& path);

  // Sets every seed in the file to the same value.
  void override_seeds(std::uint64_t seed);
  void validate() const;
  // SHA-256 of the resolved config. The service section is left out so that
  // moving checkpoints or changing the port does not orphan artifacts.
  std::string hash() const;
};

}  // namespace spacealign
