#include "spacealign/config.hpp"

#include "spacealign/hashing.hpp"
#include "spacealign/json_util.hpp"

#include <cmath>
#include <fstream>

namespace spacealign {

PromptBank EditingConfig::bank() const {
  if (templates.empty()) return PromptBank::stock();
  PromptBank b;
  b.templates = templates;
  b.id = "custom-" + sha256_hex(nlohmann::json(templates).dump()).substr(0, 12);
  return b;
}

void EditingConfig::validate() const {
  bank().validate();
  if (!std::isfinite(default_alpha) || std::abs(default_alpha) > kMaxAlpha) {
    throw ConfigError("editing.default_alpha must lie in [-3, 3]");
  }
  if (inversion != "canonical" && inversion != "noisy") {
    throw ConfigError("editing.inversion must be \"canonical\" or \"noisy\", got \"" + inversion + "\"");
  }
}

void to_json(nlohmann::json& j, const EditingConfig& cfg) {
  j = nlohmann::json{{"templates", cfg.templates},
                     {"default_alpha", cfg.default_alpha},
                     {"inversion", cfg.inversion},
                     {"noisy_seed", cfg.noisy_seed}};
}

void from_json(const nlohmann::json& j, EditingConfig& cfg) {
  reject_unknown_keys(j, EditingConfig{}, "editing");
  read_key(j, "templates", cfg.templates);
  read_key(j, "default_alpha", cfg.default_alpha);
  read_key(j, "inversion", cfg.inversion);
  read_key(j, "noisy_seed", cfg.noisy_seed);
}

void ServiceConfig::validate() const {
  if (port < 0 || port > 65535) throw ConfigError("service.port must lie in [0, 65535]");
  if (max_sessions <= 0 || session_ttl_seconds <= 0 || threads <= 0) {
    throw ConfigError("service.max_sessions, session_ttl_seconds and threads must be positive");
  }
}

void to_json(nlohmann::json& j, const ServiceConfig& cfg) {
  j = nlohmann::json{{"host", cfg.host},
                     {"port", cfg.port},
                     {"embedder_checkpoint", cfg.embedder_checkpoint},
                     {"alignment_checkpoint", cfg.alignment_checkpoint},
                     {"shift_library", cfg.shift_library},
                     {"max_sessions", cfg.max_sessions},
                     {"session_ttl_seconds", cfg.session_ttl_seconds},
                     {"threads", cfg.threads},
                     {"static_dir", cfg.static_dir}};
}

void from_json(const nlohmann::json& j, ServiceConfig& cfg) {
  reject_unknown_keys(j, ServiceConfig{}, "service");
  read_key(j, "host", cfg.host);
  read_key(j, "port", cfg.port);
  read_key(j, "embedder_checkpoint", cfg.embedder_checkpoint);
  read_key(j, "alignment_checkpoint", cfg.alignment_checkpoint);
  read_key(j, "shift_library", cfg.shift_library);
  read_key(j, "max_sessions", cfg.max_sessions);
  read_key(j, "session_ttl_seconds", cfg.session_ttl_seconds);
  read_key(j, "threads", cfg.threads);
  read_key(j, "static_dir", cfg.static_dir);
}

nlohmann::json CliConfig::to_json() const {
  return nlohmann::json{{"world", world},
                        {"embedder", {{"model", embedder.model}, {"train", embedder.train}}},
                        {"alignment", alignment},
                        {"editing", editing},
                        {"evaluation", evaluation},
                        {"service", service}};
}

namespace {

// Section values are patched over the defaults so partial sections work
// even for types whose own parser insists on every key.
template <typename T>
void read_section(const nlohmann::json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  const nlohmann::json& patch = j.at(key);
  if (!patch.is_object()) throw ConfigError(std::string(key) + " section must be a JSON object");
  nlohmann::json merged = out;
  for (const auto& [k, v] : patch.items()) {
    if (!merged.contains(k)) throw ConfigError("unknown key '" + k + "' in " + key + " config");
    merged[k] = v;
  }
  try {
    out = merged.get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string(key) + " config: " + e.what());
  }
}

}  // namespace

CliConfig CliConfig::from_json(const nlohmann::json& j) {
  reject_unknown_keys(j, CliConfig{}.to_json(), "top-level");
  CliConfig cfg;
  read_section(j, "world", cfg.world);
  if (j.contains("embedder")) {
    const nlohmann::json& e = j.at("embedder");
    reject_unknown_keys(e, nlohmann::json{{"model", 0}, {"train", 0}}, "embedder");
    read_section(e, "model", cfg.embedder.model);
    read_section(e, "train", cfg.embedder.train);
  }
  read_section(j, "alignment", cfg.alignment);
  read_section(j, "editing", cfg.editing);
  read_section(j, "evaluation", cfg.evaluation);
  read_section(j, "service", cfg.service);
  cfg.validate();
  return cfg;
}

CliConfig CliConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return from_json(j);
}

void CliConfig::override_seeds(std::uint64_t seed) {
  world.seed = seed;
  embedder.train.seed = seed;
  alignment.seed = seed;
  editing.noisy_seed = seed;
  evaluation.seed = seed;
}

void CliConfig::validate() const {
  world.validate();
  alignment.validate();
  editing.validate();
  service.validate();
  if (embedder.train.batch_size <= 1) throw ConfigError("embedder.train.batch_size must be at least 2");
}

std::string CliConfig::hash() const {
  nlohmann::json j = to_json();
  j.erase("service");
  return sha256_hex(j.dump());
}

}  // namespace spacealign
