#include "spacealign/config.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

using namespace spacealign;

namespace {

std::filesystem::path write_temp(const std::string& name, const std::string& text) {
  const auto path = std::filesystem::temp_directory_path() / name;
  std::ofstream(path) << text;
  return path;
}

}  // namespace

TEST(CliConfig, EmptyObjectGivesDefaults) {
  const CliConfig c = CliConfig::from_json(nlohmann::json::object());
  const CliConfig d;
  EXPECT_EQ(c.hash(), d.hash());
  EXPECT_EQ(c.alignment.steps_sa, 8000);
  EXPECT_EQ(c.service.max_sessions, 256);
  EXPECT_EQ(c.service.session_ttl_seconds, 3600);
  EXPECT_NO_THROW(c.validate());
}

TEST(CliConfig, PartialSectionsMerge) {
  const CliConfig c = CliConfig::from_json(nlohmann::json::parse(R"({"alignment": {"steps_sa": 10}, "world": {"tau": 2.0}})"));
  EXPECT_EQ(c.alignment.steps_sa, 10);
  EXPECT_EQ(c.alignment.steps_indomain, 4000);
  EXPECT_EQ(c.world.tau, 2.0);
  EXPECT_EQ(c.world.image_size, 32);
}

TEST(CliConfig, UnknownKeysRejected) {
  EXPECT_THROW(CliConfig::from_json(nlohmann::json::parse(R"({"wrold": {}})")), ConfigError);
  EXPECT_THROW(CliConfig::from_json(nlohmann::json::parse(R"({"alignment": {"stepz": 1}})")), ConfigError);
  EXPECT_THROW(CliConfig::from_json(nlohmann::json::parse(R"({"service": {"port": "x"}})")), ConfigError);
}

TEST(CliConfig, RoundTrip) {
  CliConfig c;
  c.editing.templates = {"a photo of {}", "{}"};
  c.service.port = 9000;
  const CliConfig back = CliConfig::from_json(c.to_json());
  EXPECT_EQ(back.to_json(), c.to_json());
}

TEST(CliConfig, HashIgnoresServiceSection) {
  CliConfig a, b;
  b.service.port = 1234;
  b.service.shift_library = "/elsewhere.json";
  EXPECT_EQ(a.hash(), b.hash());
  b.alignment.lambda_ia = 0.5;
  EXPECT_NE(a.hash(), b.hash());
}

TEST(CliConfig, OverrideSeeds) {
  CliConfig c;
  c.override_seeds(99);
  EXPECT_EQ(c.alignment.seed, 99u);
  EXPECT_EQ(c.embedder.train.seed, 99u);
  EXPECT_EQ(c.evaluation.seed, 99u);
  EXPECT_EQ(c.editing.noisy_seed, 99u);
}

TEST(CliConfig, LoadErrors) {
  EXPECT_THROW(CliConfig::load("/nonexistent/spacealign.json"), ConfigError);
  const auto bad = write_temp("spacealign_bad_cfg.json", "{not json");
  EXPECT_THROW(CliConfig::load(bad), ConfigError);
  const auto good = write_temp("spacealign_good_cfg.json", R"({"evaluation": {"alpha": 0.5}})");
  EXPECT_EQ(CliConfig::load(good).evaluation.alpha, 0.5);
  std::filesystem::remove(bad);
  std::filesystem::remove(good);
}

TEST(EditingConfig, BankSelection) {
  EditingConfig e;
  EXPECT_EQ(e.bank().templates, PromptBank::stock().templates);
  e.templates = {"a drawing of {}"};
  const PromptBank custom = e.bank();
  EXPECT_EQ(custom.templates.size(), 1u);
  EXPECT_EQ(custom.id.rfind("custom-", 0), 0u);
  EXPECT_NE(custom.id, PromptBank::stock().id);
  e.templates = {"no slot"};
  EXPECT_THROW(e.validate(), ConfigError);
  e.templates.clear();
  e.inversion = "magic";
  EXPECT_THROW(e.validate(), ConfigError);
}

TEST(ServiceConfig, Validation) {
  ServiceConfig s;
  EXPECT_NO_THROW(s.validate());
  s.max_sessions = 0;
  EXPECT_THROW(s.validate(), ConfigError);
  s = ServiceConfig{};
  s.session_ttl_seconds = -1;
  EXPECT_THROW(s.validate(), ConfigError);
  s = ServiceConfig{};
  s.port = 70000;
  EXPECT_THROW(s.validate(), ConfigError);
}
