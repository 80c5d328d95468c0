// Acceptance runner: trains the desk-scale pipeline with the default config
// and prints one PASS/FAIL line per criterion. Exits non-zero if any fails.

#include "spacealign/evaluation.hpp"
#include "spacealign/hashing.hpp"
#include "spacealign/image_io.hpp"

#include "oracles.hpp"
#include "service_harness.hpp"

#include <spdlog/spdlog.h>

#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

using namespace spacealign;
using namespace spacealign::testing;
using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void verdict(bool ok, const std::string& name, const std::string& detail) {
  std::cout << (ok ? "PASS " : "FAIL ") << name << ": " << detail << std::endl;
  if (!ok) ++failures;
}

std::string num(double v, int digits = 4) {
  std::ostringstream ss;
  ss.precision(digits);
  ss << std::fixed << v;
  return ss.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void progress(const std::string& msg) { std::cerr << "[acceptance] " << msg << std::endl; }

// --- 1 ---------------------------------------------------------------------

void loss_unit_values() {
  const Image a(8, 8, 0.2), b(8, 8, 0.7);
  const Embedding e0 = Embedding::Unit(4, 0), e1 = Embedding::Unit(4, 1), e0n = -Embedding::Unit(4, 0);
  auto table = [&](const Embedding& eb) {
    return FileEmbedder(4, {{FileEmbedder::image_key(a), e0}, {FileEmbedder::image_key(b), eb}});
  };
  double worst = 0.0;
  auto check = [&](double got, double want) { worst = std::max(worst, std::abs(got - want)); };
  check(loss_sa(e0, a, table(e1)), 0.0);
  check(loss_sa(e0, b, table(e1)), 1.0);
  check(loss_sa(e0, b, table(e0n)), 2.0);
  check(loss_iai(a, a, table(e1)), 0.0);
  check(loss_iai(a, b, table(e1)), 1.0);
  check(loss_iai(a, b, table(e0n)), 2.0);

  Vec ws(3);
  ws << 0.5, -1.0, 2.0;
  const LatentCode same = broadcast(ws, 2);
  LatentCode off = same;
  off.rows()(1, 2) -= 3.0;
  bool exact = loss_ia(same, ws) == 0.0 && loss_ia(off, ws) == 9.0 && loss_ada(same, same) == 0.0 &&
               loss_ada(off, same) == 9.0;
  verdict(worst <= 1e-9 && exact, "loss-unit-values",
          "cosine losses worst |err| " + std::to_string(worst) + ", latent trivial cases " +
              (exact ? "exact" : "inexact"));
}

// --- 2 ---------------------------------------------------------------------

void gradient_checks() {
  const auto t0 = std::chrono::steady_clock::now();
  const double sa = sa_gradcheck(), iai = iai_gradcheck(), render = render_gradcheck();
  const double ia = ia_gradcheck(), ada = ada_gradcheck();
  const double ia_net = ia_network_gradcheck(), ada_net = ada_network_gradcheck();
  const double elapsed = seconds_since(t0);
  const bool ok = sa <= 1e-3 && iai <= 1e-3 && render <= 1e-3 && ia <= 1e-4 && ada <= 1e-4 && ia_net <= 1e-4 &&
                  ada_net <= 1e-4 && elapsed < 120.0;
  verdict(ok, "gradient-checks",
          "sa " + num(sa, 8) + " iai " + num(iai, 8) + " render " + num(render, 8) + " ia " + num(ia, 10) + " ada " +
              num(ada, 10) + " ia(F) " + num(ia_net, 8) + " ada(F) " + num(ada_net, 8) + " in " + num(elapsed, 1) +
              " s");
}

// --- 3 ---------------------------------------------------------------------

MiniEmbedder embedder_retrieval(const CliConfig& cfg, const World& world) {
  const auto t0 = std::chrono::steady_clock::now();
  EmbedderTrainResult r = train_embedder(world, cfg.embedder.model, cfg.embedder.train);
  const double elapsed = seconds_since(t0);
  // Held-out batches drawn with a seed the training loop never uses.
  const auto held = distinct_caption_batches(AttrDistribution::uniform, 32, 64, derive_seed(cfg.evaluation.seed, 101));
  const RetrievalAccuracy acc = retrieval_accuracy(r.embedder, held, world);
  const bool ok = acc.image_to_text >= 0.90 && acc.text_to_image >= 0.90 && r.steps <= 20000 && elapsed <= 900.0;
  verdict(ok, "embedder-retrieval",
          "held-out 32x64 i2t " + num(acc.image_to_text) + " t2i " + num(acc.text_to_image) + " after " +
              std::to_string(r.steps) + " steps in " + num(elapsed, 1) + " s");
  return std::move(r.embedder);
}

// --- 11 --------------------------------------------------------------------

struct CliResult {
  int code = -1;
  std::string out;
};

CliResult run_cli(const std::string& args, const fs::path& dir) {
  const fs::path out = dir / "cli_stdout.txt";
  const std::string cmd = std::string(SPACEALIGN_CLI) + " " + args + " >" + out.string() + " 2>/dev/null";
  const int status = std::system(cmd.c_str());
  std::ifstream in(out);
  std::stringstream ss;
  ss << in.rdbuf();
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, ss.str()};
}

void service_check(const CliConfig& cfg, const World& world, const MiniEmbedder& embedder,
                   const AlignmentCheckpoint& ckpt, const fs::path& dir) {
  ShiftLibrary lib;
  for (const auto& s : stock_shifts()) {
    SemanticShift shift = extract_shift(ckpt.network, embedder, cfg.editing.bank(), s.neutral, s.attr,
                                        ckpt.content_hash());
    shift.config_hash = ckpt.config_hash;
    lib.add(s.name, shift);
  }
  const fs::path lib_path = dir / "shifts.json";
  lib.save_as(lib_path);

  RunningService running(cfg, embedder, ckpt, lib);
  auto client = running.client();
  auto post = [&](const std::string& path, const json& body) {
    auto r = client.Post(path, body.dump(), "application/json");
    if (!r) throw std::runtime_error("request to " + path + " failed");
    return std::make_pair(r->status, json::parse(r->body));
  };

  // 100 sequential edits over ten sessions, cycling shifts and slider values.
  std::vector<double> latencies;
  const auto names = lib.shifts();
  std::vector<std::string> ids;
  for (int s = 0; s < 10; ++s) {
    const auto [status, body] = post("/v1/sessions", {{"sample_seed", 1000 + s}});
    if (status != 201) throw std::runtime_error("session create failed: " + body.dump());
    ids.push_back(body["session_id"]);
  }
  int errors = 0;
  auto shift_it = names.begin();
  for (int i = 0; i < 100; ++i) {
    if (shift_it == names.end()) shift_it = names.begin();
    const double alpha = -2.0 + 0.25 * (i % 17);
    const auto t0 = std::chrono::steady_clock::now();
    const auto [status, body] = post("/v1/sessions/" + ids[static_cast<std::size_t>(i % 10)] + "/edit",
                                     {{"shift", shift_it->first}, {"alpha", alpha}});
    latencies.push_back(1000.0 * seconds_since(t0));
    if (status != 200) ++errors;
    ++shift_it;
  }
  std::sort(latencies.begin(), latencies.end());
  const double p95 = latencies[94];

  // Alpha = 0 through the service against the CLI reconstruction of the same PNG.
  const fs::path png = dir / "probe.png";
  write_png(png, world.render(sample_attrs(AttrDistribution::real, 1, 4242)[0]));
  const auto bytes = read_file_bytes(png);
  const auto [s_status, s_body] = post("/v1/sessions", {{"image", base64_encode(bytes)}});
  const std::string id = s_body.value("session_id", "");
  post("/v1/sessions/" + id + "/invert", {{"backend", "canonical"}});
  const auto [e_status, e_body] = post("/v1/sessions/" + id + "/edit", {{"shift", "large"}, {"alpha", 0.0}});
  const std::string service_hash = e_body.value("image_hash", "");
  const CliResult cli = run_cli("edit --image " + png.string() + " --library " + lib_path.string() +
                                    " --shift large --alpha 0 --inversion canonical --out " +
                                    (dir / "cli_alpha0.png").string(),
                                dir);
  std::string cli_hash;
  if (cli.code == 0) cli_hash = json::parse(cli.out).value("image_hash", "");
  const bool ok = errors == 0 && p95 < 500.0 && !service_hash.empty() && service_hash == cli_hash;
  verdict(ok, "service",
          "edit p95 " + num(p95, 1) + " ms over 100 requests (" + std::to_string(errors) +
              " errors); alpha=0 hash service " + service_hash.substr(0, 12) + " cli " + cli_hash.substr(0, 12));
}

// --- 9 ---------------------------------------------------------------------

void exact_algebra(const World& world, const MiniEmbedder& embedder, const AlignmentCheckpoint& ckpt,
                   const PromptBank& bank) {
  const CanonicalInversion inv(world);
  std::vector<LatentCode> codes;
  for (const auto& a : sample_attrs(AttrDistribution::real, 100, 555)) codes.push_back(inv.invert(world.render(a)));
  int checks = 0, broken = 0;
  auto expect = [&](bool ok) {
    ++checks;
    broken += !ok;
  };
  for (const auto& stock : stock_shifts()) {
    const SemanticShift s = extract_shift(ckpt.network, embedder, bank, stock.neutral, stock.attr, "");
    const SemanticShift back = extract_shift(ckpt.network, embedder, bank, stock.attr, stock.neutral, "");
    expect(back.delta.rows() == Mat(-s.delta.rows()));
    for (const auto& w : codes) {
      expect(apply_edit(w, s, 0.0) == w);
      expect(apply_edit(apply_edit(w, s, 1.0), s, -1.0) == w);
      expect(apply_edit(apply_edit(w, s, -1.0), s, 1.0) == w);
      expect(apply_edit(apply_edit(w, s, 1.0), s, 1.0) == apply_edit(w, s, 2.0));
      expect(apply_edit(apply_edit(w, s, 2.0), s, -3.0) == apply_edit(w, s, -1.0));
      expect(apply_edit(w, back, 1.0) == apply_edit(w, s, -1.0));
    }
  }
  verdict(broken == 0, "exact-algebra", std::to_string(checks - broken) + "/" + std::to_string(checks) +
                                            " bit-exact identities hold over 8 shifts x 100 codes");
}

}  // namespace

int main() {
  spdlog::set_level(spdlog::level::warn);
  const fs::path dir = fs::current_path() / "acceptance_artifacts";
  fs::create_directories(dir);
  const CliConfig cfg;
  const World world(cfg.world);
  const auto t_all = std::chrono::steady_clock::now();

  progress("loss unit values and gradient checks");
  loss_unit_values();
  gradient_checks();

  progress("training the embedder");
  const MiniEmbedder embedder = embedder_retrieval(cfg, world);
  const Checkpoint emb_ckpt = embedder.to_checkpoint({{"config_hash", cfg.hash()}});
  save_checkpoint(dir / "embedder.ckpt", emb_ckpt);

  progress("alignment stage 1");
  const NoisyInversion noisy(world, cfg.editing.noisy_seed);
  AlignmentCheckpoint c1 = train_stage_align(initial_alignment(world, embedder, cfg.alignment, emb_ckpt.content_hash()),
                                             world, embedder, cfg.alignment);
  progress("alignment stage 2");
  AlignmentCheckpoint c2 = train_stage_indomain(c1, world, embedder, cfg.alignment);
  progress("alignment stage 3");
  AlignmentCheckpoint c3 = train_stage_adapt(c2, world, embedder, noisy, cfg.alignment);
  for (auto* c : {&c1, &c2, &c3}) c->config_hash = cfg.hash();
  save_alignment(dir / "sa.ckpt", c1);
  save_alignment(dir / "indomain.ckpt", c2);
  save_alignment(dir / "adapt.ckpt", c3);

  progress("evaluation report");
  ReportInputs in{&world, &embedder, {{"sa", &c1}, {"indomain", &c2}, {"adapt", &c3}}};
  in.bank = cfg.editing.bank();
  in.noisy_seed = cfg.editing.noisy_seed;
  const EvalReport report = build_report(in, cfg.evaluation);
  std::ofstream(dir / "report.json") << report.json.dump(1) << '\n';
  const json& j = report.json;

  const json& st = j["stages"];
  const double r1 = st[0]["reconstruction_error"], r2 = st[1]["reconstruction_error"], r3 = st[2]["reconstruction_error"];
  verdict(r1 <= 0.12 && r3 <= 0.10, "alignment-reconstruction",
          "mean abs attribute error " + num(r1) + " after stage 1, " + num(r3) + " after all stages (" +
              std::to_string(cfg.evaluation.reconstruction_images) + " images)");

  const double d1 = st[0]["indomain_distance"], d2 = st[1]["indomain_distance"];
  const double drop = (d1 - d2) / d1;
  verdict(drop >= 0.30 && r2 - r1 <= 0.02, "indomain-adjustment",
          "distance " + num(d1) + " -> " + num(d2) + " (" + num(100 * drop, 1) + "% drop), reconstruction " + num(r1) +
              " -> " + num(r2));

  bool adapt_ok = true, quality_ok = true;
  std::string adapt_detail, quality_detail;
  double agreement = 0.0;
  for (const auto& [name, s] : j["shifts"].items()) {
    const double pre = s["noisy_pre"]["accuracy"], post = s["noisy_post"]["accuracy"];
    adapt_ok = adapt_ok && post > pre;
    adapt_detail += " " + name + " " + num(pre, 2) + "->" + num(post, 2);
    const double acc = s["canonical"]["accuracy"], pres = s["canonical"]["preservation"];
    quality_ok = quality_ok && acc >= 0.90 && pres >= 0.85;
    quality_detail += " " + name + " " + num(acc, 2) + "/" + num(pres, 3);
    agreement += s["oracle_agreement"].get<double>();
  }
  agreement /= static_cast<double>(j["shifts"].size());
  verdict(adapt_ok, "adaptation", "noisy-inversion accuracy pre->post:" + adapt_detail);
  verdict(quality_ok, "edit-quality", "accuracy/preservation at alpha 1 over " +
                                          std::to_string(cfg.evaluation.holdout_images) + " images:" + quality_detail);
  std::string agree_detail;
  for (const auto& [name, s] : j["shifts"].items()) agree_detail += " " + name + " " + num(s["oracle_agreement"], 2);
  verdict(agreement >= 0.8, "oracle-agreement", "mean cosine " + num(agreement) + ":" + agree_detail);

  exact_algebra(world, embedder, c3, cfg.editing.bank());

  const json& viz = j["visualization"];
  const double sep = viz["separation"];
  const int inside = viz["probes_inside"], total = viz["probes_total"];
  verdict(sep >= 3.0 && inside == total && total == 10, "space-visualization",
          "separation " + num(sep, 2) + "x within-cluster radius, " + std::to_string(inside) + "/" +
              std::to_string(total) + " probes inside their hull");

  progress("service");
  try {
    service_check(cfg, world, embedder, c3, dir);
  } catch (const std::exception& e) {
    verdict(false, "service", e.what());
  }

  std::cout << (failures == 0 ? "ALL PASS" : std::to_string(failures) + " FAILED") << " (" +
                                                                                   num(seconds_since(t_all), 0) + " s)"
            << std::endl;
  return failures == 0 ? 0 : 1;
}
