// spacealign: command-line front end for the whole pipeline.

#include "spacealign/alignment.hpp"
#include "spacealign/caption.hpp"
#include "spacealign/config.hpp"
#include "spacealign/editing.hpp"
#include "spacealign/evaluation.hpp"
#include "spacealign/generator.hpp"
#include "spacealign/hashing.hpp"
#include "spacealign/image_io.hpp"
#include "spacealign/rng.hpp"
#include "spacealign/service.hpp"

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

using namespace spacealign;
using json = nlohmann::json;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitConfig = 3;
constexpr int kExitData = 4;
constexpr int kExitDivergence = 5;

const char* const kPngConfigKey = "spacealign:config_hash";

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  bool verify = false;
  bool verbose = false;
};

Options opts;

CliConfig load_config() {
  std::string path = opts.config_path;
  if (path.empty()) {
    if (const char* env = std::getenv("SPACEALIGN_CONFIG")) path = env;
  }
  CliConfig cfg = path.empty() ? CliConfig{} : CliConfig::load(path);
  if (opts.seed) cfg.override_seeds(*opts.seed);
  cfg.validate();
  return cfg;
}

// With --verify, an input artifact must carry the current config hash.
void check_hash(const std::string& what, const std::string& stored, const CliConfig& cfg) {
  if (!opts.verify) return;
  if (stored != cfg.hash()) {
    throw DataError(what + " was produced by config " + (stored.empty() ? "<none>" : stored.substr(0, 12)) +
                    ", current config is " + cfg.hash().substr(0, 12));
  }
}

struct LoadedEmbedder {
  MiniEmbedder model;
  std::string hash;
};

LoadedEmbedder load_embedder(const std::string& path, const CliConfig& cfg) {
  const Checkpoint ckpt = load_checkpoint(path);
  check_hash(path, ckpt.header.value("config_hash", ""), cfg);
  return {MiniEmbedder::from_checkpoint(ckpt), ckpt.content_hash()};
}

AlignmentCheckpoint load_alignment_checked(const std::string& path, const CliConfig& cfg) {
  AlignmentCheckpoint a = load_alignment(path);
  check_hash(path, a.config_hash, cfg);
  return a;
}

std::unique_ptr<InversionBackend> make_inversion(const std::string& name, const World& world, const CliConfig& cfg) {
  if (name == "canonical") return std::make_unique<CanonicalInversion>(world);
  if (name == "noisy") return std::make_unique<NoisyInversion>(world, cfg.editing.noisy_seed);
  throw ConfigError("inversion must be \"canonical\" or \"noisy\", got \"" + name + "\"");
}

void write_json_file(const std::string& path, const json& j) {
  const std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p);
  if (!out) throw DataError("cannot write " + path);
  out << j.dump(1) << '\n';
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DataError(path + ": " + e.what());
  }
}

AttributeVector parse_attrs(const std::string& text) {
  AttributeVector a;
  std::stringstream ss(text);
  std::string item;
  std::size_t i = 0;
  while (std::getline(ss, item, ',')) {
    if (i >= kNumAttributes) throw ContractError("--attrs takes exactly 8 comma-separated values");
    try {
      a[i++] = std::stod(item);
    } catch (const std::exception&) {
      throw ContractError("--attrs: '" + item + "' is not a number");
    }
  }
  if (i != kNumAttributes) throw ContractError("--attrs takes exactly 8 comma-separated values");
  for (std::size_t j = 0; j < kNumAttributes; ++j) {
    if (!(a[j] >= 0.0 && a[j] <= 1.0)) throw ContractError("--attrs values must lie in [0, 1]");
  }
  return a;
}

json attrs_json(const AttributeVector& a) {
  json j = json::object();
  for (std::size_t i = 0; i < kNumAttributes; ++i) j[std::string(attribute_name(i))] = a[i];
  return j;
}

void print_json(const json& j) { std::cout << j.dump(1) << std::endl; }

// ---------------------------------------------------------------------------
// world

void world_render(const std::string& attrs, const std::string& out) {
  const CliConfig cfg = load_config();
  const World world(cfg.world);
  const AttributeVector a = parse_attrs(attrs);
  write_png(out, world.render(a), {{kPngConfigKey, cfg.hash()}});
  print_json({{"out", out}, {"caption", caption(a).text}});
}

void world_sample(std::size_t n, const std::string& dist, const std::string& out_dir) {
  const CliConfig cfg = load_config();
  const World world(cfg.world);
  const auto attrs = sample_attrs(parse_distribution(dist), n, derive_seed(cfg.world.seed, 42));
  std::filesystem::create_directories(out_dir);
  std::ofstream index(std::filesystem::path(out_dir) / "samples.jsonl");
  if (!index) throw DataError("cannot write " + out_dir + "/samples.jsonl");
  for (std::size_t i = 0; i < attrs.size(); ++i) {
    std::ostringstream name;
    name << "sample_" << std::setw(5) << std::setfill('0') << i << ".png";
    const Image img = world.render(attrs[i]);
    write_png(std::filesystem::path(out_dir) / name.str(), img, {{kPngConfigKey, cfg.hash()}});
    index << json{{"file", name.str()},
                  {"attrs", attrs_json(attrs[i])},
                  {"caption", caption(attrs[i]).text},
                  {"image_hash", image_hash(img)},
                  {"config_hash", cfg.hash()}}
                 .dump()
          << '\n';
  }
  print_json({{"out", out_dir}, {"count", attrs.size()}});
}

// ---------------------------------------------------------------------------
// embedder

void embedder_train(const std::string& out, const std::string& log_path) {
  const CliConfig cfg = load_config();
  const World world(cfg.world);
  EmbedderTrainResult r = train_embedder(world, cfg.embedder.model, cfg.embedder.train);
  const Checkpoint ckpt = r.embedder.to_checkpoint({{"config_hash", cfg.hash()},
                                                    {"steps", r.steps},
                                                    {"retrieval_i2t", r.final_accuracy.image_to_text},
                                                    {"retrieval_t2i", r.final_accuracy.text_to_image},
                                                    {"below_target", r.below_target}});
  save_checkpoint(out, ckpt);
  if (!log_path.empty()) write_metric_log(log_path, r.log);
  if (r.below_target) {
    spdlog::warn("embedder stopped at {} steps below the {:.2f} retrieval target", r.steps,
                 cfg.embedder.train.target_accuracy);
  }
  print_json({{"out", out},
              {"checkpoint_hash", ckpt.content_hash()},
              {"steps", r.steps},
              {"retrieval", {{"image_to_text", r.final_accuracy.image_to_text},
                             {"text_to_image", r.final_accuracy.text_to_image}}},
              {"below_target", r.below_target}});
}

void embedder_eval(const std::string& path, std::size_t batches) {
  const CliConfig cfg = load_config();
  const World world(cfg.world);
  const LoadedEmbedder e = load_embedder(path, cfg);
  const auto held = distinct_caption_batches(parse_distribution(cfg.embedder.train.distribution), batches,
                                             static_cast<std::size_t>(cfg.embedder.train.batch_size),
                                             derive_seed(cfg.evaluation.seed, 1));
  const RetrievalAccuracy acc = retrieval_accuracy(e.model, held, world);
  print_json({{"checkpoint_hash", e.hash},
              {"batches", batches},
              {"batch_size", cfg.embedder.train.batch_size},
              {"image_to_text", acc.image_to_text},
              {"text_to_image", acc.text_to_image}});
}

// ---------------------------------------------------------------------------
// align

void align_train(const std::string& stage, const std::string& embedder_path, const std::string& in,
                 const std::string& out, bool force, const std::string& log_path) {
  const CliConfig cfg = load_config();
  const World world(cfg.world);
  const LoadedEmbedder e = load_embedder(embedder_path, cfg);
  AlignmentCheckpoint ckpt = in.empty() ? initial_alignment(world, e.model, cfg.alignment, e.hash)
                                        : load_alignment_checked(in, cfg);
  if (in.empty() && stage != "sa" && !force) {
    throw ContractError("stage '" + stage + "' needs --in with the previous stage's checkpoint (or --force)");
  }
  if (ckpt.embedder_hash != e.hash) throw DataError("alignment checkpoint was trained against a different embedder");
  if (stage == "sa") {
    ckpt = train_stage_align(std::move(ckpt), world, e.model, cfg.alignment);
  } else if (stage == "indomain") {
    ckpt = train_stage_indomain(std::move(ckpt), world, e.model, cfg.alignment, force);
  } else if (stage == "adapt") {
    const NoisyInversion noisy(world, cfg.editing.noisy_seed);
    ckpt = train_stage_adapt(std::move(ckpt), world, e.model, noisy, cfg.alignment, force);
  } else {
    throw ContractError("--stage must be sa, indomain or adapt");
  }
  ckpt.config_hash = cfg.hash();
  save_alignment(out, ckpt);
  if (!log_path.empty()) write_metric_log(log_path, ckpt.log);
  print_json({{"out", out}, {"stage", ckpt.stage()}, {"history", ckpt.stage_history},
              {"checkpoint_hash", ckpt.content_hash()}});
}

// ---------------------------------------------------------------------------
// shift

SemanticShift extract_for(const AlignmentCheckpoint& a, const MiniEmbedder& embedder, const CliConfig& cfg,
                          const std::string& neutral, const std::string& attr) {
  SemanticShift s = extract_shift(a.network, embedder, cfg.editing.bank(), neutral, attr, a.content_hash());
  s.config_hash = a.config_hash;
  s.default_alpha = cfg.editing.default_alpha;
  return s;
}

void shift_extract(const std::string& embedder_path, const std::string& alignment_path, const std::string& name,
                   const std::string& neutral, const std::string& attr, bool stock, const std::string& out,
                   bool replace) {
  const CliConfig cfg = load_config();
  const LoadedEmbedder e = load_embedder(embedder_path, cfg);
  const AlignmentCheckpoint a = load_alignment_checked(alignment_path, cfg);
  ShiftLibrary lib = ShiftLibrary::open(out);
  json added = json::array();
  if (stock) {
    for (const auto& s : stock_shifts()) {
      lib.add(s.name, extract_for(a, e.model, cfg, s.neutral, s.attr), replace);
      added.push_back(s.name);
    }
  } else {
    if (name.empty() || attr.empty()) throw ContractError("shift extract needs --name and --attr (or --stock)");
    lib.add(name, extract_for(a, e.model, cfg, neutral, attr), replace);
    added.push_back(name);
  }
  lib.save_as(out);
  print_json({{"out", out}, {"added", added}, {"checkpoint_hash", a.content_hash()}});
}

// ---------------------------------------------------------------------------
// edit

void edit(const std::string& image_path, const std::string& library_path, const std::string& shift_name,
          std::optional<double> alpha, const std::string& inversion_name, const std::string& out,
          const std::string& code_out) {
  const CliConfig cfg = load_config();
  const World world(cfg.world);
  const ToyGenerator generator(world);
  const auto inversion = make_inversion(inversion_name.empty() ? cfg.editing.inversion : inversion_name, world, cfg);
  const ShiftLibrary lib = ShiftLibrary::open(library_path);
  const SemanticShift& shift = lib.get(shift_name);
  check_hash(library_path + ":" + shift_name, shift.config_hash, cfg);
  const double a = alpha.value_or(shift.default_alpha);
  if (!(std::abs(a) <= kMaxAlpha)) throw ContractError("--alpha must lie in [-3, 3]");
  const Image src = read_png(image_path);
  world.check_image(src);
  const EditResult r = edit_image(src, *inversion, generator, shift, a);
  write_png(out, r.image, {{kPngConfigKey, cfg.hash()}});
  if (!code_out.empty()) write_latents(code_out, {r.code});
  print_json({{"out", out},
              {"image_hash", image_hash(r.image)},
              {"code_hash", latent_hash(r.code)},
              {"alpha", a},
              {"shift", shift_name},
              {"inversion", inversion->name()}});
}

// ---------------------------------------------------------------------------
// eval

void eval_report(const std::string& embedder_path, const std::vector<std::string>& stage_paths,
                 const std::string& out, const std::string& samples_path) {
  const CliConfig cfg = load_config();
  const World world(cfg.world);
  const LoadedEmbedder e = load_embedder(embedder_path, cfg);
  std::vector<AlignmentCheckpoint> ckpts;
  for (const auto& p : stage_paths) ckpts.push_back(load_alignment_checked(p, cfg));
  ReportInputs in;
  in.world = &world;
  in.embedder = &e.model;
  in.bank = cfg.editing.bank();
  in.noisy_seed = cfg.editing.noisy_seed;
  for (const auto& c : ckpts) in.stages.push_back({c.stage(), &c});
  EvalReport report = build_report(in, cfg.evaluation);
  report.json["config_hash"] = cfg.hash();
  if (!samples_path.empty()) {
    write_samples(samples_path, report.samples);
    report.json["samples_file"] = samples_path;
  }
  write_json_file(out, report.json);
  print_json({{"out", out}, {"samples", report.samples.size()}});
}

// ---------------------------------------------------------------------------
// viz

void viz_export(const std::string& embedder_path, const std::string& alignment_path, const std::string& out) {
  const CliConfig cfg = load_config();
  const World world(cfg.world);
  const LoadedEmbedder e = load_embedder(embedder_path, cfg);
  const AlignmentCheckpoint a = load_alignment_checked(alignment_path, cfg);
  const VisualizationResult viz = visualize_space(a.network, e.model, world, cfg.editing.bank(),
                                                  cfg.evaluation.cluster_size, derive_seed(cfg.evaluation.seed, 6));
  const int layers = world.layers(), dim = world.layer_dim();
  std::ofstream f(out);
  if (!f) throw DataError("cannot write " + out);
  auto emit = [&](const Mat& rows, Eigen::Index i, const std::string& kind, int label, const std::string& text) {
    json j = latent_to_json(latent_from_row(rows, i, layers, dim));
    j["kind"] = kind;
    j["label"] = label;
    if (!text.empty()) j["text"] = text;
    j["config_hash"] = cfg.hash();
    f << j.dump() << '\n';
  };
  for (Eigen::Index i = 0; i < viz.image_codes.rows(); ++i) {
    emit(viz.image_codes, i, "image", viz.labels[static_cast<std::size_t>(i)], "");
  }
  for (Eigen::Index i = 0; i < viz.text_codes.rows(); ++i) {
    const auto t = static_cast<std::size_t>(i);
    emit(viz.text_codes, i, "text", viz.probe_labels[t], viz.probe_texts[t]);
  }
  print_json({{"out", out}, {"separation", viz.separation}, {"probes_inside", viz.probes_inside},
              {"probes_total", viz.probe_texts.size()}});
}

void viz_project(const std::string& in, const std::string& out) {
  const CliConfig cfg = load_config();
  std::ifstream f(in);
  if (!f) throw DataError("cannot open " + in);
  struct Row {
    LatentCode code;
    std::string kind, text;
    int label;
  };
  std::vector<Row> rows;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      check_hash(in, j.value("config_hash", ""), cfg);
      rows.push_back({latent_from_json(j), j.value("kind", "image"), j.value("text", ""), j.value("label", -1)});
    } catch (const json::exception& e) {
      throw DataError(in + ": " + e.what());
    }
  }
  if (rows.empty()) throw DataError(in + " holds no codes");
  std::vector<LatentCode> image_codes, all_codes;
  std::vector<int> image_labels;
  for (const auto& r : rows) {
    all_codes.push_back(r.code);
    if (r.kind == "image") {
      image_codes.push_back(r.code);
      image_labels.push_back(r.label);
    }
  }
  // The projection is fitted on image codes only; text codes are placed into it.
  const Projection p = project_2d(flatten_codes(image_codes.empty() ? all_codes : image_codes));
  const Mat points = apply_projection(p, flatten_codes(all_codes));
  std::ofstream csv(out);
  if (!csv) throw DataError("cannot write " + out);
  csv << "# config_hash=" << cfg.hash() << '\n';
  csv << "kind,label,text,x,y\n" << std::setprecision(17);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    csv << rows[i].kind << ',' << rows[i].label << ",\"" << rows[i].text << "\"," << points(r, 0) << ','
        << points(r, 1) << '\n';
  }
  json summary{{"out", out}, {"rows", rows.size()}};
  bool two_labels = image_labels.size() >= 2;
  for (int l : image_labels) two_labels = two_labels && (l == 0 || l == 1);
  if (two_labels) summary["separation"] = cluster_separation(p.points, image_labels);
  print_json(summary);
}

// ---------------------------------------------------------------------------
// verify

void verify(const std::vector<std::string>& files) {
  const CliConfig cfg = load_config();
  const std::string want = cfg.hash();
  json results = json::array();
  bool ok = true;
  for (const auto& path : files) {
    std::string got;
    const std::string ext = std::filesystem::path(path).extension().string();
    if (ext == ".png") {
      const auto text = png_text(read_file_bytes(path));
      const auto it = text.find(kPngConfigKey);
      if (it != text.end()) got = it->second;
    } else if (ext == ".csv") {
      std::ifstream f(path);
      std::string line;
      std::getline(f, line);
      const std::string prefix = "# config_hash=";
      if (line.rfind(prefix, 0) == 0) got = line.substr(prefix.size());
    } else if (ext == ".json") {
      const json j = read_json_file(path);
      if (j.contains("config_hash")) {
        got = j["config_hash"];
      } else if (j.is_object() && !j.empty() && j.begin()->is_object()) {
        // Shift library: every entry must agree.
        got = j.begin()->value("config_hash", "");
        for (const auto& [name, entry] : j.items()) {
          if (entry.value("config_hash", "") != got) got = "<mixed>";
        }
      }
    } else if (ext == ".jsonl") {
      std::ifstream f(path);
      std::string line;
      while (std::getline(f, line)) {
        if (line.empty()) continue;
        const std::string h = json::parse(line).value("config_hash", "");
        got = got.empty() || got == h ? h : "<mixed>";
      }
    } else {
      const Checkpoint ckpt = load_checkpoint(path);
      got = ckpt.header.value("config_hash", "");
    }
    const bool match = got == want;
    ok = ok && match;
    results.push_back({{"file", path}, {"config_hash", got}, {"match", match}});
  }
  print_json({{"config_hash", want}, {"files", results}, {"ok", ok}});
  if (!ok) throw DataError("config hash mismatch");
}

// ---------------------------------------------------------------------------
// serve

Service* g_service = nullptr;

void serve(std::optional<int> port) {
  const CliConfig cfg = load_config();
  auto service = Service::from_config(cfg);
  const int bound = service->bind(port.value_or(cfg.service.port));
  g_service = service.get();
  std::signal(SIGINT, [](int) {
    if (g_service) g_service->stop();
  });
  std::signal(SIGTERM, [](int) {
    if (g_service) g_service->stop();
  });
  // One line on stdout so scripts can pick up the port.
  std::cout << json{{"listening", cfg.service.host + ":" + std::to_string(bound)},
                    {"checkpoint_hash", service->checkpoint_hash()}}
                   .dump()
            << std::endl;
  service->run();
  g_service = nullptr;
}

int report_error(int code, const std::string& kind, const std::string& message) {
  std::cerr << json{{"error", {{"code", kind}, {"message", message}}}, {"exit_code", code}}.dump() << std::endl;
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  auto logger = spdlog::stderr_logger_st("spacealign");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%H:%M:%S] [%l] %v");

  CLI::App app{"Text-driven latent editing on a procedural shape world"};
  app.require_subcommand(1);
  // Global options may also follow the subcommand.
  app.fallthrough();
  app.add_option("--config", opts.config_path, "Pipeline config JSON (default: $SPACEALIGN_CONFIG)");
  app.add_option("--seed", opts.seed, "Override every seed in the config");
  app.add_flag("--verify", opts.verify, "Require input artifacts to carry the current config hash");
  app.add_flag("-v,--verbose", opts.verbose, "Debug logging");

  std::function<void()> action;

  auto* world = app.add_subcommand("world", "Preview the shape world");
  world->require_subcommand(1);
  std::string attrs, out, dist = "real", out_dir;
  std::size_t n = 16;
  auto* render = world->add_subcommand("render", "Render one attribute vector");
  render->add_option("--attrs", attrs, "8 comma-separated values in [0,1]")->required();
  render->add_option("--out", out)->required();
  render->callback([&] { action = [&] { world_render(attrs, out); }; });
  auto* sample = world->add_subcommand("sample", "Render seeded samples");
  sample->add_option("--n", n)->check(CLI::PositiveNumber);
  sample->add_option("--dist", dist)->check(CLI::IsMember({"real", "uniform"}));
  sample->add_option("--out", out_dir)->required();
  sample->callback([&] { action = [&] { world_sample(n, dist, out_dir); }; });

  auto* emb = app.add_subcommand("embedder", "Train or evaluate the joint embedder");
  emb->require_subcommand(1);
  std::string ckpt, log_path;
  std::size_t batches = 8;
  auto* etrain = emb->add_subcommand("train", "Contrastive training");
  etrain->add_option("--out", out)->required();
  etrain->add_option("--log", log_path, "Metric log (JSON-lines)");
  etrain->callback([&] { action = [&] { embedder_train(out, log_path); }; });
  auto* eeval = emb->add_subcommand("eval", "Held-out retrieval accuracy");
  eeval->add_option("--ckpt", ckpt)->required();
  eeval->add_option("--batches", batches)->check(CLI::PositiveNumber);
  eeval->callback([&] { action = [&] { embedder_eval(ckpt, batches); }; });

  auto* align = app.add_subcommand("align", "Mapping-network training");
  align->require_subcommand(1);
  std::string stage, in, embedder_path;
  bool force = false;
  auto* atrain = align->add_subcommand("train", "Run one training stage");
  atrain->add_option("--stage", stage)->required()->check(CLI::IsMember({"sa", "indomain", "adapt"}));
  atrain->add_option("--embedder", embedder_path)->required();
  atrain->add_option("--in", in, "Previous stage's checkpoint");
  atrain->add_option("--out", out)->required();
  atrain->add_option("--log", log_path, "Metric log (JSON-lines)");
  atrain->add_flag("--force", force, "Skip the stage-order check");
  atrain->callback([&] { action = [&] { align_train(stage, embedder_path, in, out, force, log_path); }; });

  auto* shift = app.add_subcommand("shift", "Semantic shift library");
  shift->require_subcommand(1);
  std::string alignment_path, name, neutral = kNeutralText, attr;
  bool stock = false, replace = false;
  auto* extract = shift->add_subcommand("extract", "Extract a shift from a text pair");
  extract->add_option("--embedder", embedder_path)->required();
  extract->add_option("--alignment", alignment_path)->required();
  extract->add_option("--name", name);
  extract->add_option("--neutral", neutral);
  extract->add_option("--attr", attr);
  extract->add_flag("--stock", stock, "Extract the eight stock shifts");
  extract->add_flag("--replace", replace, "Overwrite existing names");
  extract->add_option("--out", out, "Shift library JSON")->required();
  extract->callback([&] {
    action = [&] { shift_extract(embedder_path, alignment_path, name, neutral, attr, stock, out, replace); };
  });

  std::string image, library, inversion, code_out;
  std::optional<double> alpha;
  auto* ed = app.add_subcommand("edit", "Apply a shift to an image");
  ed->add_option("--image", image)->required();
  ed->add_option("--library", library, "Shift library JSON")->required();
  ed->add_option("--shift", name)->required();
  ed->add_option("--alpha", alpha);
  ed->add_option("--inversion", inversion)->check(CLI::IsMember({"canonical", "noisy"}));
  ed->add_option("--out", out)->required();
  ed->add_option("--code-out", code_out, "Write the edited latent (JSON-lines)");
  ed->callback([&] { action = [&] { edit(image, library, name, alpha, inversion, out, code_out); }; });

  auto* ev = app.add_subcommand("eval", "Evaluation");
  ev->require_subcommand(1);
  std::vector<std::string> stage_paths;
  std::string samples_path;
  auto* report = ev->add_subcommand("report", "Full evaluation report");
  report->add_option("--embedder", embedder_path)->required();
  report->add_option("--stages", stage_paths, "Alignment checkpoints in training order")->required();
  report->add_option("--samples", samples_path, "Per-sample log (JSON-lines)");
  report->add_option("--out", out)->required();
  report->callback([&] { action = [&] { eval_report(embedder_path, stage_paths, out, samples_path); }; });

  auto* viz = app.add_subcommand("viz", "Latent-space visualization");
  viz->require_subcommand(1);
  auto* vexport = viz->add_subcommand("export", "Two-cluster image codes and probe text codes");
  vexport->add_option("--embedder", embedder_path)->required();
  vexport->add_option("--alignment", alignment_path)->required();
  vexport->add_option("--out", out)->required();
  vexport->callback([&] { action = [&] { viz_export(embedder_path, alignment_path, out); }; });
  auto* project = viz->add_subcommand("project", "PCA projection to CSV");
  project->add_option("--in", in)->required();
  project->add_option("--out", out)->required();
  project->callback([&] { action = [&] { viz_project(in, out); }; });

  std::vector<std::string> files;
  auto* ver = app.add_subcommand("verify", "Check artifacts against the config hash");
  ver->add_option("files", files)->required();
  ver->callback([&] { action = [&] { verify(files); }; });

  std::optional<int> port;
  auto* srv = app.add_subcommand("serve", "Run the HTTP service");
  srv->add_option("--port", port, "Overrides service.port")->check(CLI::Range(0, 65535));
  srv->callback([&] { action = [&] { serve(port); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report_error(kExitUsage, "usage", e.what());
  }
  spdlog::set_level(opts.verbose ? spdlog::level::debug : spdlog::level::info);

  try {
    action();
  } catch (const ConfigError& e) {
    return report_error(kExitConfig, "config", e.what());
  } catch (const DivergenceError& e) {
    return report_error(kExitDivergence, "divergence", e.what());
  } catch (const ParseError& e) {
    return report_error(kExitData, "parse", std::string(e.what()) + " (token \"" + e.token() + "\")");
  } catch (const UndetectedError& e) {
    return report_error(kExitData, "undetected", e.what());
  } catch (const ContractError& e) {
    return report_error(kExitUsage, "usage", e.what());
  } catch (const DataError& e) {
    return report_error(kExitData, "data", e.what());
  } catch (const std::filesystem::filesystem_error& e) {
    return report_error(kExitData, "data", e.what());
  }
  return 0;
}
