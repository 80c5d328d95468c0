#include "spacealign/alignment.hpp"

#include "spacealign/hashing.hpp"
#include "spacealign/rng.hpp"

#include <spdlog/spdlog.h>

#include <fstream>
#include <map>
#include <set>

namespace spacealign {

// ---------------------------------------------------------------------------
// Mapping network

MappingNetwork::MappingNetwork(int embed_dim, int layers, int layer_dim, int hidden, std::uint64_t seed)
    : embed_dim_(embed_dim), layers_(layers), layer_dim_(layer_dim), hidden_(hidden) {
  require(embed_dim > 0 && layers > 0 && layer_dim > 0 && hidden > 0, "mapping network: dimensions must be positive");
  Rng rng(seed);
  for (int l = 0; l < layers; ++l) {
    const std::string prefix = "head" + std::to_string(l);
    Head h;
    h.fc1 = nn::Dense::create(params_, prefix + ".fc1", embed_dim, hidden, rng);
    h.fc2 = nn::Dense::create(params_, prefix + ".fc2", hidden, hidden, rng);
    h.fc3 = nn::Dense::create(params_, prefix + ".fc3", hidden, layer_dim, rng);
    heads_.push_back(h);
  }
}

Mat MappingNetwork::forward(const Mat& embeddings, Tape* tape) const {
  if (embeddings.cols() != embed_dim_) {
    throw ContractError("map_to_latent: expected embedding dim " + std::to_string(embed_dim_) + ", got " +
                        std::to_string(embeddings.cols()));
  }
  Mat out(embeddings.rows(), static_cast<Eigen::Index>(layers_) * layer_dim_);
  if (tape) {
    tape->input = embeddings;
    tape->hidden1.assign(heads_.size(), Mat());
    tape->hidden2.assign(heads_.size(), Mat());
  }
  for (std::size_t l = 0; l < heads_.size(); ++l) {
    const Head& h = heads_[l];
    Mat h1 = nn::tanh(h.fc1.forward(params_, embeddings));
    Mat h2 = nn::tanh(h.fc2.forward(params_, h1));
    out.middleCols(static_cast<Eigen::Index>(l) * layer_dim_, layer_dim_) = h.fc3.forward(params_, h2);
    if (tape) {
      tape->hidden1[l] = std::move(h1);
      tape->hidden2[l] = std::move(h2);
    }
  }
  return out;
}

void MappingNetwork::backward(const Tape& tape, const Mat& d_out, nn::ParameterSet* grads) const {
  for (std::size_t l = 0; l < heads_.size(); ++l) {
    const Head& h = heads_[l];
    const Mat d_slice = d_out.middleCols(static_cast<Eigen::Index>(l) * layer_dim_, layer_dim_);
    const Mat d_h2 = h.fc3.backward(params_, tape.hidden2[l], d_slice, grads);
    const Mat d_a2 = nn::tanh_backward(tape.hidden2[l], d_h2);
    const Mat d_h1 = h.fc2.backward(params_, tape.hidden1[l], d_a2, grads);
    const Mat d_a1 = nn::tanh_backward(tape.hidden1[l], d_h1);
    h.fc1.backward(params_, tape.input, d_a1, grads);
  }
}

LatentCode MappingNetwork::map(const Embedding& e) const {
  if (e.size() != embed_dim_) {
    throw ContractError("map_to_latent: expected embedding dim " + std::to_string(embed_dim_) + ", got " +
                        std::to_string(e.size()));
  }
  const Mat out = forward(e.transpose(), nullptr);
  return latent_from_row(out, 0, layers_, layer_dim_);
}

LatentCode latent_from_row(const Mat& batch, Eigen::Index row, int layers, int layer_dim) {
  LatentCode w(layers, layer_dim);
  w.rows() = Eigen::Map<const Mat>(batch.row(row).data(), layers, layer_dim);
  return w;
}

// ---------------------------------------------------------------------------
// Losses

double cosine_distance(const Vec& a, const Vec& b, Vec* grad_a, Vec* grad_b) {
  require(a.size() == b.size(), "cosine_distance: size mismatch");
  const double na = a.norm();
  const double nb = b.norm();
  require(na > 0.0 && nb > 0.0, "cosine_distance: zero vector");
  const double cos = std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
  if (grad_a) *grad_a = -(b / (na * nb) - cos * a / (na * na));
  if (grad_b) *grad_b = -(a / (na * nb) - cos * b / (nb * nb));
  return 1.0 - cos;
}

double loss_sa(const Embedding& e_orig, const Image& img_star, const EmbedderBackend& embedder) {
  return cosine_distance(e_orig, embedder.embed_image(img_star));
}

double loss_ia(const LatentCode& w_star, const LayerCode& w_s, LatentCode* grad) {
  if (w_star.dim() != w_s.size()) throw ContractError("loss_ia: layer code length differs from latent width");
  const Mat diff = w_star.rows().rowwise() - w_s.transpose();
  if (grad) *grad = LatentCode(Mat(2.0 * diff));
  return diff.squaredNorm();
}

double loss_iai(const Image& img_s, const Image& img_s_star, const EmbedderBackend& embedder) {
  return cosine_distance(embedder.embed_image(img_s), embedder.embed_image(img_s_star));
}

double loss_ada(const LatentCode& w_star, const LatentCode& w_e, LatentCode* grad) {
  if (!w_star.same_shape(w_e)) throw ContractError("loss_ada: latent shapes differ");
  const Mat diff = w_star.rows() - w_e.rows();
  if (grad) *grad = LatentCode(Mat(2.0 * diff));
  return diff.squaredNorm();
}

// ---------------------------------------------------------------------------
// Config

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("alignment.learning_rate must be positive");
  if (steps_sa <= 0 || steps_indomain <= 0 || steps_adapt <= 0) throw ConfigError("alignment steps must be positive");
  if (batch_size <= 0) throw ConfigError("alignment.batch_size must be positive");
  if (lambda_sa < 0 || lambda_ia < 0 || lambda_iai < 0 || lambda_ada < 0) {
    throw ConfigError("alignment loss weights must be non-negative");
  }
  if (hidden <= 0 || !(ws_sigma > 0.0) || log_every <= 0 || !(divergence_factor > 1.0)) {
    throw ConfigError("alignment: hidden, ws_sigma, log_every must be positive and divergence_factor > 1");
  }
  parse_distribution(distribution);
}

std::string TrainConfig::hash() const {
  nlohmann::json j = *this;
  return sha256_hex(j.dump());
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"learning_rate", c.learning_rate},
                     {"beta1", c.beta1},
                     {"beta2", c.beta2},
                     {"milestones", c.milestones},
                     {"decay", c.decay},
                     {"steps_sa", c.steps_sa},
                     {"steps_indomain", c.steps_indomain},
                     {"steps_adapt", c.steps_adapt},
                     {"batch_size", c.batch_size},
                     {"lambda_sa", c.lambda_sa},
                     {"lambda_ia", c.lambda_ia},
                     {"lambda_iai", c.lambda_iai},
                     {"lambda_ada", c.lambda_ada},
                     {"interleave_sa", c.interleave_sa},
                     {"hidden", c.hidden},
                     {"ws_sigma", c.ws_sigma},
                     {"distribution", c.distribution},
                     {"log_every", c.log_every},
                     {"divergence_factor", c.divergence_factor},
                     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  if (!j.is_object()) throw ConfigError("alignment config must be an object");
  const nlohmann::json defaults = TrainConfig{};
  for (const auto& [key, value] : j.items()) {
    if (!defaults.contains(key)) throw ConfigError("unknown alignment config key '" + key + "'");
  }
  nlohmann::json merged = defaults;
  merged.update(j);
  try {
    c.learning_rate = merged["learning_rate"].get<double>();
    c.beta1 = merged["beta1"].get<double>();
    c.beta2 = merged["beta2"].get<double>();
    c.milestones = merged["milestones"].get<std::vector<double>>();
    c.decay = merged["decay"].get<double>();
    c.steps_sa = merged["steps_sa"].get<int>();
    c.steps_indomain = merged["steps_indomain"].get<int>();
    c.steps_adapt = merged["steps_adapt"].get<int>();
    c.batch_size = merged["batch_size"].get<int>();
    c.lambda_sa = merged["lambda_sa"].get<double>();
    c.lambda_ia = merged["lambda_ia"].get<double>();
    c.lambda_iai = merged["lambda_iai"].get<double>();
    c.lambda_ada = merged["lambda_ada"].get<double>();
    c.interleave_sa = merged["interleave_sa"].get<bool>();
    c.hidden = merged["hidden"].get<int>();
    c.ws_sigma = merged["ws_sigma"].get<double>();
    c.distribution = merged["distribution"].get<std::string>();
    c.log_every = merged["log_every"].get<int>();
    c.divergence_factor = merged["divergence_factor"].get<double>();
    c.seed = merged["seed"].get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("alignment config: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Checkpoint

const std::string& AlignmentCheckpoint::stage() const {
  static const std::string none = "init";
  return stage_history.empty() ? none : stage_history.back();
}

Checkpoint AlignmentCheckpoint::to_checkpoint() const {
  Checkpoint ckpt;
  ckpt.params = network.params();
  ckpt.header = nlohmann::json{{"kind", "alignment"},
                               {"embed_dim", network.embed_dim()},
                               {"layers", network.layers()},
                               {"layer_dim", network.layer_dim()},
                               {"hidden", network.hidden()},
                               {"stage_history", stage_history},
                               {"config_hash", config_hash},
                               {"embedder_hash", embedder_hash},
                               {"metrics", log}};
  ckpt.header["param_hash"] = ckpt.content_hash();
  return ckpt;
}

AlignmentCheckpoint AlignmentCheckpoint::from_checkpoint(const Checkpoint& ckpt) {
  const auto& h = ckpt.header;
  if (h.value("kind", "") != "alignment") throw DataError("checkpoint is not an alignment checkpoint");
  if (h.value("param_hash", "") != ckpt.content_hash()) throw DataError("alignment checkpoint: parameter hash mismatch");
  AlignmentCheckpoint out{MappingNetwork(h.at("embed_dim").get<int>(), h.at("layers").get<int>(),
                                         h.at("layer_dim").get<int>(), h.at("hidden").get<int>(), 0),
                          h.at("stage_history").get<std::vector<std::string>>(),
                          h.at("config_hash").get<std::string>(),
                          h.value("embedder_hash", ""),
                          h.at("metrics").get<std::vector<MetricRecord>>()};
  nn::ParameterSet& p = out.network.params();
  if (p.size() != ckpt.params.size()) throw DataError("alignment checkpoint: block count mismatch");
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p.names[i] != ckpt.params.names[i] || p[i].rows() != ckpt.params[i].rows() ||
        p[i].cols() != ckpt.params[i].cols()) {
      throw DataError("alignment checkpoint: block '" + ckpt.params.names[i] + "' does not match the architecture");
    }
    p[i] = ckpt.params[i];
  }
  return out;
}

void save_alignment(const std::filesystem::path& path, const AlignmentCheckpoint& ckpt) {
  save_checkpoint(path, ckpt.to_checkpoint());
}

AlignmentCheckpoint load_alignment(const std::filesystem::path& path) {
  return AlignmentCheckpoint::from_checkpoint(load_checkpoint(path));
}

void write_metric_log(const std::filesystem::path& path, const std::vector<MetricRecord>& log) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& r : log) out << nlohmann::json(r).dump() << '\n';
}

std::vector<MetricRecord> read_metric_log(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<MetricRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      out.push_back(nlohmann::json::parse(line).get<MetricRecord>());
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path.string() + ": " + e.what());
    }
  }
  return out;
}

AlignmentCheckpoint initial_alignment(const World& world, const MiniEmbedder& embedder, const TrainConfig& cfg,
                                      const std::string& embedder_hash) {
  cfg.validate();
  if (embedder.dim() != world.config().embed_dim) {
    throw ConfigError("embedder dim " + std::to_string(embedder.dim()) + " differs from world embed_dim " +
                      std::to_string(world.config().embed_dim));
  }
  return AlignmentCheckpoint{
      MappingNetwork(embedder.dim(), world.layers(), world.layer_dim(), cfg.hidden, derive_seed(cfg.seed, 0)),
      {},
      cfg.hash(),
      embedder_hash,
      {}};
}

// ---------------------------------------------------------------------------
// Training

namespace {

Mat embed_batch(const MiniEmbedder& embedder, const std::vector<Image>& images) {
  std::vector<const Image*> ptrs;
  for (const auto& img : images) ptrs.push_back(&img);
  return embedder.forward_images(ptrs, nullptr);
}

// Cosine loss between fixed target embeddings and E_I(G(w*_n)). With d_w
// set, the gradient (scaled by weight/N) is pulled back through the embedder
// and the generator and added to it.
double cosine_through_generator(const Mat& targets, const Mat& w_star, const GeneratorBackend& gen,
                                const MiniEmbedder& embedder, double weight, Mat* d_w) {
  const Eigen::Index n = targets.rows();
  const int layers = gen.layers(), dim = gen.layer_dim();
  std::vector<LatentCode> codes;
  std::vector<Image> images;
  for (Eigen::Index i = 0; i < n; ++i) {
    codes.push_back(latent_from_row(w_star, i, layers, dim));
    images.push_back(gen.generate(codes.back()));
  }
  std::vector<const Image*> ptrs;
  for (const auto& img : images) ptrs.push_back(&img);
  ImageTape tape;
  const Mat e_star = embedder.forward_images(ptrs, d_w ? &tape : nullptr);
  Mat d_e(n, e_star.cols());
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    Vec g;
    total += cosine_distance(targets.row(i).transpose(), e_star.row(i).transpose(), nullptr, d_w ? &g : nullptr);
    if (d_w) d_e.row(i) = (weight / static_cast<double>(n)) * g.transpose();
  }
  if (d_w) {
    const Mat d_pixels = embedder.backward_images(tape, d_e, nullptr, true);
    Image grad_img(images[0].height, images[0].width);
    for (Eigen::Index i = 0; i < n; ++i) {
      std::copy(d_pixels.row(i).data(), d_pixels.row(i).data() + d_pixels.cols(), grad_img.pixels.begin());
      const LatentCode gw = gen.generate_backward(codes[static_cast<std::size_t>(i)], grad_img);
      d_w->row(i) += Eigen::Map<const Eigen::RowVectorXd>(gw.rows().data(), gw.rows().size());
    }
  }
  return total / static_cast<double>(n);
}

}  // namespace

double sa_objective(const MappingNetwork& net, const GeneratorBackend& gen, const MiniEmbedder& embedder,
                    const std::vector<Image>& images, double weight, nn::ParameterSet* grads) {
  require(!images.empty(), "sa_objective: empty batch");
  const Mat e = embed_batch(embedder, images);
  MappingNetwork::Tape tape;
  const Mat w_star = net.forward(e, grads ? &tape : nullptr);
  Mat d_w = Mat::Zero(w_star.rows(), w_star.cols());
  const double loss = cosine_through_generator(e, w_star, gen, embedder, weight, grads ? &d_w : nullptr);
  if (grads) net.backward(tape, d_w, grads);
  return loss;
}

IndomainLoss indomain_objective(const MappingNetwork& net, const GeneratorBackend& gen, const MiniEmbedder& embedder,
                                const std::vector<LayerCode>& ws, double lambda_ia, double lambda_iai,
                                nn::ParameterSet* grads) {
  require(!ws.empty(), "indomain_objective: empty batch");
  const int layers = gen.layers(), dim = gen.layer_dim();
  std::vector<Image> images;
  for (const auto& w : ws) images.push_back(gen.generate(broadcast(w, layers)));
  const Mat e = embed_batch(embedder, images);
  MappingNetwork::Tape tape;
  const Mat w_star = net.forward(e, grads ? &tape : nullptr);
  Mat d_w = Mat::Zero(w_star.rows(), w_star.cols());
  IndomainLoss out;
  const double scale = lambda_ia / static_cast<double>(ws.size());
  for (std::size_t n = 0; n < ws.size(); ++n) {
    LatentCode g;
    const auto row = static_cast<Eigen::Index>(n);
    out.ia += loss_ia(latent_from_row(w_star, row, layers, dim), ws[n], grads ? &g : nullptr);
    if (grads) d_w.row(row) += scale * Eigen::Map<const Eigen::RowVectorXd>(g.rows().data(), g.rows().size());
  }
  out.ia /= static_cast<double>(ws.size());
  if (lambda_iai > 0.0 || !grads) {
    out.iai = cosine_through_generator(e, w_star, gen, embedder, lambda_iai, grads ? &d_w : nullptr);
  }
  if (grads) net.backward(tape, d_w, grads);
  return out;
}

double ada_objective(const MappingNetwork& net, const MiniEmbedder& embedder, const std::vector<Image>& images,
                     const std::vector<LatentCode>& targets, double weight, nn::ParameterSet* grads) {
  require(!images.empty() && images.size() == targets.size(), "ada_objective: need one target per image");
  const Mat e = embed_batch(embedder, images);
  MappingNetwork::Tape tape;
  const Mat w_star = net.forward(e, grads ? &tape : nullptr);
  Mat d_w(w_star.rows(), w_star.cols());
  double total = 0.0;
  const double scale = weight / static_cast<double>(images.size());
  for (std::size_t n = 0; n < images.size(); ++n) {
    LatentCode g;
    const auto row = static_cast<Eigen::Index>(n);
    total += loss_ada(latent_from_row(w_star, row, net.layers(), net.layer_dim()), targets[n], grads ? &g : nullptr);
    if (grads) d_w.row(row) = scale * Eigen::Map<const Eigen::RowVectorXd>(g.rows().data(), g.rows().size());
  }
  if (grads) net.backward(tape, d_w, grads);
  return total / static_cast<double>(images.size());
}

namespace {

class StageRunner {
 public:
  StageRunner(AlignmentCheckpoint& ckpt, const World& world, const MiniEmbedder& embedder, const TrainConfig& cfg,
              std::string stage, int total_steps, std::uint64_t stream)
      : ckpt_(ckpt),
        world_(world),
        gen_(world),
        embedder_(embedder),
        cfg_(cfg),
        stage_(std::move(stage)),
        adam_(ckpt.network.params(), nn::AdamConfig{cfg.beta1, cfg.beta2, 1e-8}),
        schedule_{cfg.learning_rate, total_steps, cfg.milestones, cfg.decay},
        grads_(ckpt.network.params().zeros_like()),
        rng_(derive_seed(cfg.seed, stream)),
        dist_(parse_distribution(cfg.distribution)) {}

  double sa_batch() {
    std::vector<Image> images;
    for (int n = 0; n < cfg_.batch_size; ++n) images.push_back(world_.render(draw_attrs(rng_, dist_)));
    const double loss = sa_objective(ckpt_.network, gen_, embedder_, images, cfg_.lambda_sa, &grads_);
    record("L_SA", loss);
    return cfg_.lambda_sa * loss;
  }

  double indomain_batch() {
    std::vector<LayerCode> ws;
    for (int n = 0; n < cfg_.batch_size; ++n) {
      LayerCode w(world_.layer_dim());
      for (Eigen::Index i = 0; i < w.size(); ++i) w[i] = rng_.normal(0.0, cfg_.ws_sigma);
      ws.push_back(std::move(w));
    }
    const IndomainLoss loss = indomain_objective(ckpt_.network, gen_, embedder_, ws, cfg_.lambda_ia, cfg_.lambda_iai, &grads_);
    record("L_IA", loss.ia);
    record("L_IAI", loss.iai);
    return cfg_.lambda_ia * loss.ia + cfg_.lambda_iai * loss.iai;
  }

  double adapt_batch(const InversionBackend& inversion) {
    std::vector<Image> images;
    std::vector<LatentCode> targets;
    while (static_cast<int>(images.size()) < cfg_.batch_size) {
      Image img = world_.render(draw_attrs(rng_, dist_));
      try {
        targets.push_back(inversion.invert(img));
      } catch (const UndetectedError&) {
        continue;
      }
      images.push_back(std::move(img));
    }
    const double loss = ada_objective(ckpt_.network, embedder_, images, targets, cfg_.lambda_ada, &grads_);
    record("L_Ada", loss);
    return cfg_.lambda_ada * loss;
  }

  void begin_step() { grads_.set_zero(); }

  void end_step(int step, const std::string& kind, double loss) {
    if (!std::isfinite(loss)) {
      throw DivergenceError(stage_ + ": " + kind + " is not finite at step " + std::to_string(step));
    }
    auto& g = guard_[kind];
    if (g.count < 10) {
      g.initial += loss / 10.0;
      g.ema = g.count == 0 ? loss : 0.9 * g.ema + 0.1 * loss;
    } else {
      g.ema = 0.9 * g.ema + 0.1 * loss;
      if (g.ema > cfg_.divergence_factor * g.initial) {
        throw DivergenceError(stage_ + ": " + kind + " rose to " + std::to_string(g.ema) + " from " +
                              std::to_string(g.initial) + " at step " + std::to_string(step));
      }
    }
    ++g.count;
    adam_.step(ckpt_.network.params(), grads_, schedule_.rate(step));
    if ((step + 1) % cfg_.log_every == 0) flush(step + 1);
  }

  void finish(int steps) {
    flush(steps);
    ckpt_.network.params().round_to_float();
    ckpt_.stage_history.push_back(stage_);
    ckpt_.config_hash = cfg_.hash();
  }

 private:
  struct Guard {
    int count = 0;
    double initial = 0.0;
    double ema = 0.0;
  };
  struct Accumulator {
    double sum = 0.0;
    int count = 0;
  };

  void record(const std::string& name, double value) {
    auto& a = pending_[name];
    a.sum += value;
    ++a.count;
  }

  void flush(int step) {
    for (auto& [name, acc] : pending_) {
      if (acc.count == 0) continue;
      ckpt_.log.push_back({step, stage_, name, acc.sum / acc.count});
      acc = Accumulator{};
    }
    if (!ckpt_.log.empty() && step % (cfg_.log_every * 20) == 0) {
      spdlog::info("{} step {} {}={:.5f}", stage_, step, ckpt_.log.back().loss_name, ckpt_.log.back().value);
    }
  }

  AlignmentCheckpoint& ckpt_;
  const World& world_;
  ToyGenerator gen_;
  const MiniEmbedder& embedder_;
  const TrainConfig& cfg_;
  std::string stage_;
  nn::Adam adam_;
  nn::MultiStepSchedule schedule_;
  nn::ParameterSet grads_;
  Rng rng_;
  AttrDistribution dist_;
  std::map<std::string, Guard> guard_;
  std::map<std::string, Accumulator> pending_;
};

bool has_stage(const AlignmentCheckpoint& ckpt, const std::string& stage) {
  return std::find(ckpt.stage_history.begin(), ckpt.stage_history.end(), stage) != ckpt.stage_history.end();
}

void check_compatible(const AlignmentCheckpoint& ckpt, const World& world, const MiniEmbedder& embedder) {
  const MappingNetwork& f = ckpt.network;
  if (f.embed_dim() != embedder.dim() || f.layers() != world.layers() || f.layer_dim() != world.layer_dim()) {
    throw ConfigError("alignment checkpoint dimensions do not match the world/embedder");
  }
}

}  // namespace

AlignmentCheckpoint train_stage_align(AlignmentCheckpoint ckpt, const World& world, const MiniEmbedder& embedder,
                                      const TrainConfig& cfg) {
  cfg.validate();
  check_compatible(ckpt, world, embedder);
  StageRunner runner(ckpt, world, embedder, cfg, "sa", cfg.steps_sa, 1);
  for (int step = 0; step < cfg.steps_sa; ++step) {
    runner.begin_step();
    runner.end_step(step, "L_SA", runner.sa_batch());
  }
  runner.finish(cfg.steps_sa);
  return ckpt;
}

AlignmentCheckpoint train_stage_indomain(AlignmentCheckpoint ckpt, const World& world, const MiniEmbedder& embedder,
                                         const TrainConfig& cfg, bool force) {
  cfg.validate();
  check_compatible(ckpt, world, embedder);
  if (!force && !has_stage(ckpt, "sa")) {
    throw ContractError("in-domain adjustment needs a checkpoint trained with stage 'sa' (use --force to override)");
  }
  StageRunner runner(ckpt, world, embedder, cfg, "indomain", cfg.steps_indomain, 2);
  for (int step = 0; step < cfg.steps_indomain; ++step) {
    runner.begin_step();
    if (cfg.interleave_sa && step % 2 == 1) {
      runner.end_step(step, "L_SA", runner.sa_batch());
    } else {
      runner.end_step(step, "L_IA+L_IAI", runner.indomain_batch());
    }
  }
  runner.finish(cfg.steps_indomain);
  return ckpt;
}

AlignmentCheckpoint train_stage_adapt(AlignmentCheckpoint ckpt, const World& world, const MiniEmbedder& embedder,
                                      const InversionBackend& inversion, const TrainConfig& cfg, bool force) {
  cfg.validate();
  check_compatible(ckpt, world, embedder);
  if (!force && !has_stage(ckpt, "indomain")) {
    throw ContractError("adaptation needs a checkpoint trained with stage 'indomain' (use --force to override)");
  }
  StageRunner runner(ckpt, world, embedder, cfg, "adapt", cfg.steps_adapt, 3);
  for (int step = 0; step < cfg.steps_adapt; ++step) {
    runner.begin_step();
    if (cfg.interleave_sa && step % 2 == 1) {
      runner.end_step(step, "L_SA", runner.sa_batch());
    } else {
      runner.end_step(step, "L_Ada", runner.adapt_batch(inversion));
    }
  }
  runner.finish(cfg.steps_adapt);
  return ckpt;
}

// ---------------------------------------------------------------------------
// Held-out metrics

double reconstruction_error(const MappingNetwork& net, const World& world, const EmbedderBackend& embedder,
                            const std::vector<AttributeVector>& attrs) {
  require(!attrs.empty(), "reconstruction_error: empty sample");
  double total = 0.0;
  for (const auto& a : attrs) {
    const AttributeVector got = world.attrs_from_latent(net.map(embedder.embed_image(world.render(a))));
    for (std::size_t j = 0; j < kNumAttributes; ++j) total += std::abs(got[j] - a[j]);
  }
  return total / static_cast<double>(attrs.size() * kNumAttributes);
}

namespace {

template <typename Fn>
double over_broadcast(const MappingNetwork& net, const World& world, const EmbedderBackend& embedder,
                      const std::vector<LayerCode>& ws, Fn fn) {
  require(!ws.empty(), "in-domain metric: empty sample");
  ToyGenerator gen(world);
  double total = 0.0;
  for (const auto& w : ws) {
    const LatentCode w_star = net.map(embedder.embed_image(gen.generate(broadcast(w, world.layers()))));
    total += fn(w_star, w);
  }
  return total / static_cast<double>(ws.size());
}

}  // namespace

double indomain_distance(const MappingNetwork& net, const World& world, const EmbedderBackend& embedder,
                         const std::vector<LayerCode>& ws) {
  return over_broadcast(net, world, embedder, ws, [](const LatentCode& w_star, const LayerCode& w) {
    return (w_star.rows().rowwise() - w.transpose()).rowwise().norm().mean();
  });
}

double indomain_loss(const MappingNetwork& net, const World& world, const EmbedderBackend& embedder,
                     const std::vector<LayerCode>& ws) {
  return over_broadcast(net, world, embedder, ws,
                        [](const LatentCode& w_star, const LayerCode& w) { return loss_ia(w_star, w); });
}

double adaptation_loss(const MappingNetwork& net, const World& world, const EmbedderBackend& embedder,
                       const InversionBackend& inversion, const std::vector<AttributeVector>& attrs) {
  require(!attrs.empty(), "adaptation_loss: empty sample");
  double total = 0.0;
  for (const auto& a : attrs) {
    const Image img = world.render(a);
    total += loss_ada(net.map(embedder.embed_image(img)), inversion.invert(img));
  }
  return total / static_cast<double>(attrs.size());
}

}  // namespace spacealign
