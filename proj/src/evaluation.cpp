#include "spacealign/evaluation.hpp"

#include "spacealign/json_util.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>

namespace spacealign {

// ---------------------------------------------------------------------------
// Least-squares oracle

LatentCode OracleMap::map(const Embedding& e) const {
  require(e.size() + 1 == coefficients.rows(), "oracle map: embedding dimension mismatch");
  const Eigen::RowVectorXd row = e.transpose() * coefficients.topRows(e.size()) + coefficients.bottomRows(1);
  LatentCode w(layers, layer_dim);
  w.rows() = Eigen::Map<const Mat>(row.data(), layers, layer_dim);
  return w;
}

double OracleMap::error(const Mat& embeddings, const Mat& latents) const {
  const Eigen::Index d = embeddings.cols();
  Mat pred = embeddings * coefficients.topRows(d);
  pred.rowwise() += coefficients.bottomRows(1).row(0);
  return (pred - latents).rowwise().squaredNorm().mean();
}

OracleData oracle_data(const EmbedderBackend& embedder, const World& world, std::size_t n, std::uint64_t seed,
                       AttrDistribution dist) {
  const auto attrs = sample_attrs(dist, n, seed);
  OracleData data{Mat(static_cast<Eigen::Index>(n), embedder.dim()),
                  Mat(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(world.layers()) * world.layer_dim())};
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    data.embeddings.row(row) = embedder.embed_image(world.render(attrs[i])).transpose();
    const LatentCode w = world.canonical_latent(attrs[i]);
    data.latents.row(row) = Eigen::Map<const Eigen::RowVectorXd>(w.rows().data(), w.rows().size());
  }
  return data;
}

OracleMap fit_oracle_map(const OracleData& data, int layers, int layer_dim) {
  const Eigen::Index n = data.embeddings.rows();
  const Eigen::Index d = data.embeddings.cols();
  require(n == data.latents.rows() && data.latents.cols() == static_cast<Eigen::Index>(layers) * layer_dim,
          "fit_oracle_map: inconsistent data");
  if (n < 10 * d) {
    throw ContractError("fit_oracle_map needs at least 10*D = " + std::to_string(10 * d) + " samples, got " +
                        std::to_string(n));
  }
  Eigen::MatrixXd x(n, d + 1);
  x.leftCols(d) = data.embeddings;
  x.col(d).setOnes();
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(x, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  const double condition = sv(sv.size() - 1) > 0.0 ? sv(0) / sv(sv.size() - 1) : INFINITY;
  if (!(condition < 1e10)) {
    throw DataError("fit_oracle_map: design matrix is rank deficient (condition number " + std::to_string(condition) +
                    ")");
  }
  const Eigen::MatrixXd y = data.latents;
  OracleMap m;
  m.coefficients = svd.solve(y);
  m.layers = layers;
  m.layer_dim = layer_dim;
  m.condition = condition;
  m.samples = static_cast<std::size_t>(n);
  m.residual = m.error(data.embeddings, data.latents);
  m.zero_residual = data.latents.rowwise().squaredNorm().mean();
  return m;
}

OracleMap fit_oracle_map(const EmbedderBackend& embedder, const World& world, std::size_t n, std::uint64_t seed) {
  return fit_oracle_map(oracle_data(embedder, world, n, seed), world.layers(), world.layer_dim());
}

// ---------------------------------------------------------------------------
// Metrics

double classification_accuracy(const EmbedderBackend& embedder, const std::vector<Image>& images,
                               const std::string& positive_text, const std::string& negative_text) {
  require(!images.empty(), "classification_accuracy: empty image set");
  const Embedding pos = embedder.embed_text(positive_text);
  const Embedding neg = embedder.embed_text(negative_text);
  std::size_t correct = 0;
  for (const auto& img : images) {
    const Embedding e = embedder.embed_image(img);
    if (e.dot(pos) > e.dot(neg)) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(images.size());
}

namespace {

double mean_drift(const AttributeVector& before, const AttributeVector& after, const std::vector<std::size_t>& targets) {
  double total = 0.0;
  int count = 0;
  for (std::size_t j = 0; j < kNumAttributes; ++j) {
    if (std::find(targets.begin(), targets.end(), j) != targets.end()) continue;
    total += std::abs(after[j] - before[j]);
    ++count;
  }
  return count ? total / count : 0.0;
}

}  // namespace

double preservation_score(const std::vector<AttributeVector>& originals, const std::vector<AttributeVector>& editeds,
                          const std::vector<std::size_t>& target_attrs) {
  require(originals.size() == editeds.size() && !originals.empty(), "preservation_score: need paired non-empty lists");
  double drift = 0.0;
  for (std::size_t i = 0; i < originals.size(); ++i) drift += mean_drift(originals[i], editeds[i], target_attrs);
  return std::clamp(1.0 - drift / static_cast<double>(originals.size()), 0.0, 1.0);
}

double shift_oracle_agreement(const SemanticShift& shift, const OracleMap& oracle, const EmbedderBackend& embedder,
                              const PromptBank& bank, const std::string& neutral, const std::string& attr) {
  const Mat oracle_delta =
      oracle.map(prompt_average(embedder, bank, attr)).rows() - oracle.map(prompt_average(embedder, bank, neutral)).rows();
  const Mat& learned = shift.delta.rows();
  require(learned.rows() == oracle_delta.rows() && learned.cols() == oracle_delta.cols(),
          "shift_oracle_agreement: shape mismatch");
  const double denom = learned.norm() * oracle_delta.norm();
  if (denom == 0.0) return 0.0;
  return std::clamp(learned.cwiseProduct(oracle_delta).sum() / denom, -1.0, 1.0);
}

// ---------------------------------------------------------------------------
// Projection

Projection project_2d(const Mat& rows) {
  require(rows.rows() >= 3, "project_2d needs at least 3 codes");
  require(rows.cols() >= 2, "project_2d needs at least 2 dimensions");
  Projection p;
  p.mean = rows.colwise().mean().transpose();
  const Eigen::MatrixXd centered = rows.rowwise() - p.mean.transpose();
  const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(rows.rows() - 1);
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  const Eigen::Index d = cov.rows();
  p.loadings.resize(d, 2);
  p.variance.resize(2);
  for (int k = 0; k < 2; ++k) {
    Vec v = eig.eigenvectors().col(d - 1 - k);
    for (Eigen::Index i = 0; i < d; ++i) {
      if (std::abs(v[i]) > 1e-12) {
        if (v[i] < 0) v = -v;
        break;
      }
    }
    p.loadings.col(k) = v;
    p.variance[k] = std::max(0.0, eig.eigenvalues()[d - 1 - k]);
  }
  p.points = apply_projection(p, rows);
  return p;
}

Mat apply_projection(const Projection& p, const Mat& rows) {
  return (rows.rowwise() - p.mean.transpose()) * p.loadings;
}

Mat flatten_codes(const std::vector<LatentCode>& codes) {
  require(!codes.empty(), "flatten_codes: empty list");
  Mat out(static_cast<Eigen::Index>(codes.size()), codes[0].rows().size());
  for (std::size_t i = 0; i < codes.size(); ++i) {
    require(codes[i].same_shape(codes[0]), "flatten_codes: mixed shapes");
    out.row(static_cast<Eigen::Index>(i)) = Eigen::Map<const Eigen::RowVectorXd>(codes[i].rows().data(), out.cols());
  }
  return out;
}

double cluster_separation(const Mat& points, const std::vector<int>& labels) {
  require(static_cast<std::size_t>(points.rows()) == labels.size(), "cluster_separation: label count mismatch");
  Eigen::RowVectorXd c[2] = {Eigen::RowVectorXd::Zero(points.cols()), Eigen::RowVectorXd::Zero(points.cols())};
  int count[2] = {0, 0};
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    const int l = labels[static_cast<std::size_t>(i)];
    require(l == 0 || l == 1, "cluster_separation: labels must be 0 or 1");
    c[l] += points.row(i);
    ++count[l];
  }
  require(count[0] > 0 && count[1] > 0, "cluster_separation: both clusters need points");
  c[0] /= count[0];
  c[1] /= count[1];
  double radius[2] = {0.0, 0.0};
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    const int l = labels[static_cast<std::size_t>(i)];
    radius[l] += (points.row(i) - c[l]).norm() / count[l];
  }
  const double within = 0.5 * (radius[0] + radius[1]);
  return within > 0.0 ? (c[0] - c[1]).norm() / within : INFINITY;
}

std::vector<Eigen::Vector2d> convex_hull(const Mat& points) {
  require(points.cols() == 2, "convex_hull: points must be 2-D");
  std::vector<Eigen::Vector2d> pts;
  for (Eigen::Index i = 0; i < points.rows(); ++i) pts.emplace_back(points(i, 0), points(i, 1));
  std::sort(pts.begin(), pts.end(),
            [](const Eigen::Vector2d& a, const Eigen::Vector2d& b) { return a.x() < b.x() || (a.x() == b.x() && a.y() < b.y()); });
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  if (pts.size() < 3) return pts;
  auto cross = [](const Eigen::Vector2d& o, const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
    return (a.x() - o.x()) * (b.y() - o.y()) - (a.y() - o.y()) * (b.x() - o.x());
  };
  std::vector<Eigen::Vector2d> hull(2 * pts.size());
  std::size_t k = 0;
  for (const auto& p : pts) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], p) <= 0) --k;
    hull[k++] = p;
  }
  for (std::size_t i = pts.size() - 1, lower = k + 1; i-- > 0;) {
    while (k >= lower && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);
  return hull;
}

bool inside_hull(const std::vector<Eigen::Vector2d>& hull, const Eigen::Vector2d& p) {
  if (hull.size() < 3) return false;
  for (std::size_t i = 0; i < hull.size(); ++i) {
    const Eigen::Vector2d& a = hull[i];
    const Eigen::Vector2d& b = hull[(i + 1) % hull.size()];
    if ((b.x() - a.x()) * (p.y() - a.y()) - (b.y() - a.y()) * (p.x() - a.x()) < 0.0) return false;
  }
  return true;
}

const std::vector<std::pair<std::string, int>>& visualization_probes() {
  static const std::vector<std::pair<std::string, int>> probes{
      {"a small shape", 0},
      {"a small red shape", 0},
      {"a small round shape", 0},
      {"a small shape at the left", 0},
      {"a small shape on a dark background", 0},
      {"a large shape", 1},
      {"a large blue shape", 1},
      {"a large square shape", 1},
      {"a large shape at the top", 1},
      {"a large shape on a light background", 1},
  };
  return probes;
}

std::vector<AttributeVector> cluster_attrs(int label, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<AttributeVector> out;
  while (out.size() < n) {
    AttributeVector a = draw_attrs(rng, AttrDistribution::real);
    a[kSize] = label == 0 ? rng.uniform(0.0, 1.0 / 3.0) : rng.uniform(2.0 / 3.0, 1.0);
    out.push_back(a);
  }
  return out;
}

VisualizationResult visualize_space(const MappingNetwork& net, const EmbedderBackend& embedder, const World& world,
                                    const PromptBank& bank, std::size_t per_cluster, std::uint64_t seed) {
  VisualizationResult r;
  std::vector<LatentCode> codes;
  for (int label = 0; label < 2; ++label) {
    for (const auto& a : cluster_attrs(label, per_cluster, derive_seed(seed, static_cast<std::uint64_t>(label)))) {
      codes.push_back(net.map(embedder.embed_image(world.render(a))));
      r.labels.push_back(label);
    }
  }
  r.image_codes = flatten_codes(codes);
  std::vector<LatentCode> text_codes;
  for (const auto& [text, label] : visualization_probes()) {
    text_codes.push_back(net.map(prompt_average(embedder, bank, text)));
    r.probe_texts.push_back(text);
    r.probe_labels.push_back(label);
  }
  r.text_codes = flatten_codes(text_codes);
  r.projection = project_2d(r.image_codes);
  r.text_points = apply_projection(r.projection, r.text_codes);
  r.separation = cluster_separation(r.projection.points, r.labels);
  for (int label = 0; label < 2; ++label) {
    Mat cluster(static_cast<Eigen::Index>(per_cluster), 2);
    Eigen::Index k = 0;
    for (Eigen::Index i = 0; i < r.projection.points.rows(); ++i) {
      if (r.labels[static_cast<std::size_t>(i)] == label) cluster.row(k++) = r.projection.points.row(i);
    }
    const auto hull = convex_hull(cluster);
    for (std::size_t t = 0; t < r.probe_labels.size(); ++t) {
      if (r.probe_labels[t] != label) continue;
      const auto row = static_cast<Eigen::Index>(t);
      if (inside_hull(hull, Eigen::Vector2d(r.text_points(row, 0), r.text_points(row, 1)))) ++r.probes_inside;
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// Edit evaluation

void to_json(nlohmann::json& j, const EditSample& s) {
  j = nlohmann::json{{"shift", s.shift},
                     {"inversion", s.inversion},
                     {"checkpoint", s.checkpoint},
                     {"index", s.index},
                     {"cos_positive", s.cos_positive},
                     {"cos_negative", s.cos_negative},
                     {"correct", s.correct},
                     {"progress", s.progress},
                     {"non_target_drift", s.non_target_drift}};
}

void from_json(const nlohmann::json& j, EditSample& s) {
  s.shift = j.at("shift").get<std::string>();
  s.inversion = j.at("inversion").get<std::string>();
  s.checkpoint = j.at("checkpoint").get<std::string>();
  s.index = j.at("index").get<int>();
  s.cos_positive = j.at("cos_positive").get<double>();
  s.cos_negative = j.at("cos_negative").get<double>();
  s.correct = j.at("correct").get<bool>();
  s.progress = j.at("progress").get<double>();
  s.non_target_drift = j.at("non_target_drift").get<double>();
}

ShiftMetrics evaluate_shift(const StockShift& stock, const SemanticShift& shift, const std::vector<Image>& sources,
                            const InversionBackend& inversion, const GeneratorBackend& generator,
                            const EmbedderBackend& embedder, const World& world, double alpha,
                            const std::string& checkpoint_tag, std::vector<EditSample>* samples) {
  require(!sources.empty(), "evaluate_shift: no source images");
  const Embedding pos = embedder.embed_text(stock.attr);
  const Embedding neg = embedder.embed_text(stock.neutral);
  std::vector<std::size_t> targets;
  for (const auto& [a, w] : stock.direction) targets.push_back(static_cast<std::size_t>(a));
  ShiftMetrics m;
  double drift = 0.0;
  for (std::size_t i = 0; i < sources.size(); ++i) {
    const AttributeVector before = world.estimate_attrs(sources[i]).attrs;
    const LatentCode code = apply_edit(inversion.invert(sources[i]), shift, alpha);
    const Image edited = generator.generate(code);
    // The generated image's attributes are exactly those of its latent.
    const AttributeVector after = world.attrs_from_latent(code);
    const Embedding e = embedder.embed_image(edited);
    EditSample s{stock.name, inversion.name(), checkpoint_tag, static_cast<int>(i), e.dot(pos), e.dot(neg), false,
                 stock.progress(before, after), mean_drift(before, after, targets)};
    s.correct = s.cos_positive > s.cos_negative;
    m.accuracy += s.correct;
    m.direction_rate += s.progress > 0.0;
    drift += s.non_target_drift;
    if (samples) samples->push_back(s);
  }
  const double n = static_cast<double>(sources.size());
  m.accuracy /= n;
  m.direction_rate /= n;
  m.preservation = std::clamp(1.0 - drift / n, 0.0, 1.0);
  return m;
}

void to_json(nlohmann::json& j, const EvalConfig& c) {
  j = nlohmann::json{{"holdout_images", c.holdout_images},
                     {"holdout_ws", c.holdout_ws},
                     {"reconstruction_images", c.reconstruction_images},
                     {"retrieval_batches", c.retrieval_batches},
                     {"oracle_samples", c.oracle_samples},
                     {"cluster_size", c.cluster_size},
                     {"alpha", c.alpha},
                     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, EvalConfig& c) {
  reject_unknown_keys(j, EvalConfig{}, "evaluation");
  read_key(j, "holdout_images", c.holdout_images);
  read_key(j, "holdout_ws", c.holdout_ws);
  read_key(j, "reconstruction_images", c.reconstruction_images);
  read_key(j, "retrieval_batches", c.retrieval_batches);
  read_key(j, "oracle_samples", c.oracle_samples);
  read_key(j, "cluster_size", c.cluster_size);
  read_key(j, "alpha", c.alpha);
  read_key(j, "seed", c.seed);
}

namespace {

nlohmann::json metrics_json(const ShiftMetrics& m) {
  return {{"accuracy", m.accuracy}, {"direction_rate", m.direction_rate}, {"preservation", m.preservation}};
}

class Stopwatch {
 public:
  double lap() {
    const auto now = std::chrono::steady_clock::now();
    const double s = std::chrono::duration<double>(now - last_).count();
    last_ = now;
    return s;
  }

 private:
  std::chrono::steady_clock::time_point last_ = std::chrono::steady_clock::now();
};

}  // namespace

EvalReport build_report(const ReportInputs& in, const EvalConfig& cfg) {
  require(in.world && in.embedder && !in.stages.empty(), "build_report: world, embedder and a checkpoint are required");
  const World& world = *in.world;
  const MiniEmbedder& embedder = *in.embedder;
  const ToyGenerator generator(world);
  const CanonicalInversion canonical(world);
  const NoisyInversion noisy(world, in.noisy_seed);
  EvalReport report;
  nlohmann::json& j = report.json;
  nlohmann::json runtime = nlohmann::json::object();
  Stopwatch clock;

  j["schema"] = 1;
  j["config"] = cfg;
  j["world"] = world.config();
  j["embedder_hash"] = embedder.to_checkpoint({}).content_hash();

  const auto retrieval_sets = distinct_caption_batches(AttrDistribution::uniform, cfg.retrieval_batches, 64,
                                                       derive_seed(cfg.seed, 1));
  const RetrievalAccuracy retrieval = retrieval_accuracy(embedder, retrieval_sets, world);
  j["retrieval"] = {{"image_to_text", retrieval.image_to_text}, {"text_to_image", retrieval.text_to_image}};
  runtime["retrieval"] = clock.lap();

  const OracleMap oracle = fit_oracle_map(embedder, world, cfg.oracle_samples, derive_seed(cfg.seed, 2));
  j["oracle"] = {{"residual", oracle.residual},
                 {"zero_residual", oracle.zero_residual},
                 {"condition", oracle.condition},
                 {"samples", oracle.samples}};
  runtime["oracle"] = clock.lap();

  const auto recon_attrs = sample_attrs(AttrDistribution::real, cfg.reconstruction_images, derive_seed(cfg.seed, 3));
  const auto holdout_ws = sample_ws(cfg.holdout_ws, world.layer_dim(), derive_seed(cfg.seed, 4));
  nlohmann::json stages = nlohmann::json::array();
  for (const auto& snap : in.stages) {
    const MappingNetwork& f = snap.checkpoint->network;
    stages.push_back({{"stage", snap.stage},
                      {"checkpoint_hash", snap.checkpoint->content_hash()},
                      {"reconstruction_error", reconstruction_error(f, world, embedder, recon_attrs)},
                      {"indomain_distance", indomain_distance(f, world, embedder, holdout_ws)},
                      {"indomain_loss", indomain_loss(f, world, embedder, holdout_ws)},
                      {"adaptation_loss", adaptation_loss(f, world, embedder, noisy, recon_attrs)}});
  }
  j["stages"] = stages;
  runtime["stages"] = clock.lap();

  std::vector<Image> sources;
  for (const auto& a : sample_attrs(AttrDistribution::real, cfg.holdout_images, derive_seed(cfg.seed, 5))) {
    sources.push_back(world.render(a));
  }
  const StageSnapshot& last = in.stages.back();
  const StageSnapshot* previous = in.stages.size() >= 2 ? &in.stages[in.stages.size() - 2] : nullptr;
  nlohmann::json shifts = nlohmann::json::object();
  for (const auto& stock : stock_shifts()) {
    nlohmann::json entry;
    const SemanticShift shift = extract_shift(last.checkpoint->network, embedder, in.bank, stock.neutral, stock.attr,
                                              last.checkpoint->content_hash());
    entry["canonical"] = metrics_json(evaluate_shift(stock, shift, sources, canonical, generator, embedder, world,
                                                     cfg.alpha, last.stage, &report.samples));
    entry["noisy_post"] = metrics_json(evaluate_shift(stock, shift, sources, noisy, generator, embedder, world,
                                                      cfg.alpha, last.stage, &report.samples));
    if (previous) {
      const SemanticShift before = extract_shift(previous->checkpoint->network, embedder, in.bank, stock.neutral,
                                                 stock.attr, previous->checkpoint->content_hash());
      entry["noisy_pre"] = metrics_json(evaluate_shift(stock, before, sources, noisy, generator, embedder, world,
                                                       cfg.alpha, previous->stage, &report.samples));
    }
    entry["oracle_agreement"] = shift_oracle_agreement(shift, oracle, embedder, in.bank, stock.neutral, stock.attr);
    shifts[stock.name] = entry;
  }
  j["shifts"] = shifts;
  runtime["shifts"] = clock.lap();

  const VisualizationResult viz =
      visualize_space(last.checkpoint->network, embedder, world, in.bank, cfg.cluster_size, derive_seed(cfg.seed, 6));
  j["visualization"] = {{"separation", viz.separation},
                        {"probes_inside", viz.probes_inside},
                        {"probes_total", viz.probe_texts.size()}};
  runtime["visualization"] = clock.lap();
  // Wall-clock figures; excluded when comparing reports for determinism.
  j["runtime_seconds"] = runtime;
  return report;
}

nlohmann::json replay_accuracies(const std::vector<EditSample>& samples) {
  std::map<std::string, std::pair<int, int>> tally;
  for (const auto& s : samples) {
    auto& t = tally[s.shift + "/" + s.inversion + "/" + s.checkpoint];
    t.first += s.correct;
    ++t.second;
  }
  nlohmann::json out = nlohmann::json::object();
  for (const auto& [key, t] : tally) out[key] = static_cast<double>(t.first) / t.second;
  return out;
}

void write_samples(const std::filesystem::path& path, const std::vector<EditSample>& samples) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& s : samples) out << nlohmann::json(s).dump() << '\n';
}

std::vector<EditSample> read_samples(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<EditSample> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      out.push_back(nlohmann::json::parse(line).get<EditSample>());
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path.string() + ": " + e.what());
    }
  }
  return out;
}

}  // namespace spacealign
