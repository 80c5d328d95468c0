#pragma once

#include "spacealign/alignment.hpp"
#include "spacealign/editing.hpp"
#include "spacealign/embedder.hpp"

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace spacealign {

// Affine least-squares map from image embeddings to canonical latents.
struct OracleMap {
  Mat coefficients;  // (D + 1) x (L * C); last row is the intercept
  int layers = 0;
  int layer_dim = 0;
  double residual = 0.0;       // mean squared latent error on the fit set
  double zero_residual = 0.0;  // same for the all-zero map
  double condition = 0.0;      // of the design matrix
  std::size_t samples = 0;

  LatentCode map(const Embedding& e) const;
  // Mean squared latent error of the map on (embedding, latent) rows.
  double error(const Mat& embeddings, const Mat& latents) const;
};

struct OracleData {
  Mat embeddings;  // n x D
  Mat latents;     // n x (L*C)
};

OracleData oracle_data(const EmbedderBackend& embedder, const World& world, std::size_t n, std::uint64_t seed,
                       AttrDistribution dist = AttrDistribution::real);
// Throws DataError when the design matrix is rank deficient (message carries the condition number).
OracleMap fit_oracle_map(const OracleData& data, int layers, int layer_dim);
OracleMap fit_oracle_map(const EmbedderBackend& embedder, const World& world, std::size_t n, std::uint64_t seed);

// Fraction of images with cos(E_I, E_T(positive)) > cos(E_I, E_T(negative)); ties fail.
double classification_accuracy(const EmbedderBackend& embedder, const std::vector<Image>& images,
                               const std::string& positive_text, const std::string& negative_text);

// 1 - mean abs drift over the non-target attributes, clamped to [0, 1].
double preservation_score(const std::vector<AttributeVector>& originals, const std::vector<AttributeVector>& editeds,
                          const std::vector<std::size_t>& target_attrs);

// Flattened cosine between the learned delta and the oracle map's delta for the same text pair.
double shift_oracle_agreement(const SemanticShift& shift, const OracleMap& oracle, const EmbedderBackend& embedder,
                              const PromptBank& bank, const std::string& neutral, const std::string& attr);

struct Projection {
  Mat points;    // n x 2
  Mat loadings;  // d x 2, orthonormal columns
  Vec mean;      // d
  Vec variance;  // explained variance of the two components
};

// PCA onto the top two components. Each loading vector's first nonzero entry is positive.
Projection project_2d(const Mat& rows);
Mat apply_projection(const Projection& p, const Mat& rows);
Mat flatten_codes(const std::vector<LatentCode>& codes);

// Distance between the two cluster centroids over the mean within-cluster radius.
double cluster_separation(const Mat& points, const std::vector<int>& labels);
// Convex hull (counter-clockwise) and a closed-boundary membership test.
std::vector<Eigen::Vector2d> convex_hull(const Mat& points);
bool inside_hull(const std::vector<Eigen::Vector2d>& hull, const Eigen::Vector2d& p);

// The two-cluster visualization set: "small" and "large" renders plus probe texts.
struct VisualizationResult {
  Mat image_codes;  // flattened F(E_I(render)) codes, small first
  std::vector<int> labels;
  Mat text_codes;
  std::vector<std::string> probe_texts;
  std::vector<int> probe_labels;
  Projection projection;
  Mat text_points;
  double separation = 0.0;
  int probes_inside = 0;
};

const std::vector<std::pair<std::string, int>>& visualization_probes();
std::vector<AttributeVector> cluster_attrs(int label, std::size_t n, std::uint64_t seed);
VisualizationResult visualize_space(const MappingNetwork& net, const EmbedderBackend& embedder, const World& world,
                                    const PromptBank& bank, std::size_t per_cluster, std::uint64_t seed);

struct EditSample {
  std::string shift;
  std::string inversion;
  std::string checkpoint;
  int index = 0;
  double cos_positive = 0.0;
  double cos_negative = 0.0;
  bool correct = false;
  double progress = 0.0;
  double non_target_drift = 0.0;
};

void to_json(nlohmann::json& j, const EditSample& s);
void from_json(const nlohmann::json& j, EditSample& s);

struct ShiftMetrics {
  double accuracy = 0.0;
  double direction_rate = 0.0;
  double preservation = 0.0;
};

// Edits every source with the shift at alpha, then classifies and measures drift.
// Per-sample records are appended to samples when non-null.
ShiftMetrics evaluate_shift(const StockShift& stock, const SemanticShift& shift, const std::vector<Image>& sources,
                            const InversionBackend& inversion, const GeneratorBackend& generator,
                            const EmbedderBackend& embedder, const World& world, double alpha,
                            const std::string& checkpoint_tag, std::vector<EditSample>* samples);

struct EvalConfig {
  std::size_t holdout_images = 100;
  std::size_t holdout_ws = 200;
  std::size_t reconstruction_images = 200;
  std::size_t retrieval_batches = 8;
  std::size_t oracle_samples = 2000;
  std::size_t cluster_size = 100;
  double alpha = 1.0;
  std::uint64_t seed = 2024;
};

void to_json(nlohmann::json& j, const EvalConfig& cfg);
void from_json(const nlohmann::json& j, EvalConfig& cfg);

struct StageSnapshot {
  std::string stage;
  const AlignmentCheckpoint* checkpoint = nullptr;
};

struct ReportInputs {
  const World* world = nullptr;
  const MiniEmbedder* embedder = nullptr;
  std::vector<StageSnapshot> stages;  // in training order; the last one is the deployed checkpoint
  PromptBank bank = PromptBank::stock();
  // Seed of the noisy inversion the last stage was adapted to.
  std::uint64_t noisy_seed = 5;
};

struct EvalReport {
  nlohmann::json json;
  std::vector<EditSample> samples;
};

EvalReport build_report(const ReportInputs& inputs, const EvalConfig& cfg);
// Recomputes the per-shift accuracies from per-sample records.
nlohmann::json replay_accuracies(const std::vector<EditSample>& samples);
void write_samples(const std::filesystem::path& path, const std::vector<EditSample>& samples);
std::vector<EditSample> read_samples(const std::filesystem::path& path);

}  // namespace spacealign
