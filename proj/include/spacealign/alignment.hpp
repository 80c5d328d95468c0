#pragma once

#include "spacealign/checkpoint.hpp"
#include "spacealign/embedder.hpp"
#include "spacealign/generator.hpp"
#include "spacealign/nn.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace spacealign {

// F: L independent heads, each D -> H -> H -> C with tanh between layers.
class MappingNetwork {
 public:
  struct Tape {
    Mat input;
    std::vector<Mat> hidden1, hidden2;  // tanh outputs per head
  };

  MappingNetwork(int embed_dim, int layers, int layer_dim, int hidden, std::uint64_t seed);

  int embed_dim() const { return embed_dim_; }
  int layers() const { return layers_; }
  int layer_dim() const { return layer_dim_; }
  int hidden() const { return hidden_; }

  LatentCode map(const Embedding& e) const;
  // Batched: N x D embeddings -> N x (L*C), each row a row-major latent.
  Mat forward(const Mat& embeddings, Tape* tape) const;
  void backward(const Tape& tape, const Mat& d_out, nn::ParameterSet* grads) const;

  nn::ParameterSet& params() { return params_; }
  const nn::ParameterSet& params() const { return params_; }

 private:
  struct Head {
    nn::Dense fc1, fc2, fc3;
  };
  int embed_dim_, layers_, layer_dim_, hidden_;
  nn::ParameterSet params_;
  std::vector<Head> heads_;
};

LatentCode latent_from_row(const Mat& batch, Eigen::Index row, int layers, int layer_dim);

// 1 - cos(a, b). Optional gradients with respect to either argument.
double cosine_distance(const Vec& a, const Vec& b, Vec* grad_a = nullptr, Vec* grad_b = nullptr);

// Text-image alignment: 1 - cos(E_I(I), E_I(I*)), with e_orig = E_I(I).
double loss_sa(const Embedding& e_orig, const Image& img_star, const EmbedderBackend& embedder);
// In-domain alignment: sum over layers of |w*_i - w_s|^2.
double loss_ia(const LatentCode& w_star, const LayerCode& w_s, LatentCode* grad = nullptr);
// The loss_sa cosine form on a generated image and its re-generation.
double loss_iai(const Image& img_s, const Image& img_s_star, const EmbedderBackend& embedder);
// Adaptation: sum over layers of |w*_i - w^e_i|^2.
double loss_ada(const LatentCode& w_star, const LatentCode& w_e, LatentCode* grad = nullptr);

// Batch objectives used by the training stages. Each returns the unweighted
// batch-mean loss; when grads is non-null the weighted gradient (weight / N
// per sample) is accumulated into it.
double sa_objective(const MappingNetwork& net, const GeneratorBackend& gen, const MiniEmbedder& embedder,
                    const std::vector<Image>& images, double weight, nn::ParameterSet* grads);

struct IndomainLoss {
  double ia = 0.0;
  double iai = 0.0;
};
// loss_ia and loss_iai on generate(broadcast(w_s)) images.
IndomainLoss indomain_objective(const MappingNetwork& net, const GeneratorBackend& gen, const MiniEmbedder& embedder,
                                const std::vector<LayerCode>& ws, double lambda_ia, double lambda_iai,
                                nn::ParameterSet* grads);
double ada_objective(const MappingNetwork& net, const MiniEmbedder& embedder, const std::vector<Image>& images,
                     const std::vector<LatentCode>& targets, double weight, nn::ParameterSet* grads);

struct TrainConfig {
  double learning_rate = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  std::vector<double> milestones{0.6, 0.85};
  double decay = 0.3;
  int steps_sa = 8000;
  int steps_indomain = 4000;
  int steps_adapt = 2000;
  int batch_size = 32;
  double lambda_sa = 1.0;
  double lambda_ia = 1.0;
  double lambda_iai = 1.0;
  double lambda_ada = 1.0;
  // Keep loss_sa batches alternating 1:1 with the stage objective in stages 2 and 3.
  bool interleave_sa = true;
  int hidden = 64;
  double ws_sigma = 1.0;
  std::string distribution = "real";
  int log_every = 50;
  double divergence_factor = 10.0;
  std::uint64_t seed = 11;

  void validate() const;
  std::string hash() const;
};

void to_json(nlohmann::json& j, const TrainConfig& cfg);
// Rejects unknown keys.
void from_json(const nlohmann::json& j, TrainConfig& cfg);

struct AlignmentCheckpoint {
  MappingNetwork network;
  std::vector<std::string> stage_history;
  std::string config_hash;
  std::string embedder_hash;
  std::vector<MetricRecord> log;

  const std::string& stage() const;
  Checkpoint to_checkpoint() const;
  // Throws DataError when the stored parameter hash does not match the data.
  static AlignmentCheckpoint from_checkpoint(const Checkpoint& ckpt);
  std::string content_hash() const { return to_checkpoint().content_hash(); }
};

void save_alignment(const std::filesystem::path& path, const AlignmentCheckpoint& ckpt);
AlignmentCheckpoint load_alignment(const std::filesystem::path& path);
void write_metric_log(const std::filesystem::path& path, const std::vector<MetricRecord>& log);
std::vector<MetricRecord> read_metric_log(const std::filesystem::path& path);

AlignmentCheckpoint initial_alignment(const World& world, const MiniEmbedder& embedder, const TrainConfig& cfg,
                                      const std::string& embedder_hash);

// Stage 1 (loss_sa) on embed_image(render(a)), a ~ cfg.distribution.
AlignmentCheckpoint train_stage_align(AlignmentCheckpoint ckpt, const World& world, const MiniEmbedder& embedder,
                                      const TrainConfig& cfg);
// Stage 2 (loss_ia + loss_iai) on broadcast w_s samples. Requires a stage-1 checkpoint unless force.
AlignmentCheckpoint train_stage_indomain(AlignmentCheckpoint ckpt, const World& world, const MiniEmbedder& embedder,
                                         const TrainConfig& cfg, bool force = false);
// Stage 3 (loss_ada) toward the inversion backend's codes. Requires a stage-2 checkpoint unless force.
AlignmentCheckpoint train_stage_adapt(AlignmentCheckpoint ckpt, const World& world, const MiniEmbedder& embedder,
                                      const InversionBackend& inversion, const TrainConfig& cfg, bool force = false);

// Mean abs attribute error between a and the attributes generated from F(E_I(render(a))).
double reconstruction_error(const MappingNetwork& net, const World& world, const EmbedderBackend& embedder,
                            const std::vector<AttributeVector>& attrs);
// Mean per-layer distance of F(E_I(G(broadcast(w_s)))) rows to w_s.
double indomain_distance(const MappingNetwork& net, const World& world, const EmbedderBackend& embedder,
                         const std::vector<LayerCode>& ws);
// Mean L_IA over the same construction.
double indomain_loss(const MappingNetwork& net, const World& world, const EmbedderBackend& embedder,
                     const std::vector<LayerCode>& ws);
// Mean L_Ada against the inversion backend's codes of render(a).
double adaptation_loss(const MappingNetwork& net, const World& world, const EmbedderBackend& embedder,
                       const InversionBackend& inversion, const std::vector<AttributeVector>& attrs);

}  // namespace spacealign
