#pragma once

#include "spacealign/caption.hpp"
#include "spacealign/checkpoint.hpp"
#include "spacealign/nn.hpp"
#include "spacealign/world.hpp"

#include <json.hpp>

#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

namespace spacealign {

// Unit-norm D-vector in the joint text/image space.
using Embedding = Vec;

// Joint text/image encoder seam. A real pretrained model can be plugged in
// through FileEmbedder with embeddings exported offline.
class EmbedderBackend {
 public:
  virtual ~EmbedderBackend() = default;
  virtual int dim() const = 0;
  virtual Embedding embed_image(const Image& img) const = 0;
  virtual Embedding embed_text(std::string_view text) const = 0;
  virtual std::string name() const = 0;
};

struct PromptBank {
  std::string id;
  std::vector<std::string> templates;

  // Seven templates, each with a single "{}" slot.
  static PromptBank stock();
  void validate() const;
  std::string fill(std::size_t index, std::string_view slot_text) const;
};

// Embeds every filled template, averages, re-normalizes.
Embedding prompt_average(const EmbedderBackend& embedder, const PromptBank& bank, std::string_view slot_text);

struct EmbedderConfig {
  int channels1 = 8;
  int channels2 = 16;
  int channels3 = 32;
  int hidden = 64;
  double init_temperature = 0.07;
  double min_temperature = 0.01;
  double max_temperature = 1.0;
};

void to_json(nlohmann::json& j, const EmbedderConfig& cfg);
void from_json(const nlohmann::json& j, EmbedderConfig& cfg);

// Intermediate activations of a batched image forward pass.
struct ImageTape {
  int batch = 0;
  Mat input;
  Mat cols1, pre1, act1;
  Mat cols2, pre2, act2;
  Mat cols3, pre3, act3;
  Mat flat, pre4, act4;
  Mat raw;
  Vec norms;
  Mat output;
};

// Surrogate joint embedder: a three-layer strided conv stack for images and
// a bag-of-slot-words linear map for text, both L2-normalized.
class MiniEmbedder final : public EmbedderBackend {
 public:
  MiniEmbedder(int image_size, int dim, EmbedderConfig cfg, std::uint64_t seed);

  int dim() const override { return dim_; }
  int image_size() const { return image_size_; }
  std::string name() const override { return "mini"; }
  Embedding embed_image(const Image& img) const override;
  Embedding embed_text(std::string_view text) const override;

  // Batched, differentiable paths.
  Mat forward_images(const std::vector<const Image*>& images, ImageTape* tape) const;
  // Returns dL/dpixels (batch x H*W*3, HWC) when need_input_grad.
  Mat backward_images(const ImageTape& tape, const Mat& d_embeddings, nn::ParameterSet* grads,
                      bool need_input_grad) const;
  // Rows are slot-word counts (batch x vocabulary).
  Mat text_features(const std::vector<std::string>& texts) const;
  Mat forward_texts(const Mat& features, Mat* raw, Vec* norms) const;
  void backward_texts(const Mat& features, const Mat& raw_out, const Vec& norms, const Mat& d_embeddings,
                      nn::ParameterSet* grads) const;

  double temperature() const;
  // dL/dtau -> gradient on the log-temperature parameter (zero when clamped).
  void accumulate_temperature_grad(double d_tau, nn::ParameterSet* grads) const;

  nn::ParameterSet& params() { return params_; }
  const nn::ParameterSet& params() const { return params_; }
  const EmbedderConfig& config() const { return cfg_; }

  Checkpoint to_checkpoint(const nlohmann::json& extra_header) const;
  static MiniEmbedder from_checkpoint(const Checkpoint& ckpt);

 private:
  int image_size_;
  int dim_;
  EmbedderConfig cfg_;
  nn::ParameterSet params_;
  nn::Conv2d conv1_, conv2_, conv3_;
  nn::Dense fc1_, fc2_;
  std::size_t text_weight_ = 0;
  std::size_t text_bias_ = 0;
  std::size_t log_temperature_ = 0;
};

// Serves embeddings from a JSON-lines lookup file, one {"key", "vec"} per
// line. Keys are SHA-256 hex digests of "text:" + text or "image:" + the
// 8-bit HWC pixel bytes.
class FileEmbedder final : public EmbedderBackend {
 public:
  explicit FileEmbedder(const std::filesystem::path& path);
  FileEmbedder(int dim, std::map<std::string, Embedding> table);

  int dim() const override { return dim_; }
  std::string name() const override { return "file"; }
  Embedding embed_image(const Image& img) const override;
  Embedding embed_text(std::string_view text) const override;

  static std::string image_key(const Image& img);
  static std::string text_key(std::string_view text);
  // Writes a lookup file covering the given images and texts.
  static void export_table(const std::filesystem::path& path, const EmbedderBackend& source,
                           const std::vector<Image>& images, const std::vector<std::string>& texts);

 private:
  Embedding lookup(const std::string& key) const;
  int dim_ = 0;
  std::map<std::string, Embedding> table_;
};

struct ContrastiveResult {
  double loss = 0.0;
  Mat d_images;  // dL/d image embeddings
  Mat d_texts;   // dL/d text embeddings
  double d_temperature = 0.0;
};

// Symmetric softmax cross-entropy over the N x N cosine matrix divided by the temperature.
ContrastiveResult contrastive_loss(const Mat& image_embeddings, const Mat& text_embeddings, double temperature);

// Loss of the embedder on (image, caption) pairs. Warns on stderr when two
// captions coincide, since the targets become ambiguous.
double contrastive_loss(const MiniEmbedder& embedder, const std::vector<Image>& images,
                        const std::vector<Caption>& captions);

struct RetrievalAccuracy {
  double image_to_text = 0.0;
  double text_to_image = 0.0;
};

// Top-1 retrieval within each batch (ties count as misses).
RetrievalAccuracy retrieval_accuracy(const EmbedderBackend& embedder, const std::vector<std::vector<AttributeVector>>& batches,
                                     const World& world);

// Batches of attribute samples whose captions are pairwise distinct.
std::vector<std::vector<AttributeVector>> distinct_caption_batches(AttrDistribution dist, std::size_t batches,
                                                                   std::size_t batch_size, std::uint64_t seed);

struct EmbedderTrainConfig {
  int batch_size = 64;
  double learning_rate = 2e-3;
  int max_steps = 20000;
  int eval_every = 250;
  int eval_batches = 16;
  double target_accuracy = 0.90;
  // Early stop needs the validation accuracy to clear target + stop_margin,
  // so a lucky validation set does not end training right at the target.
  double stop_margin = 0.03;
  // Fraction of training captions reduced to a partial phrase, and the
  // per-slot keep probability inside such a phrase.
  double partial_rate = 0.5;
  double slot_keep = 0.5;
  // Fraction of batch entries that copy the previous entry with one slot
  // redrawn, so every slot regularly has to be told apart on its own.
  double twin_rate = 0.0;
  std::string distribution = "uniform";
  std::uint64_t seed = 1;
};

void to_json(nlohmann::json& j, const EmbedderTrainConfig& cfg);
void from_json(const nlohmann::json& j, EmbedderTrainConfig& cfg);

struct MetricRecord {
  int step = 0;
  std::string stage;
  std::string loss_name;
  double value = 0.0;
};

void to_json(nlohmann::json& j, const MetricRecord& r);
void from_json(const nlohmann::json& j, MetricRecord& r);

struct EmbedderTrainResult {
  MiniEmbedder embedder;
  std::vector<MetricRecord> log;
  RetrievalAccuracy final_accuracy;
  int steps = 0;
  bool below_target = false;
};

// Trains until both retrieval directions reach the target on the validation
// batches or max_steps elapse.
EmbedderTrainResult train_embedder(const World& world, const EmbedderConfig& model_cfg,
                                   const EmbedderTrainConfig& train_cfg);

}  // namespace spacealign
