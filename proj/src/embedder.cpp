#include "spacealign/embedder.hpp"

#include "spacealign/hashing.hpp"
#include "spacealign/json_util.hpp"
#include "spacealign/image_io.hpp"
#include "spacealign/rng.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <unordered_map>

namespace spacealign {

// ---------------------------------------------------------------------------
// Prompt bank

PromptBank PromptBank::stock() {
  return PromptBank{"stock-7",
                    {"a photo of {}", "an image of {}", "a rendering of {}", "a picture of {}", "a cropped photo of {}",
                     "a drawing of {}", "{}"}};
}

void PromptBank::validate() const {
  if (templates.empty()) throw ConfigError("prompt bank '" + id + "' has no templates");
  for (const auto& t : templates) {
    const auto first = t.find("{}");
    if (first == std::string::npos || t.find("{}", first + 2) != std::string::npos) {
      throw ConfigError("prompt template '" + t + "' must contain exactly one {} slot");
    }
  }
}

std::string PromptBank::fill(std::size_t index, std::string_view slot_text) const {
  const std::string& t = templates.at(index);
  const auto pos = t.find("{}");
  return t.substr(0, pos) + std::string(slot_text) + t.substr(pos + 2);
}

Embedding prompt_average(const EmbedderBackend& embedder, const PromptBank& bank, std::string_view slot_text) {
  bank.validate();
  Vec sum = Vec::Zero(embedder.dim());
  for (std::size_t i = 0; i < bank.templates.size(); ++i) sum += embedder.embed_text(bank.fill(i, slot_text));
  sum /= static_cast<double>(bank.templates.size());
  const double norm = sum.norm();
  require(norm > 0.0, "prompt_average: templates cancel out");
  return sum / norm;
}

// ---------------------------------------------------------------------------
// Configs

void to_json(nlohmann::json& j, const EmbedderConfig& cfg) {
  j = nlohmann::json{{"channels1", cfg.channels1},
                     {"channels2", cfg.channels2},
                     {"channels3", cfg.channels3},
                     {"hidden", cfg.hidden},
                     {"init_temperature", cfg.init_temperature},
                     {"min_temperature", cfg.min_temperature},
                     {"max_temperature", cfg.max_temperature}};
}

void from_json(const nlohmann::json& j, EmbedderConfig& cfg) {
  reject_unknown_keys(j, EmbedderConfig{}, "embedder.model");
  read_key(j, "channels1", cfg.channels1);
  read_key(j, "channels2", cfg.channels2);
  read_key(j, "channels3", cfg.channels3);
  read_key(j, "hidden", cfg.hidden);
  read_key(j, "init_temperature", cfg.init_temperature);
  read_key(j, "min_temperature", cfg.min_temperature);
  read_key(j, "max_temperature", cfg.max_temperature);
}

void to_json(nlohmann::json& j, const EmbedderTrainConfig& cfg) {
  j = nlohmann::json{{"batch_size", cfg.batch_size},     {"learning_rate", cfg.learning_rate},
                     {"max_steps", cfg.max_steps},       {"eval_every", cfg.eval_every},
                     {"eval_batches", cfg.eval_batches}, {"target_accuracy", cfg.target_accuracy},
                     {"stop_margin", cfg.stop_margin},
                     {"partial_rate", cfg.partial_rate}, {"slot_keep", cfg.slot_keep},
                     {"twin_rate", cfg.twin_rate},
                     {"distribution", cfg.distribution}, {"seed", cfg.seed}};
}

void from_json(const nlohmann::json& j, EmbedderTrainConfig& cfg) {
  reject_unknown_keys(j, EmbedderTrainConfig{}, "embedder");
  read_key(j, "batch_size", cfg.batch_size);
  read_key(j, "learning_rate", cfg.learning_rate);
  read_key(j, "max_steps", cfg.max_steps);
  read_key(j, "eval_every", cfg.eval_every);
  read_key(j, "eval_batches", cfg.eval_batches);
  read_key(j, "target_accuracy", cfg.target_accuracy);
  read_key(j, "stop_margin", cfg.stop_margin);
  read_key(j, "partial_rate", cfg.partial_rate);
  read_key(j, "slot_keep", cfg.slot_keep);
  read_key(j, "twin_rate", cfg.twin_rate);
  read_key(j, "distribution", cfg.distribution);
  read_key(j, "seed", cfg.seed);
}

void to_json(nlohmann::json& j, const MetricRecord& r) {
  j = nlohmann::json{{"step", r.step}, {"stage", r.stage}, {"loss_name", r.loss_name}, {"value", r.value}};
}

void from_json(const nlohmann::json& j, MetricRecord& r) {
  r.step = j.at("step").get<int>();
  r.stage = j.at("stage").get<std::string>();
  r.loss_name = j.at("loss_name").get<std::string>();
  r.value = j.at("value").get<double>();
}

// ---------------------------------------------------------------------------
// MiniEmbedder

MiniEmbedder::MiniEmbedder(int image_size, int dim, EmbedderConfig cfg, std::uint64_t seed)
    : image_size_(image_size), dim_(dim), cfg_(cfg) {
  require(image_size >= 8 && dim >= 1, "embedder: bad dimensions");
  Rng rng(seed);
  conv1_ = nn::Conv2d::create(params_, "image.conv1", 3, cfg_.channels1, 4, 2, 1, image_size, image_size, rng);
  conv2_ = nn::Conv2d::create(params_, "image.conv2", cfg_.channels1, cfg_.channels2, 4, 2, 1, conv1_.out_h,
                              conv1_.out_w, rng);
  conv3_ = nn::Conv2d::create(params_, "image.conv3", cfg_.channels2, cfg_.channels3, 4, 2, 1, conv2_.out_h,
                              conv2_.out_w, rng);
  const int flat = conv3_.out_h * conv3_.out_w * cfg_.channels3;
  fc1_ = nn::Dense::create(params_, "image.fc1", flat, cfg_.hidden, rng);
  fc2_ = nn::Dense::create(params_, "image.fc2", cfg_.hidden, dim_, rng);

  const int vocab = static_cast<int>(slot_vocabulary().size());
  const double limit = std::sqrt(6.0 / (vocab + dim_));
  Mat text_w(vocab, dim_);
  for (Eigen::Index i = 0; i < text_w.size(); ++i) text_w.data()[i] = rng.uniform(-limit, limit);
  Mat text_b(1, dim_);
  for (Eigen::Index i = 0; i < text_b.size(); ++i) text_b.data()[i] = rng.uniform(-limit, limit);
  text_weight_ = params_.add("text.weight", std::move(text_w));
  text_bias_ = params_.add("text.bias", std::move(text_b));
  log_temperature_ = params_.add("log_temperature", Mat::Constant(1, 1, std::log(cfg_.init_temperature)));
}

Mat MiniEmbedder::forward_images(const std::vector<const Image*>& images, ImageTape* tape) const {
  const int batch = static_cast<int>(images.size());
  require(batch > 0, "embed_image: empty batch");
  const int pixels = image_size_ * image_size_;
  ImageTape local;
  ImageTape& t = tape ? *tape : local;
  t.batch = batch;
  t.input.resize(static_cast<Eigen::Index>(batch) * pixels, 3);
  for (int n = 0; n < batch; ++n) {
    const Image& img = *images[static_cast<std::size_t>(n)];
    if (img.height != image_size_ || img.width != image_size_) {
      throw ContractError("embed_image: expected " + std::to_string(image_size_) + "x" + std::to_string(image_size_) +
                          " image, got " + std::to_string(img.height) + "x" + std::to_string(img.width));
    }
    for (int p = 0; p < pixels; ++p) {
      for (int c = 0; c < 3; ++c) {
        t.input(static_cast<Eigen::Index>(n) * pixels + p, c) = img.pixels[static_cast<std::size_t>(p) * 3 + c] - 0.5;
      }
    }
  }
  t.cols1 = conv1_.im2col(t.input, batch);
  t.pre1 = conv1_.forward(params_, t.cols1);
  t.act1 = nn::silu(t.pre1);
  t.cols2 = conv2_.im2col(t.act1, batch);
  t.pre2 = conv2_.forward(params_, t.cols2);
  t.act2 = nn::silu(t.pre2);
  t.cols3 = conv3_.im2col(t.act2, batch);
  t.pre3 = conv3_.forward(params_, t.cols3);
  t.act3 = nn::silu(t.pre3);
  const Eigen::Index flat = static_cast<Eigen::Index>(conv3_.out_h) * conv3_.out_w * conv3_.cout;
  t.flat = Eigen::Map<const Mat>(t.act3.data(), batch, flat);
  t.pre4 = fc1_.forward(params_, t.flat);
  t.act4 = nn::silu(t.pre4);
  t.raw = fc2_.forward(params_, t.act4);
  t.output = nn::normalize_rows(t.raw, &t.norms);
  return t.output;
}

Mat MiniEmbedder::backward_images(const ImageTape& t, const Mat& d_embeddings, nn::ParameterSet* grads,
                                  bool need_input_grad) const {
  const int batch = t.batch;
  const Mat d_raw = nn::normalize_rows_backward(t.output, t.norms, d_embeddings);
  const Mat d_act4 = fc2_.backward(params_, t.act4, d_raw, grads);
  const Mat d_pre4 = nn::silu_backward(t.pre4, d_act4);
  const Mat d_flat = fc1_.backward(params_, t.flat, d_pre4, grads);
  const Mat d_act3 = Eigen::Map<const Mat>(d_flat.data(), t.act3.rows(), t.act3.cols());
  const Mat d_pre3 = nn::silu_backward(t.pre3, d_act3);
  const Mat d_act2 = conv3_.backward(params_, t.cols3, d_pre3, batch, grads, true);
  const Mat d_pre2 = nn::silu_backward(t.pre2, d_act2);
  const Mat d_act1 = conv2_.backward(params_, t.cols2, d_pre2, batch, grads, true);
  const Mat d_pre1 = nn::silu_backward(t.pre1, d_act1);
  const Mat d_input = conv1_.backward(params_, t.cols1, d_pre1, batch, grads, need_input_grad);
  if (!need_input_grad) return Mat();
  const Eigen::Index per_image = static_cast<Eigen::Index>(image_size_) * image_size_ * 3;
  return Eigen::Map<const Mat>(d_input.data(), batch, per_image);
}

Mat MiniEmbedder::text_features(const std::vector<std::string>& texts) const {
  static const std::unordered_map<std::string, int> index = [] {
    std::unordered_map<std::string, int> m;
    const auto& vocab = slot_vocabulary();
    for (std::size_t i = 0; i < vocab.size(); ++i) m.emplace(vocab[i], static_cast<int>(i));
    return m;
  }();
  Mat features = Mat::Zero(static_cast<Eigen::Index>(texts.size()), static_cast<Eigen::Index>(slot_vocabulary().size()));
  for (std::size_t n = 0; n < texts.size(); ++n) {
    parse_caption(texts[n]);  // validates the closed vocabulary
    for (const std::string& token : tokenize(texts[n])) {
      const auto it = index.find(token);
      if (it != index.end()) features(static_cast<Eigen::Index>(n), it->second) += 1.0;
    }
  }
  return features;
}

Mat MiniEmbedder::forward_texts(const Mat& features, Mat* raw, Vec* norms) const {
  Mat r = features * params_[text_weight_];
  r.rowwise() += params_[text_bias_].row(0);
  Mat out = nn::normalize_rows(r, norms);
  if (raw) *raw = std::move(r);
  return out;
}

void MiniEmbedder::backward_texts(const Mat& features, const Mat& output, const Vec& norms, const Mat& d_embeddings,
                                  nn::ParameterSet* grads) const {
  const Mat d_raw = nn::normalize_rows_backward(output, norms, d_embeddings);
  (*grads)[text_weight_].noalias() += features.transpose() * d_raw;
  (*grads)[text_bias_] += d_raw.colwise().sum();
}

double MiniEmbedder::temperature() const {
  return std::clamp(std::exp(params_[log_temperature_](0, 0)), cfg_.min_temperature, cfg_.max_temperature);
}

void MiniEmbedder::accumulate_temperature_grad(double d_tau, nn::ParameterSet* grads) const {
  const double raw = std::exp(params_[log_temperature_](0, 0));
  if (raw < cfg_.min_temperature || raw > cfg_.max_temperature) return;
  (*grads)[log_temperature_](0, 0) += d_tau * raw;
}

Embedding MiniEmbedder::embed_image(const Image& img) const {
  const Mat out = forward_images({&img}, nullptr);
  return out.row(0).transpose();
}

Embedding MiniEmbedder::embed_text(std::string_view text) const {
  const Mat out = forward_texts(text_features({std::string(text)}), nullptr, nullptr);
  return out.row(0).transpose();
}

Checkpoint MiniEmbedder::to_checkpoint(const nlohmann::json& extra_header) const {
  Checkpoint ckpt;
  ckpt.header = extra_header;
  ckpt.header["kind"] = "embedder";
  ckpt.header["image_size"] = image_size_;
  ckpt.header["embed_dim"] = dim_;
  ckpt.header["model"] = cfg_;
  ckpt.header["vocab"] = slot_vocabulary();
  ckpt.header["temperature"] = temperature();
  ckpt.params = params_;
  return ckpt;
}

MiniEmbedder MiniEmbedder::from_checkpoint(const Checkpoint& ckpt) {
  const auto& h = ckpt.header;
  if (h.value("kind", "") != "embedder") throw DataError("checkpoint is not an embedder checkpoint");
  if (h.at("vocab").get<std::vector<std::string>>() != slot_vocabulary()) {
    throw DataError("embedder checkpoint vocabulary differs from the grammar");
  }
  MiniEmbedder e(h.at("image_size").get<int>(), h.at("embed_dim").get<int>(), h.at("model").get<EmbedderConfig>(), 0);
  if (ckpt.params.size() != e.params_.size()) throw DataError("embedder checkpoint: block count mismatch");
  for (std::size_t i = 0; i < e.params_.size(); ++i) {
    if (ckpt.params.names[i] != e.params_.names[i] || ckpt.params[i].rows() != e.params_[i].rows() ||
        ckpt.params[i].cols() != e.params_[i].cols()) {
      throw DataError("embedder checkpoint: block '" + ckpt.params.names[i] + "' does not match the architecture");
    }
    e.params_[i] = ckpt.params[i];
  }
  return e;
}

// ---------------------------------------------------------------------------
// FileEmbedder

FileEmbedder::FileEmbedder(int dim, std::map<std::string, Embedding> table) : dim_(dim), table_(std::move(table)) {
  for (auto& [key, vec] : table_) {
    if (vec.size() != dim_) throw DataError("embedding table: inconsistent dimension for key " + key);
    vec.normalize();
  }
}

FileEmbedder::FileEmbedder(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open embedding table " + path.string());
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      const auto values = j.at("vec").get<std::vector<double>>();
      if (dim_ == 0) dim_ = static_cast<int>(values.size());
      if (static_cast<int>(values.size()) != dim_) throw DataError("inconsistent dimension");
      Vec v = Eigen::Map<const Vec>(values.data(), static_cast<Eigen::Index>(values.size()));
      if (!(v.norm() > 0.0)) throw DataError("zero vector");
      table_[j.at("key").get<std::string>()] = v.normalized();
    } catch (const std::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (dim_ == 0) throw DataError("embedding table " + path.string() + " is empty");
}

std::string FileEmbedder::image_key(const Image& img) {
  const auto bytes = quantize_image(img);
  std::string payload = "image:";
  payload.append(bytes.begin(), bytes.end());
  return sha256_hex(payload);
}

std::string FileEmbedder::text_key(std::string_view text) { return sha256_hex("text:" + std::string(text)); }

Embedding FileEmbedder::lookup(const std::string& key) const {
  const auto it = table_.find(key);
  if (it == table_.end()) throw DataError("embedding table has no entry for key " + key);
  return it->second;
}

Embedding FileEmbedder::embed_image(const Image& img) const { return lookup(image_key(img)); }

Embedding FileEmbedder::embed_text(std::string_view text) const { return lookup(text_key(text)); }

void FileEmbedder::export_table(const std::filesystem::path& path, const EmbedderBackend& source,
                                const std::vector<Image>& images, const std::vector<std::string>& texts) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  auto emit = [&](const std::string& key, const Embedding& e) {
    out << nlohmann::json{{"key", key}, {"vec", std::vector<double>(e.data(), e.data() + e.size())}}.dump() << '\n';
  };
  for (const Image& img : images) emit(image_key(img), source.embed_image(img));
  for (const std::string& t : texts) emit(text_key(t), source.embed_text(t));
}

// ---------------------------------------------------------------------------
// Contrastive objective

namespace {

// Softmax along rows (axis 0) or columns (axis 1).
Mat softmax(const Mat& logits, int axis) {
  Mat out(logits.rows(), logits.cols());
  if (axis == 0) {
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
      const double mx = logits.row(i).maxCoeff();
      out.row(i) = (logits.row(i).array() - mx).exp();
      out.row(i) /= out.row(i).sum();
    }
  } else {
    for (Eigen::Index j = 0; j < logits.cols(); ++j) {
      const double mx = logits.col(j).maxCoeff();
      out.col(j) = (logits.col(j).array() - mx).exp();
      out.col(j) /= out.col(j).sum();
    }
  }
  return out;
}

}  // namespace

ContrastiveResult contrastive_loss(const Mat& images, const Mat& texts, double temperature) {
  require(images.rows() == texts.rows() && images.rows() > 0, "contrastive_loss: need N >= 1 matched pairs");
  require(images.cols() == texts.cols(), "contrastive_loss: embedding width mismatch");
  const Eigen::Index n = images.rows();
  const Mat sim = images * texts.transpose();
  const Mat logits = sim / temperature;
  const Mat by_row = softmax(logits, 0);
  const Mat by_col = softmax(logits, 1);
  ContrastiveResult r;
  double row_loss = 0.0, col_loss = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    row_loss -= std::log(by_row(i, i));
    col_loss -= std::log(by_col(i, i));
  }
  r.loss = 0.5 * (row_loss + col_loss) / static_cast<double>(n);
  Mat d_logits = (by_row + by_col) / (2.0 * static_cast<double>(n));
  d_logits.diagonal().array() -= 1.0 / static_cast<double>(n);
  const Mat d_sim = d_logits / temperature;
  r.d_images = d_sim * texts;
  r.d_texts = d_sim.transpose() * images;
  r.d_temperature = -(d_logits.cwiseProduct(sim)).sum() / (temperature * temperature);
  return r;
}

double contrastive_loss(const MiniEmbedder& embedder, const std::vector<Image>& images,
                        const std::vector<Caption>& captions) {
  require(images.size() == captions.size(), "contrastive_loss: images and captions differ in count");
  std::set<std::string> seen;
  std::vector<std::string> texts;
  for (const auto& c : captions) {
    if (!seen.insert(c.text).second) spdlog::warn("contrastive_loss: duplicate caption '{}' makes labels ambiguous", c.text);
    texts.push_back(c.text);
  }
  std::vector<const Image*> ptrs;
  for (const auto& img : images) ptrs.push_back(&img);
  const Mat ie = embedder.forward_images(ptrs, nullptr);
  const Mat te = embedder.forward_texts(embedder.text_features(texts), nullptr, nullptr);
  return contrastive_loss(ie, te, embedder.temperature()).loss;
}

std::vector<std::vector<AttributeVector>> distinct_caption_batches(AttrDistribution dist, std::size_t batches,
                                                                   std::size_t batch_size, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::vector<AttributeVector>> out(batches);
  for (auto& batch : out) {
    std::set<std::string> seen;
    while (batch.size() < batch_size) {
      const AttributeVector a = draw_attrs(rng, dist);
      if (seen.insert(caption(a).text).second) batch.push_back(a);
    }
  }
  return out;
}

RetrievalAccuracy retrieval_accuracy(const EmbedderBackend& embedder,
                                     const std::vector<std::vector<AttributeVector>>& batches, const World& world) {
  RetrievalAccuracy acc;
  std::size_t total = 0;
  for (const auto& batch : batches) {
    const Eigen::Index n = static_cast<Eigen::Index>(batch.size());
    Mat ie(n, embedder.dim()), te(n, embedder.dim());
    for (Eigen::Index i = 0; i < n; ++i) {
      ie.row(i) = embedder.embed_image(world.render(batch[static_cast<std::size_t>(i)])).transpose();
      te.row(i) = embedder.embed_text(caption(batch[static_cast<std::size_t>(i)]).text).transpose();
    }
    const Mat sim = ie * te.transpose();
    for (Eigen::Index i = 0; i < n; ++i) {
      bool row_ok = true, col_ok = true;
      for (Eigen::Index j = 0; j < n; ++j) {
        if (j == i) continue;
        if (sim(i, j) >= sim(i, i)) row_ok = false;
        if (sim(j, i) >= sim(i, i)) col_ok = false;
      }
      acc.image_to_text += row_ok;
      acc.text_to_image += col_ok;
    }
    total += batch.size();
  }
  acc.image_to_text /= static_cast<double>(total);
  acc.text_to_image /= static_cast<double>(total);
  return acc;
}

namespace {

// Copy of a with the attributes behind one random caption slot redrawn.
AttributeVector slot_twin(const AttributeVector& a, Rng& rng, AttrDistribution dist) {
  static const std::vector<std::vector<Attr>> slot_attrs{{kSize}, {kRoundness}, {kFgR, kFgG, kFgB},
                                                         {kPosY}, {kPosX},      {kBgBrightness}};
  const auto& attrs = slot_attrs[static_cast<std::size_t>(rng.below(slot_attrs.size()))];
  for (;;) {
    const AttributeVector fresh = draw_attrs(rng, dist);
    AttributeVector out = a;
    for (Attr j : attrs) out[j] = fresh[j];
    if (contrast(out) >= kMinContrast) return out;
  }
}

}  // namespace

EmbedderTrainResult train_embedder(const World& world, const EmbedderConfig& model_cfg,
                                   const EmbedderTrainConfig& cfg) {
  if (cfg.batch_size <= 0 || cfg.max_steps <= 0 || cfg.eval_every <= 0 || cfg.eval_batches <= 0) {
    throw ConfigError("embedder: batch_size, max_steps, eval_every and eval_batches must be positive");
  }
  if (cfg.partial_rate < 0.0 || cfg.partial_rate > 1.0 || cfg.slot_keep < 0.0 || cfg.slot_keep > 1.0 ||
      cfg.twin_rate < 0.0 || cfg.twin_rate > 1.0) {
    throw ConfigError("embedder: partial_rate, slot_keep and twin_rate must lie in [0, 1]");
  }
  const AttrDistribution dist = parse_distribution(cfg.distribution);
  EmbedderTrainResult result{MiniEmbedder(world.image_size(), world.config().embed_dim, model_cfg,
                                          derive_seed(cfg.seed, 1)),
                             {},
                             {},
                             0,
                             false};
  MiniEmbedder& model = result.embedder;
  nn::Adam adam(model.params());
  const nn::MultiStepSchedule schedule{cfg.learning_rate, cfg.max_steps};
  nn::ParameterSet grads = model.params().zeros_like();
  const auto validation = distinct_caption_batches(dist, static_cast<std::size_t>(cfg.eval_batches),
                                                   static_cast<std::size_t>(cfg.batch_size), derive_seed(cfg.seed, 2));
  Rng data_rng(derive_seed(cfg.seed, 3));

  auto evaluate = [&](int step, double target) {
    result.final_accuracy = retrieval_accuracy(model, validation, world);
    result.log.push_back({step, "embedder", "retrieval_i2t", result.final_accuracy.image_to_text});
    result.log.push_back({step, "embedder", "retrieval_t2i", result.final_accuracy.text_to_image});
    spdlog::info("embedder step {} retrieval i2t={:.4f} t2i={:.4f}", step, result.final_accuracy.image_to_text,
                 result.final_accuracy.text_to_image);
    return result.final_accuracy.image_to_text >= target && result.final_accuracy.text_to_image >= target;
  };

  std::vector<Image> images(static_cast<std::size_t>(cfg.batch_size));
  std::vector<std::string> texts(static_cast<std::size_t>(cfg.batch_size));
  std::vector<const Image*> ptrs;
  for (const auto& img : images) ptrs.push_back(&img);
  bool reached = false;
  int step = 0;
  for (; step < cfg.max_steps && !reached; ++step) {
    std::set<std::string> seen;
    std::size_t filled = 0;
    AttributeVector last;
    while (filled < images.size()) {
      const bool twin = filled > 0 && data_rng.uniform() < cfg.twin_rate;
      const AttributeVector a = twin ? slot_twin(last, data_rng, dist) : draw_attrs(data_rng, dist);
      QuantizedLabels labels = quantize(a);
      if (!twin && data_rng.uniform() < cfg.partial_rate) {
        for (auto& l : labels.labels) {
          if (data_rng.uniform() >= cfg.slot_keep) l.reset();
        }
      }
      std::string text = caption_text(labels);
      if (!seen.insert(text).second) continue;
      last = a;
      images[filled] = world.render(a);
      texts[filled] = std::move(text);
      ++filled;
    }
    ImageTape tape;
    const Mat ie = model.forward_images(ptrs, &tape);
    const Mat features = model.text_features(texts);
    Vec text_norms;
    const Mat te = model.forward_texts(features, nullptr, &text_norms);
    const ContrastiveResult loss = contrastive_loss(ie, te, model.temperature());
    if (!std::isfinite(loss.loss)) throw DivergenceError("embedder loss is not finite at step " + std::to_string(step));
    grads.set_zero();
    model.backward_images(tape, loss.d_images, &grads, false);
    model.backward_texts(features, te, text_norms, loss.d_texts, &grads);
    model.accumulate_temperature_grad(loss.d_temperature, &grads);
    adam.step(model.params(), grads, schedule.rate(step));
    if (step % 50 == 0) result.log.push_back({step, "embedder", "contrastive", loss.loss});
    if ((step + 1) % cfg.eval_every == 0) reached = evaluate(step + 1, cfg.target_accuracy + cfg.stop_margin);
  }
  result.steps = step;
  // Evaluate the weights exactly as they will be stored.
  model.params().round_to_float();
  reached = evaluate(step, cfg.target_accuracy);
  result.below_target = !reached;
  return result;
}

}  // namespace spacealign
