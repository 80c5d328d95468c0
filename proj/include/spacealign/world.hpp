#pragma once

#include "spacealign/common.hpp"

#include <json.hpp>

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace spacealign {

inline constexpr std::size_t kNumAttributes = 8;

enum Attr : std::size_t { kSize, kRoundness, kPosX, kPosY, kFgR, kFgG, kFgB, kBgBrightness };

std::string_view attribute_name(std::size_t index);
// Throws ContractError for unknown names.
std::size_t attribute_index(std::string_view name);

// Ground-truth semantic state of one toy image. Components live in [0, 1].
struct AttributeVector {
  std::array<double, kNumAttributes> values{};

  double& operator[](std::size_t i) { return values[i]; }
  double operator[](std::size_t i) const { return values[i]; }

  static AttributeVector filled(double v) {
    AttributeVector a;
    a.values.fill(v);
    return a;
  }
  bool operator==(const AttributeVector&) const = default;
};

// Max-channel contrast between foreground and background.
double contrast(const AttributeVector& a);

// Height x width x 3 image, row-major HWC, values in [0, 1].
struct Image {
  int height = 0;
  int width = 0;
  std::vector<double> pixels;

  Image() = default;
  Image(int h, int w, double fill = 0.0) : height(h), width(w), pixels(static_cast<std::size_t>(h) * w * 3, fill) {}

  double& at(int y, int x, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  double at(int y, int x, int c) const { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  std::size_t size() const { return pixels.size(); }
  bool operator==(const Image&) const = default;
};

// Layered generator latent: num_layers rows of layer_dim values.
class LatentCode {
 public:
  LatentCode() = default;
  LatentCode(int layers, int dim) : rows_(Mat::Zero(layers, dim)) {}
  explicit LatentCode(Mat rows) : rows_(std::move(rows)) {}

  int layers() const { return static_cast<int>(rows_.rows()); }
  int dim() const { return static_cast<int>(rows_.cols()); }
  Mat& rows() { return rows_; }
  const Mat& rows() const { return rows_; }
  auto row(int layer) { return rows_.row(layer); }
  auto row(int layer) const { return rows_.row(layer); }
  bool same_shape(const LatentCode& other) const { return layers() == other.layers() && dim() == other.dim(); }
  bool operator==(const LatentCode& other) const { return same_shape(other) && rows_ == other.rows_; }

 private:
  Mat rows_;
};

// One layer's C-dim code (a W-style code before broadcasting).
using LayerCode = Vec;

struct WorldConfig {
  int image_size = 32;
  int num_layers = 4;
  int layer_dim = 16;
  int embed_dim = 32;
  // Layer index for each attribute, in attribute order.
  std::array<int, kNumAttributes> layer_assignment{0, 0, 1, 1, 2, 2, 2, 3};
  double logit_scale = 2.0;
  // Edge ramp width in pixels: the distance over which coverage goes from 1% to 99%.
  double tau = 1.5;
  std::uint64_t seed = 7;

  void validate() const;

  // L=2, C=4, D=8, 8x8 images; used for finite-difference checks.
  static WorldConfig tiny();
};

void to_json(nlohmann::json& j, const WorldConfig& cfg);
// Rejects unknown and missing keys with ConfigError.
void from_json(const nlohmann::json& j, WorldConfig& cfg);

struct AttributeEstimate {
  AttributeVector attrs;
  // False for slots the oracle could not measure (empty foreground mask).
  std::array<bool, kNumAttributes> detected{};

  bool shape_detected() const { return detected[kSize]; }
};

struct EstimateOptions {
  // Levenberg-Marquardt refinement of the moment estimate against render().
  bool refine = true;
  int max_iterations = 30;
};

// Procedural shape world: toy generator semantics, differentiable renderer
// and the pixel-level attribute oracle. Immutable after construction.
class World {
 public:
  explicit World(WorldConfig cfg);

  const WorldConfig& config() const { return cfg_; }
  int layers() const { return cfg_.num_layers; }
  int layer_dim() const { return cfg_.layer_dim; }
  int image_size() const { return cfg_.image_size; }

  // Unit direction m_j of attribute j inside its layer.
  const Vec& direction(std::size_t attr) const { return directions_[attr]; }
  int layer_of(std::size_t attr) const { return cfg_.layer_assignment[attr]; }

  AttributeVector attrs_from_latent(const LatentCode& w) const;
  // Pulls a gradient w.r.t. attributes back to the latent.
  LatentCode attrs_from_latent_backward(const LatentCode& w, const AttributeVector& grad_attrs) const;
  LatentCode canonical_latent(const AttributeVector& a) const;

  Image render(const AttributeVector& a) const;
  // Vector-Jacobian product of render() at a.
  AttributeVector render_backward(const AttributeVector& a, const Image& grad_image) const;
  // Full Jacobian, one row per pixel channel (HWC order), one column per attribute.
  Mat render_jacobian(const AttributeVector& a, Image* image = nullptr) const;

  AttributeEstimate estimate_attrs(const Image& img, const EstimateOptions& options = {}) const;

  void check_latent(const LatentCode& w) const;
  void check_image(const Image& img) const;

 private:
  struct Geometry {
    double radius, exponent, cx, cy;
  };
  Geometry geometry(const AttributeVector& a) const;
  double edge_scale() const;
  double roundness_from_moment(double moment) const;
  AttributeVector moment_estimate(const Image& img, double bg, const std::vector<bool>& mask) const;
  AttributeVector refine_estimate(const Image& img, AttributeVector start, int max_iterations) const;

  WorldConfig cfg_;
  std::vector<Vec> directions_;
  // Monotone table (fourth-moment ratio -> roundness) built against render().
  std::vector<std::pair<double, double>> roundness_table_;
};

// Normalized fourth-moment ratio E[x^4 + y^4] / E[(x^2 + y^2)^2] of a soft
// coverage map around its centroid: 0.75 for a disc, ~0.64 for a square.
double coverage_fourth_moment(const std::vector<double>& coverage, int height, int width);

enum class AttrDistribution { real, uniform };
AttrDistribution parse_distribution(std::string_view name);

// Seeded attribute samples. "real" draws Beta(2,2) per attribute, "uniform"
// draws U(0,1). Samples with contrast below kMinContrast are rejected.
inline constexpr double kMinContrast = 0.2;
std::vector<AttributeVector> sample_attrs(AttrDistribution dist, std::size_t n, std::uint64_t seed);

class Rng;
// One contrast-respecting draw from an existing stream.
AttributeVector draw_attrs(Rng& rng, AttrDistribution dist);

}  // namespace spacealign
