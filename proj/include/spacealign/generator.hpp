#pragma once

#include "spacealign/world.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace spacealign {

// Layered generator G(w). Must be differentiable with respect to w.
class GeneratorBackend {
 public:
  virtual ~GeneratorBackend() = default;
  virtual int layers() const = 0;
  virtual int layer_dim() const = 0;
  virtual Image generate(const LatentCode& w) const = 0;
  // dL/dw given dL/dimage at w.
  virtual LatentCode generate_backward(const LatentCode& w, const Image& grad_image) const = 0;
  virtual std::string name() const = 0;
};

// render(attrs_from_latent(w)).
class ToyGenerator final : public GeneratorBackend {
 public:
  explicit ToyGenerator(const World& world) : world_(&world) {}
  int layers() const override { return world_->layers(); }
  int layer_dim() const override { return world_->layer_dim(); }
  Image generate(const LatentCode& w) const override;
  LatentCode generate_backward(const LatentCode& w, const Image& grad_image) const override;
  std::string name() const override { return "toy"; }
  const World& world() const { return *world_; }

 private:
  const World* world_;
};

// Latent codes handed from inversion to editing sit on a 2^-32 grid. Sums and
// differences of grid values below 2^20 are exact in double precision, which
// makes shift arithmetic (antisymmetry, alpha-linearity, +1/-1 round trips)
// bit-exact.
inline constexpr double kLatentGrid = 0x1.0p-32;
inline constexpr double kLatentLimit = 0x1.0p20;
LatentCode snap_to_grid(const LatentCode& w);
bool on_grid(const LatentCode& w);

// Every row equals w_s.
LatentCode broadcast(const LayerCode& w_s, int layers);

// i.i.d. N(0, sigma^2) components.
std::vector<LayerCode> sample_ws(std::size_t n, int layer_dim, std::uint64_t seed, double sigma = 1.0);

class InversionBackend {
 public:
  virtual ~InversionBackend() = default;
  // Throws UndetectedError when the oracle finds no shape.
  virtual LatentCode invert(const Image& img) const = 0;
  virtual std::string name() const = 0;
};

// canonical_latent(estimate_attrs(img)), snapped to the latent grid.
class CanonicalInversion final : public InversionBackend {
 public:
  explicit CanonicalInversion(const World& world) : world_(&world) {}
  LatentCode invert(const Image& img) const override;
  std::string name() const override { return "canonical"; }

 private:
  const World* world_;
};

// Encoder surrogate with a systematic offset: the canonical code plus a fixed
// per-layer bias of norm 0.1*sqrt(C), plus sigma=0.02 noise restricted to the
// orthogonal complement of the attribute directions. The noise is keyed on
// the image content so repeated inversions agree.
class NoisyInversion final : public InversionBackend {
 public:
  static constexpr double kBiasScale = 0.1;
  static constexpr double kNoiseSigma = 0.02;

  NoisyInversion(const World& world, std::uint64_t seed);
  LatentCode invert(const Image& img) const override;
  std::string name() const override { return "noisy"; }
  const Mat& bias() const { return bias_; }

 private:
  const World* world_;
  std::uint64_t seed_;
  Mat bias_;
  // Per layer: orthonormal basis (columns) of the complement of the layer's attribute directions.
  std::vector<Mat> complement_;
};

// SHA-256 over the little-endian float64 values (row-major) and the shape.
std::string latent_hash(const LatentCode& w);

// JSON-lines latent I/O: one {"shape": [L, C], "data": [row-major floats]} per line.
nlohmann::json latent_to_json(const LatentCode& w);
LatentCode latent_from_json(const nlohmann::json& j);
void write_latents(const std::filesystem::path& path, const std::vector<LatentCode>& codes);
std::vector<LatentCode> read_latents(const std::filesystem::path& path);

}  // namespace spacealign
