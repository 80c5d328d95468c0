#include "spacealign/generator.hpp"

#include "spacealign/hashing.hpp"
#include "spacealign/image_io.hpp"
#include "spacealign/rng.hpp"

#include <bit>
#include <cmath>
#include <fstream>

namespace spacealign {

Image ToyGenerator::generate(const LatentCode& w) const { return world_->render(world_->attrs_from_latent(w)); }

LatentCode ToyGenerator::generate_backward(const LatentCode& w, const Image& grad_image) const {
  const AttributeVector a = world_->attrs_from_latent(w);
  return world_->attrs_from_latent_backward(w, world_->render_backward(a, grad_image));
}

std::string latent_hash(const LatentCode& w) {
  std::vector<std::uint8_t> bytes;
  auto put = [&bytes](std::uint64_t v) {
    for (int b = 0; b < 8; ++b) bytes.push_back(static_cast<std::uint8_t>(v >> (8 * b)));
  };
  put(static_cast<std::uint64_t>(w.layers()));
  put(static_cast<std::uint64_t>(w.dim()));
  const Mat& m = w.rows();
  for (Eigen::Index i = 0; i < m.size(); ++i) put(std::bit_cast<std::uint64_t>(m.data()[i]));
  return sha256_hex(std::span<const std::uint8_t>(bytes));
}

LatentCode snap_to_grid(const LatentCode& w) {
  LatentCode out = w;
  for (Eigen::Index i = 0; i < out.rows().size(); ++i) {
    double& v = out.rows().data()[i];
    if (!std::isfinite(v) || std::abs(v) >= kLatentLimit) throw ContractError("latent value outside the grid range");
    v = std::nearbyint(v / kLatentGrid) * kLatentGrid;
  }
  return out;
}

bool on_grid(const LatentCode& w) {
  for (Eigen::Index i = 0; i < w.rows().size(); ++i) {
    const double v = w.rows().data()[i];
    if (!(std::abs(v) < kLatentLimit) || std::nearbyint(v / kLatentGrid) * kLatentGrid != v) return false;
  }
  return true;
}

LatentCode broadcast(const LayerCode& w_s, int layers) {
  require(layers > 0, "broadcast: need at least one layer");
  LatentCode w(layers, static_cast<int>(w_s.size()));
  for (int l = 0; l < layers; ++l) w.row(l) = w_s.transpose();
  return w;
}

std::vector<LayerCode> sample_ws(std::size_t n, int layer_dim, std::uint64_t seed, double sigma) {
  require(n > 0 && layer_dim > 0, "sample_ws: n and layer_dim must be positive");
  require(sigma > 0.0, "sample_ws: sigma must be positive");
  Rng rng(seed);
  std::vector<LayerCode> out(n, LayerCode(layer_dim));
  for (auto& w : out) {
    for (int i = 0; i < layer_dim; ++i) w[i] = rng.normal(0.0, sigma);
  }
  return out;
}

LatentCode CanonicalInversion::invert(const Image& img) const {
  world_->check_image(img);
  const AttributeEstimate est = world_->estimate_attrs(img);
  if (!est.shape_detected()) throw UndetectedError("inversion failed: no shape detected (undetected)");
  return snap_to_grid(world_->canonical_latent(est.attrs));
}

NoisyInversion::NoisyInversion(const World& world, std::uint64_t seed) : world_(&world), seed_(seed) {
  const int layers = world.layers();
  const int dim = world.layer_dim();
  bias_ = Mat::Zero(layers, dim);
  for (int l = 0; l < layers; ++l) {
    Rng rng(derive_seed(seed, 100 + static_cast<std::uint64_t>(l)));
    Vec v(dim);
    for (int i = 0; i < dim; ++i) v[i] = rng.normal();
    bias_.row(l) = (kBiasScale * std::sqrt(static_cast<double>(dim)) / v.norm()) * v.transpose();

    std::vector<std::size_t> attrs;
    for (std::size_t j = 0; j < kNumAttributes; ++j) {
      if (world.layer_of(j) == l) attrs.push_back(j);
    }
    if (attrs.empty()) {
      complement_.push_back(Mat::Identity(dim, dim));
      continue;
    }
    Eigen::MatrixXd m(dim, static_cast<Eigen::Index>(attrs.size()));
    for (std::size_t k = 0; k < attrs.size(); ++k) m.col(static_cast<Eigen::Index>(k)) = world.direction(attrs[k]);
    const Eigen::HouseholderQR<Eigen::MatrixXd> qr(m);
    const Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(dim, dim);
    complement_.push_back(q.rightCols(dim - static_cast<Eigen::Index>(attrs.size())));
  }
}

LatentCode NoisyInversion::invert(const Image& img) const {
  LatentCode w = CanonicalInversion(*world_).invert(img);
  const std::string key = image_hash(img);
  Rng rng(derive_seed(seed_, std::stoull(key.substr(0, 16), nullptr, 16)));
  for (int l = 0; l < w.layers(); ++l) {
    const Mat& basis = complement_[static_cast<std::size_t>(l)];
    Vec z(basis.cols());
    for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = rng.normal(0.0, kNoiseSigma);
    w.row(l) += bias_.row(l) + (basis * z).transpose();
  }
  return snap_to_grid(w);
}

nlohmann::json latent_to_json(const LatentCode& w) {
  const Mat& m = w.rows();
  return nlohmann::json{{"shape", {w.layers(), w.dim()}}, {"data", std::vector<double>(m.data(), m.data() + m.size())}};
}

LatentCode latent_from_json(const nlohmann::json& j) {
  const auto shape = j.at("shape").get<std::vector<int>>();
  const auto data = j.at("data").get<std::vector<double>>();
  if (shape.size() != 2 || shape[0] <= 0 || shape[1] <= 0 ||
      data.size() != static_cast<std::size_t>(shape[0]) * static_cast<std::size_t>(shape[1])) {
    throw DataError("latent record: shape does not match data length");
  }
  LatentCode w(shape[0], shape[1]);
  std::copy(data.begin(), data.end(), w.rows().data());
  return w;
}

void write_latents(const std::filesystem::path& path, const std::vector<LatentCode>& codes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& w : codes) out << latent_to_json(w).dump() << '\n';
}

std::vector<LatentCode> read_latents(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<LatentCode> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      out.push_back(latent_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace spacealign
