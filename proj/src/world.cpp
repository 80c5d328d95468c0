#include "spacealign/world.hpp"

#include "spacealign/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace spacealign {

namespace {

constexpr std::array<std::string_view, kNumAttributes> kAttributeNames{
    "size", "roundness", "pos_x", "pos_y", "fg_r", "fg_g", "fg_b", "bg_brightness"};

// Physical mapping of the renderer, shared with the estimator's inversion.
constexpr double kRadiusBase = 0.10;
constexpr double kRadiusSpan = 0.15;
constexpr double kExponentBase = 2.0;
constexpr double kExponentSpan = 10.0;
constexpr double kCenterBase = 0.35;
constexpr double kCenterSpan = 0.30;

// Coverage beyond this many edge scales is saturated to within e^-40.
constexpr double kSaturation = 40.0;
constexpr double kMaskThreshold = 0.1;

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }
double logit(double p) { return std::log(p / (1.0 - p)); }

struct NormEval {
  double rho = 0.0;
  double d_dx = 0.0;
  double d_dy = 0.0;
  double d_dp = 0.0;
};

// rho = (|dx|^p + |dy|^p)^(1/p) with its partials; the cone tip at the
// origin gets zero gradient.
NormEval superellipse_norm(double dx, double dy, double p, bool want_grad) {
  NormEval out;
  const double ax = std::abs(dx), ay = std::abs(dy);
  const double big = std::max(ax, ay);
  if (big == 0.0) return out;
  const double ux = ax / big, uy = ay / big;
  const double tx = ux > 0.0 ? std::pow(ux, p) : 0.0;
  const double ty = uy > 0.0 ? std::pow(uy, p) : 0.0;
  const double total = tx + ty;
  const double root = std::pow(total, 1.0 / p);
  out.rho = big * root;
  if (!want_grad) return out;
  // (a/rho)^(p-1) rewritten as (t/u) * T^(1/p) / T to avoid extra pow calls.
  const double scale = root / total;
  out.d_dx = ux > 0.0 ? std::copysign(tx / ux * scale, dx) : 0.0;
  out.d_dy = uy > 0.0 ? std::copysign(ty / uy * scale, dy) : 0.0;
  const double lx = ux > 0.0 ? tx * std::log(ux) : 0.0;
  const double ly = uy > 0.0 ? ty * std::log(uy) : 0.0;
  out.d_dp = out.rho * (-std::log(total) / (p * p) + (lx + ly) / (p * total));
  return out;
}

// Area of the unit superellipse |x|^p + |y|^p <= 1.
double superellipse_unit_area(double p) {
  return 4.0 * std::pow(std::tgamma(1.0 + 1.0 / p), 2.0) / std::tgamma(1.0 + 2.0 / p);
}

}  // namespace

std::string_view attribute_name(std::size_t index) {
  require(index < kNumAttributes, "attribute index out of range");
  return kAttributeNames[index];
}

std::size_t attribute_index(std::string_view name) {
  for (std::size_t i = 0; i < kNumAttributes; ++i) {
    if (kAttributeNames[i] == name) return i;
  }
  throw ContractError("unknown attribute '" + std::string(name) + "'");
}

double contrast(const AttributeVector& a) {
  double best = 0.0;
  for (std::size_t c = kFgR; c <= kFgB; ++c) best = std::max(best, std::abs(a[c] - a[kBgBrightness]));
  return best;
}

// ---------------------------------------------------------------------------
// WorldConfig

void WorldConfig::validate() const {
  if (image_size < 8) throw ConfigError("world.image_size must be >= 8");
  if (num_layers < 1 || layer_dim < 1 || embed_dim < 1) throw ConfigError("world dimensions must be positive");
  if (!(logit_scale > 0.0)) throw ConfigError("world.logit_scale must be positive");
  if (!(tau > 0.0)) throw ConfigError("world.tau must be positive");
  std::vector<int> per_layer(static_cast<std::size_t>(num_layers), 0);
  for (int layer : layer_assignment) {
    if (layer < 0 || layer >= num_layers) throw ConfigError("world.layer_assignment references a missing layer");
    if (++per_layer[static_cast<std::size_t>(layer)] > layer_dim) {
      throw ConfigError("world.layer_assignment puts more attributes on a layer than layer_dim");
    }
  }
}

WorldConfig WorldConfig::tiny() {
  WorldConfig cfg;
  cfg.image_size = 8;
  cfg.num_layers = 2;
  cfg.layer_dim = 4;
  cfg.embed_dim = 8;
  cfg.layer_assignment = {0, 0, 0, 0, 1, 1, 1, 1};
  return cfg;
}

void to_json(nlohmann::json& j, const WorldConfig& cfg) {
  nlohmann::json assignment = nlohmann::json::object();
  for (std::size_t i = 0; i < kNumAttributes; ++i) assignment[std::string(kAttributeNames[i])] = cfg.layer_assignment[i];
  j = nlohmann::json{{"image_size", cfg.image_size}, {"num_layers", cfg.num_layers}, {"layer_dim", cfg.layer_dim},
                     {"embed_dim", cfg.embed_dim},   {"layer_assignment", assignment}, {"logit_scale", cfg.logit_scale},
                     {"tau", cfg.tau},               {"seed", cfg.seed}};
}

void from_json(const nlohmann::json& j, WorldConfig& cfg) {
  static const std::vector<std::string> kKeys{"image_size", "num_layers",  "layer_dim", "embed_dim",
                                              "layer_assignment", "logit_scale", "tau", "seed"};
  if (!j.is_object()) throw ConfigError("world config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (std::find(kKeys.begin(), kKeys.end(), key) == kKeys.end()) throw ConfigError("world: unknown key '" + key + "'");
  }
  for (const auto& key : kKeys) {
    if (!j.contains(key)) throw ConfigError("world: missing key '" + key + "'");
  }
  try {
    cfg.image_size = j.at("image_size").get<int>();
    cfg.num_layers = j.at("num_layers").get<int>();
    cfg.layer_dim = j.at("layer_dim").get<int>();
    cfg.embed_dim = j.at("embed_dim").get<int>();
    cfg.logit_scale = j.at("logit_scale").get<double>();
    cfg.tau = j.at("tau").get<double>();
    cfg.seed = j.at("seed").get<std::uint64_t>();
    const auto& assignment = j.at("layer_assignment");
    if (!assignment.is_object() || assignment.size() != kNumAttributes) {
      throw ConfigError("world.layer_assignment must map all 8 attributes");
    }
    for (const auto& [name, layer] : assignment.items()) {
      std::size_t index = 0;
      try {
        index = attribute_index(name);
      } catch (const ContractError&) {
        throw ConfigError("world.layer_assignment: unknown attribute '" + name + "'");
      }
      cfg.layer_assignment[index] = layer.get<int>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("world config: ") + e.what());
  }
  cfg.validate();
}

// ---------------------------------------------------------------------------
// World

World::World(WorldConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  directions_.assign(kNumAttributes, Vec::Zero(cfg_.layer_dim));
  for (int layer = 0; layer < cfg_.num_layers; ++layer) {
    Rng rng(derive_seed(cfg_.seed, 100 + static_cast<std::uint64_t>(layer)));
    std::vector<std::size_t> members;
    for (std::size_t j = 0; j < kNumAttributes; ++j) {
      if (cfg_.layer_assignment[j] == layer) members.push_back(j);
    }
    std::vector<Vec> basis;
    for (std::size_t j : members) {
      Vec v(cfg_.layer_dim);
      for (int k = 0; k < cfg_.layer_dim; ++k) v[k] = rng.normal();
      // Two Gram-Schmidt passes keep orthogonality at machine precision.
      for (int pass = 0; pass < 2; ++pass) {
        for (const Vec& b : basis) v -= v.dot(b) * b;
      }
      v.normalize();
      basis.push_back(v);
      directions_[j] = v;
    }
  }

  // Calibrate the fourth-moment statistic against the renderer: a large
  // white shape, centered, on black.
  constexpr int kSteps = 41;
  std::vector<double> moments(kSteps);
  std::vector<double> roundness(kSteps);
  for (int i = 0; i < kSteps; ++i) {
    AttributeVector a = AttributeVector::filled(0.5);
    a[kSize] = 1.0;
    a[kRoundness] = static_cast<double>(i) / (kSteps - 1);
    a[kFgR] = a[kFgG] = a[kFgB] = 1.0;
    a[kBgBrightness] = 0.0;
    const Image img = render(a);
    std::vector<double> coverage(static_cast<std::size_t>(img.height) * img.width);
    for (std::size_t p = 0; p < coverage.size(); ++p) coverage[p] = img.pixels[p * 3];
    moments[i] = coverage_fourth_moment(coverage, img.height, img.width);
    roundness[i] = a[kRoundness];
  }
  // Enforce monotonicity so the inverse lookup is well defined.
  for (int i = 1; i < kSteps; ++i) moments[i] = std::max(moments[i], moments[i - 1] + 1e-12);
  for (int i = 0; i < kSteps; ++i) roundness_table_.emplace_back(moments[i], roundness[i]);
}

void World::check_latent(const LatentCode& w) const {
  if (w.layers() != cfg_.num_layers || w.dim() != cfg_.layer_dim) {
    throw ContractError("latent shape " + std::to_string(w.layers()) + "x" + std::to_string(w.dim()) +
                        " does not match world " + std::to_string(cfg_.num_layers) + "x" +
                        std::to_string(cfg_.layer_dim));
  }
}

void World::check_image(const Image& img) const {
  if (img.height != cfg_.image_size || img.width != cfg_.image_size ||
      img.pixels.size() != static_cast<std::size_t>(img.height) * img.width * 3) {
    throw ContractError("image shape " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                        " does not match world " + std::to_string(cfg_.image_size) + "x" +
                        std::to_string(cfg_.image_size));
  }
}

AttributeVector World::attrs_from_latent(const LatentCode& w) const {
  check_latent(w);
  AttributeVector a;
  for (std::size_t j = 0; j < kNumAttributes; ++j) {
    a[j] = logistic(w.row(layer_of(j)).dot(directions_[j].transpose()) / cfg_.logit_scale);
  }
  return a;
}

LatentCode World::attrs_from_latent_backward(const LatentCode& w, const AttributeVector& grad_attrs) const {
  check_latent(w);
  LatentCode grad(cfg_.num_layers, cfg_.layer_dim);
  for (std::size_t j = 0; j < kNumAttributes; ++j) {
    const double a = logistic(w.row(layer_of(j)).dot(directions_[j].transpose()) / cfg_.logit_scale);
    grad.row(layer_of(j)) += (grad_attrs[j] * a * (1.0 - a) / cfg_.logit_scale) * directions_[j].transpose();
  }
  return grad;
}

LatentCode World::canonical_latent(const AttributeVector& a) const {
  LatentCode w(cfg_.num_layers, cfg_.layer_dim);
  for (std::size_t j = 0; j < kNumAttributes; ++j) {
    const double clamped = std::clamp(a[j], 0.01, 0.99);
    w.row(layer_of(j)) += (cfg_.logit_scale * logit(clamped)) * directions_[j].transpose();
  }
  return w;
}

World::Geometry World::geometry(const AttributeVector& a) const {
  const double s = cfg_.image_size;
  return Geometry{(kRadiusBase + kRadiusSpan * a[kSize]) * s / 2.0,
                  kExponentBase + kExponentSpan * (1.0 - a[kRoundness]), (kCenterBase + kCenterSpan * a[kPosX]) * s,
                  (kCenterBase + kCenterSpan * a[kPosY]) * s};
}

double World::edge_scale() const { return cfg_.tau / (2.0 * std::log(99.0)); }

Image World::render(const AttributeVector& a) const {
  const int n = cfg_.image_size;
  const Geometry g = geometry(a);
  const double kappa = edge_scale();
  const double bg = a[kBgBrightness];
  Image img(n, n, bg);
  const double outer = g.radius + kSaturation * kappa;
  const double inner = (g.radius - kSaturation * kappa) / std::sqrt(2.0);
  for (int y = 0; y < n; ++y) {
    const double dy = y + 0.5 - g.cy;
    for (int x = 0; x < n; ++x) {
      const double dx = x + 0.5 - g.cx;
      const double big = std::max(std::abs(dx), std::abs(dy));
      double m = 0.0;
      if (big > outer) {
        continue;
      } else if (big < inner) {
        m = 1.0;
      } else {
        const NormEval e = superellipse_norm(dx, dy, g.exponent, false);
        m = logistic(-(e.rho - g.radius) / kappa);
      }
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = bg + m * (a[kFgR + c] - bg);
    }
  }
  return img;
}

AttributeVector World::render_backward(const AttributeVector& a, const Image& grad_image) const {
  check_image(grad_image);
  const int n = cfg_.image_size;
  const double s = n;
  const Geometry g = geometry(a);
  const double kappa = edge_scale();
  const double bg = a[kBgBrightness];
  const double outer = g.radius + kSaturation * kappa;
  const double inner = (g.radius - kSaturation * kappa) / std::sqrt(2.0);
  AttributeVector grad;
  for (int y = 0; y < n; ++y) {
    const double dy = y + 0.5 - g.cy;
    for (int x = 0; x < n; ++x) {
      const double dx = x + 0.5 - g.cx;
      const double big = std::max(std::abs(dx), std::abs(dy));
      const double g0 = grad_image.at(y, x, 0), g1 = grad_image.at(y, x, 1), g2 = grad_image.at(y, x, 2);
      if (big > outer) {
        grad[kBgBrightness] += g0 + g1 + g2;
        continue;
      }
      if (big < inner) {
        grad[kFgR] += g0;
        grad[kFgG] += g1;
        grad[kFgB] += g2;
        continue;
      }
      const NormEval e = superellipse_norm(dx, dy, g.exponent, true);
      const double m = logistic(-(e.rho - g.radius) / kappa);
      grad[kFgR] += g0 * m;
      grad[kFgG] += g1 * m;
      grad[kFgB] += g2 * m;
      grad[kBgBrightness] += (g0 + g1 + g2) * (1.0 - m);
      // dL/dm, then through the signed distance d = rho - r.
      const double dl_dm = g0 * (a[kFgR] - bg) + g1 * (a[kFgG] - bg) + g2 * (a[kFgB] - bg);
      const double dl_dd = dl_dm * (-m * (1.0 - m) / kappa);
      grad[kSize] += dl_dd * (-kRadiusSpan * s / 2.0);
      grad[kRoundness] += dl_dd * e.d_dp * (-kExponentSpan);
      grad[kPosX] += dl_dd * e.d_dx * (-kCenterSpan * s);
      grad[kPosY] += dl_dd * e.d_dy * (-kCenterSpan * s);
    }
  }
  return grad;
}

Mat World::render_jacobian(const AttributeVector& a, Image* image) const {
  const int n = cfg_.image_size;
  const double s = n;
  const Geometry g = geometry(a);
  const double kappa = edge_scale();
  const double bg = a[kBgBrightness];
  const double outer = g.radius + kSaturation * kappa;
  const double inner = (g.radius - kSaturation * kappa) / std::sqrt(2.0);
  Mat jac = Mat::Zero(static_cast<Eigen::Index>(n) * n * 3, kNumAttributes);
  if (image) *image = Image(n, n, bg);
  for (int y = 0; y < n; ++y) {
    const double dy = y + 0.5 - g.cy;
    for (int x = 0; x < n; ++x) {
      const double dx = x + 0.5 - g.cx;
      const Eigen::Index row = (static_cast<Eigen::Index>(y) * n + x) * 3;
      const double big = std::max(std::abs(dx), std::abs(dy));
      if (big > outer) {
        for (int c = 0; c < 3; ++c) jac(row + c, kBgBrightness) = 1.0;
        continue;
      }
      double m = 1.0;
      NormEval e;
      if (big >= inner) {
        e = superellipse_norm(dx, dy, g.exponent, true);
        m = logistic(-(e.rho - g.radius) / kappa);
      }
      const double dm_dd = -m * (1.0 - m) / kappa;
      for (int c = 0; c < 3; ++c) {
        const double diff = a[kFgR + c] - bg;
        jac(row + c, kFgR + c) = m;
        jac(row + c, kBgBrightness) = 1.0 - m;
        if (big >= inner) {
          const double dv_dd = diff * dm_dd;
          jac(row + c, kSize) = dv_dd * (-kRadiusSpan * s / 2.0);
          jac(row + c, kRoundness) = dv_dd * e.d_dp * (-kExponentSpan);
          jac(row + c, kPosX) = dv_dd * e.d_dx * (-kCenterSpan * s);
          jac(row + c, kPosY) = dv_dd * e.d_dy * (-kCenterSpan * s);
        }
        if (image) image->at(y, x, c) = bg + m * diff;
      }
    }
  }
  return jac;
}

// ---------------------------------------------------------------------------
// Pixel oracle

double coverage_fourth_moment(const std::vector<double>& coverage, int height, int width) {
  double mass = 0.0, mx = 0.0, my = 0.0;
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const double m = coverage[static_cast<std::size_t>(y) * width + x];
      mass += m;
      mx += m * (x + 0.5);
      my += m * (y + 0.5);
    }
  }
  if (mass <= 0.0) return 0.0;
  mx /= mass;
  my /= mass;
  double axis = 0.0, radial = 0.0;
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const double m = coverage[static_cast<std::size_t>(y) * width + x];
      const double dx = x + 0.5 - mx, dy = y + 0.5 - my;
      const double r2 = dx * dx + dy * dy;
      axis += m * (dx * dx * dx * dx + dy * dy * dy * dy);
      radial += m * r2 * r2;
    }
  }
  return radial > 0.0 ? axis / radial : 0.0;
}

double World::roundness_from_moment(double moment) const {
  const auto& t = roundness_table_;
  if (moment <= t.front().first) return t.front().second;
  if (moment >= t.back().first) return t.back().second;
  const auto it = std::lower_bound(t.begin(), t.end(), moment,
                                   [](const std::pair<double, double>& e, double v) { return e.first < v; });
  const auto& hi = *it;
  const auto& lo = *(it - 1);
  const double f = (moment - lo.first) / (hi.first - lo.first);
  return lo.second + f * (hi.second - lo.second);
}

AttributeVector World::moment_estimate(const Image& img, double bg, const std::vector<bool>& mask) const {
  const int n = cfg_.image_size;
  const std::size_t count = mask.size();
  AttributeVector a = AttributeVector::filled(0.5);
  a[kBgBrightness] = bg;

  // Foreground color from the most deviating (interior) mask pixels.
  double max_dev = 0.0;
  std::vector<double> dev(count, 0.0);
  for (std::size_t p = 0; p < count; ++p) {
    for (int c = 0; c < 3; ++c) dev[p] = std::max(dev[p], std::abs(img.pixels[p * 3 + c] - bg));
    if (mask[p]) max_dev = std::max(max_dev, dev[p]);
  }
  std::array<double, 3> fg{0.0, 0.0, 0.0};
  double core = 0.0;
  for (std::size_t p = 0; p < count; ++p) {
    if (!mask[p] || dev[p] < 0.9 * max_dev) continue;
    for (int c = 0; c < 3; ++c) fg[c] += img.pixels[p * 3 + c];
    core += 1.0;
  }
  for (int c = 0; c < 3; ++c) a[kFgR + c] = fg[c] / core;

  // Soft coverage by projecting each pixel on the fg-bg contrast vector.
  std::array<double, 3> diff{};
  double diff2 = 0.0;
  for (int c = 0; c < 3; ++c) {
    diff[c] = a[kFgR + c] - bg;
    diff2 += diff[c] * diff[c];
  }
  std::vector<double> coverage(count, 0.0);
  double area = 0.0, cx = 0.0, cy = 0.0;
  for (std::size_t p = 0; p < count; ++p) {
    double proj = 0.0;
    for (int c = 0; c < 3; ++c) proj += (img.pixels[p * 3 + c] - bg) * diff[c];
    const double m = std::clamp(proj / diff2, 0.0, 1.0);
    coverage[p] = m;
    area += m;
    cx += m * (static_cast<double>(p % n) + 0.5);
    cy += m * (static_cast<double>(p / n) + 0.5);
  }
  cx /= area;
  cy /= area;

  const double roundness = roundness_from_moment(coverage_fourth_moment(coverage, n, n));
  const double exponent = kExponentBase + kExponentSpan * (1.0 - roundness);
  const double radius = std::sqrt(area / superellipse_unit_area(exponent));
  const double s = n;
  a[kRoundness] = roundness;
  a[kSize] = (2.0 * radius / s - kRadiusBase) / kRadiusSpan;
  a[kPosX] = (cx / s - kCenterBase) / kCenterSpan;
  a[kPosY] = (cy / s - kCenterBase) / kCenterSpan;
  for (double& v : a.values) v = std::clamp(v, 0.0, 1.0);
  return a;
}

AttributeVector World::refine_estimate(const Image& img, AttributeVector start, int max_iterations) const {
  const Eigen::Map<const Vec> target(img.pixels.data(), static_cast<Eigen::Index>(img.pixels.size()));
  auto residual_norm = [&](const AttributeVector& a) {
    const Image r = render(a);
    const Eigen::Map<const Vec> v(r.pixels.data(), static_cast<Eigen::Index>(r.pixels.size()));
    return (target - v).squaredNorm();
  };
  AttributeVector a = start;
  double err = residual_norm(a);
  double lambda = 1e-3;
  for (int it = 0; it < max_iterations && err > 1e-24; ++it) {
    Image current;
    const Mat jac = render_jacobian(a, &current);
    const Eigen::Map<const Vec> v(current.pixels.data(), static_cast<Eigen::Index>(current.pixels.size()));
    const Vec res = target - v;
    const Eigen::MatrixXd jtj = jac.transpose() * jac;
    const Vec jtr = jac.transpose() * res;
    bool accepted = false;
    while (lambda < 1e10) {
      Eigen::MatrixXd damped = jtj;
      for (Eigen::Index k = 0; k < damped.rows(); ++k) damped(k, k) += lambda * jtj(k, k) + 1e-12;
      const Vec step = damped.ldlt().solve(jtr);
      AttributeVector trial = a;
      for (std::size_t k = 0; k < kNumAttributes; ++k) trial[k] = std::clamp(a[k] + step[static_cast<Eigen::Index>(k)], 0.0, 1.0);
      const double trial_err = residual_norm(trial);
      if (trial_err < err) {
        const double gain = err - trial_err;
        a = trial;
        err = trial_err;
        lambda = std::max(lambda / 3.0, 1e-9);
        accepted = true;
        if (gain < 1e-14 * (1.0 + err)) it = max_iterations;
        break;
      }
      lambda *= 4.0;
    }
    if (!accepted) break;
  }
  return a;
}

AttributeEstimate World::estimate_attrs(const Image& img, const EstimateOptions& options) const {
  check_image(img);
  const int n = cfg_.image_size;
  const int patch = std::clamp(n / 8, 1, 4);
  double bg = 0.0;
  int samples = 0;
  for (int corner = 0; corner < 4; ++corner) {
    const int y0 = (corner / 2) ? n - patch : 0;
    const int x0 = (corner % 2) ? n - patch : 0;
    for (int y = y0; y < y0 + patch; ++y) {
      for (int x = x0; x < x0 + patch; ++x) {
        for (int c = 0; c < 3; ++c) bg += img.at(y, x, c);
        samples += 3;
      }
    }
  }
  bg /= samples;

  const std::size_t count = static_cast<std::size_t>(n) * n;
  std::vector<bool> mask(count, false);
  bool any = false;
  for (std::size_t p = 0; p < count; ++p) {
    double dev = 0.0;
    for (int c = 0; c < 3; ++c) dev = std::max(dev, std::abs(img.pixels[p * 3 + c] - bg));
    mask[p] = dev > kMaskThreshold;
    any = any || mask[p];
  }

  AttributeEstimate est;
  if (!any) {
    est.attrs = AttributeVector::filled(0.5);
    est.attrs[kBgBrightness] = bg;
    est.detected.fill(false);
    est.detected[kBgBrightness] = true;
    return est;
  }
  est.attrs = moment_estimate(img, bg, mask);
  if (options.refine) est.attrs = refine_estimate(img, est.attrs, options.max_iterations);
  est.detected.fill(true);
  return est;
}

// ---------------------------------------------------------------------------
// Sampling

AttrDistribution parse_distribution(std::string_view name) {
  if (name == "real") return AttrDistribution::real;
  if (name == "uniform") return AttrDistribution::uniform;
  throw ConfigError("unknown attribute distribution '" + std::string(name) + "' (expected real|uniform)");
}

std::vector<AttributeVector> sample_attrs(AttrDistribution dist, std::size_t n, std::uint64_t seed) {
  require(n > 0, "sample_attrs: n must be positive");
  Rng rng(seed);
  std::vector<AttributeVector> out;
  out.reserve(n);
  while (out.size() < n) out.push_back(draw_attrs(rng, dist));
  return out;
}

AttributeVector draw_attrs(Rng& rng, AttrDistribution dist) {
  for (;;) {
    AttributeVector a;
    for (double& v : a.values) v = dist == AttrDistribution::real ? rng.beta22() : rng.uniform();
    if (contrast(a) >= kMinContrast) return a;
  }
}

}  // namespace spacealign
