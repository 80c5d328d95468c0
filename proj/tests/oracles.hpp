#pragma once

// Finite-difference gradient checks shared by the unit tests and the
// acceptance runner. Each returns the worst relative L2 error over its points.

#include "spacealign/alignment.hpp"

#include "gradcheck.hpp"

#include <algorithm>

namespace spacealign::testing {

struct TinySetup {
  World world{WorldConfig::tiny()};
  ToyGenerator gen{world};
  MiniEmbedder embedder{WorldConfig::tiny().image_size, WorldConfig::tiny().embed_dim, EmbedderConfig{4, 4, 4, 8}, 3};

  MappingNetwork network(std::uint64_t seed, int hidden = 8) const {
    return MappingNetwork(embedder.dim(), world.layers(), world.layer_dim(), hidden, seed);
  }
};

inline Vec flat(const LatentCode& w) { return Eigen::Map<const Vec>(w.rows().data(), w.rows().size()); }

inline LatentCode unflat(const Vec& x, int layers, int dim) {
  return LatentCode(Mat(Eigen::Map<const Mat>(x.data(), layers, dim)));
}

// Gradient of an objective with respect to every parameter of F, analytic
// versus central differences.
template <typename Objective>
double network_gradcheck(MappingNetwork net, Objective objective, double h = 1e-6) {
  nn::ParameterSet grads = net.params().zeros_like();
  objective(net, &grads);
  const Vec theta = net.params().flatten();
  auto f = [&](const Vec& x) {
    net.params().unflatten(x);
    return objective(net, nullptr);
  };
  const Vec fd = central_difference(f, theta, h);
  net.params().unflatten(theta);
  return rel_error(fd, grads.flatten());
}

// L_SA through E_I o G o F on the tiny config.
inline double sa_gradcheck(int points = 10) {
  const TinySetup t;
  double worst = 0.0;
  for (int p = 0; p < points; ++p) {
    std::vector<Image> images;
    for (const auto& a : sample_attrs(AttrDistribution::real, 3, 100 + static_cast<std::uint64_t>(p))) {
      images.push_back(t.world.render(a));
    }
    worst = std::max(worst, network_gradcheck(t.network(200 + static_cast<std::uint64_t>(p)),
                                              [&](const MappingNetwork& net, nn::ParameterSet* g) {
                                                return sa_objective(net, t.gen, t.embedder, images, 1.0, g);
                                              }));
  }
  return worst;
}

// L_IAI alone (lambda_ia = 0) through the generator.
inline double iai_gradcheck(int points = 10) {
  const TinySetup t;
  double worst = 0.0;
  for (int p = 0; p < points; ++p) {
    const auto ws = sample_ws(3, t.world.layer_dim(), 300 + static_cast<std::uint64_t>(p));
    worst = std::max(worst, network_gradcheck(t.network(400 + static_cast<std::uint64_t>(p)),
                                              [&](const MappingNetwork& net, nn::ParameterSet* g) {
                                                return indomain_objective(net, t.gen, t.embedder, ws, 0.0, 1.0, g).iai;
                                              }));
  }
  return worst;
}

// Pure latent losses: gradient with respect to w*.
inline double ia_gradcheck(int points = 10) {
  double worst = 0.0;
  for (int p = 0; p < points; ++p) {
    Rng rng(500 + static_cast<std::uint64_t>(p));
    LatentCode w(3, 5);
    for (Eigen::Index i = 0; i < w.rows().size(); ++i) w.rows().data()[i] = rng.normal();
    LayerCode ws(5);
    for (Eigen::Index i = 0; i < ws.size(); ++i) ws[i] = rng.normal();
    LatentCode g;
    loss_ia(w, ws, &g);
    auto f = [&](const Vec& x) { return loss_ia(unflat(x, 3, 5), ws); };
    worst = std::max(worst, rel_error(central_difference(f, flat(w), 1e-5), flat(g)));
  }
  return worst;
}

inline double ada_gradcheck(int points = 10) {
  double worst = 0.0;
  for (int p = 0; p < points; ++p) {
    Rng rng(600 + static_cast<std::uint64_t>(p));
    LatentCode w(3, 5), we(3, 5);
    for (Eigen::Index i = 0; i < w.rows().size(); ++i) {
      w.rows().data()[i] = rng.normal();
      we.rows().data()[i] = rng.normal();
    }
    LatentCode g;
    loss_ada(w, we, &g);
    auto f = [&](const Vec& x) { return loss_ada(unflat(x, 3, 5), we); };
    worst = std::max(worst, rel_error(central_difference(f, flat(w), 1e-5), flat(g)));
  }
  return worst;
}

// The full stage objectives with respect to F (latent losses composed with F).
inline double ia_network_gradcheck(int points = 10) {
  const TinySetup t;
  double worst = 0.0;
  for (int p = 0; p < points; ++p) {
    const auto ws = sample_ws(3, t.world.layer_dim(), 700 + static_cast<std::uint64_t>(p));
    worst = std::max(worst, network_gradcheck(t.network(800 + static_cast<std::uint64_t>(p)),
                                              [&](const MappingNetwork& net, nn::ParameterSet* g) {
                                                return indomain_objective(net, t.gen, t.embedder, ws, 1.0, 0.0, g).ia;
                                              }));
  }
  return worst;
}

inline double ada_network_gradcheck(int points = 10) {
  const TinySetup t;
  const NoisyInversion inv(t.world, 5);
  double worst = 0.0;
  for (int p = 0; p < points; ++p) {
    std::vector<Image> images;
    std::vector<LatentCode> targets;
    for (const auto& a : sample_attrs(AttrDistribution::real, 3, 900 + static_cast<std::uint64_t>(p))) {
      images.push_back(t.world.render(a));
      targets.push_back(t.world.canonical_latent(a));
    }
    worst = std::max(worst, network_gradcheck(t.network(1000 + static_cast<std::uint64_t>(p)),
                                              [&](const MappingNetwork& net, nn::ParameterSet* g) {
                                                return ada_objective(net, t.embedder, images, targets, 1.0, g);
                                              }));
  }
  return worst;
}

// Renderer Jacobian columns against central differences on the default world.
inline double render_gradcheck(int points = 10) {
  const World world{WorldConfig{}};
  Rng rng(25);
  const double h = 1e-6;
  double worst = 0.0;
  for (int t = 0; t < points; ++t) {
    AttributeVector a;
    for (double& v : a.values) v = rng.uniform(0.05, 0.95);
    const Mat jac = world.render_jacobian(a);
    for (std::size_t j = 0; j < kNumAttributes; ++j) {
      AttributeVector ap = a, am = a;
      ap[j] += h;
      am[j] -= h;
      const Image ip = world.render(ap), im = world.render(am);
      Vec fd(static_cast<Eigen::Index>(ip.size()));
      for (std::size_t q = 0; q < ip.size(); ++q) fd[static_cast<Eigen::Index>(q)] = (ip.pixels[q] - im.pixels[q]) / (2 * h);
      worst = std::max(worst, rel_error(fd, jac.col(static_cast<Eigen::Index>(j))));
    }
  }
  return worst;
}

}  // namespace spacealign::testing
