#include "spacealign/rng.hpp"
#include "spacealign/world.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace spacealign;

namespace {

const World& default_world() {
  static const World w{WorldConfig{}};
  return w;
}

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }
double logit(double p) { return std::log(p / (1.0 - p)); }

AttributeVector random_attrs(Rng& rng, double lo = 0.0, double hi = 1.0) {
  AttributeVector a;
  for (std::size_t i = 0; i < kNumAttributes; ++i) a[i] = rng.uniform(lo, hi);
  return a;
}

LatentCode random_latent(Rng& rng, const World& world, double sigma = 1.0) {
  LatentCode w(world.layers(), world.layer_dim());
  for (Eigen::Index i = 0; i < w.rows().size(); ++i) w.rows().data()[i] = rng.normal(0.0, sigma);
  return w;
}

}  // namespace

TEST(World, DirectionsOrthonormalWithinLayer) {
  const World& world = default_world();
  for (std::size_t i = 0; i < kNumAttributes; ++i) {
    EXPECT_NEAR(world.direction(i).norm(), 1.0, 1e-9);
    for (std::size_t j = i + 1; j < kNumAttributes; ++j) {
      if (world.layer_of(i) != world.layer_of(j)) continue;
      EXPECT_NEAR(world.direction(i).dot(world.direction(j)), 0.0, 1e-9) << i << " vs " << j;
    }
  }
}

TEST(World, LayerAssignmentCoversEveryAttributeOnce) {
  const World& world = default_world();
  const std::array<int, kNumAttributes> expected{0, 0, 1, 1, 2, 2, 2, 3};
  for (std::size_t i = 0; i < kNumAttributes; ++i) EXPECT_EQ(world.layer_of(i), expected[i]);

  WorldConfig bad;
  bad.layer_assignment[kBgBrightness] = 7;
  EXPECT_THROW(World{bad}, ConfigError);
}

TEST(World, ZeroLatentGivesHalf) {
  const World& world = default_world();
  const AttributeVector a = world.attrs_from_latent(LatentCode(world.layers(), world.layer_dim()));
  for (std::size_t i = 0; i < kNumAttributes; ++i) EXPECT_EQ(a[i], 0.5);
}

TEST(World, SingleDirectionHitsTarget) {
  const World& world = default_world();
  const double s = world.config().logit_scale;
  for (std::size_t j = 0; j < kNumAttributes; ++j) {
    LatentCode w(world.layers(), world.layer_dim());
    w.row(world.layer_of(j)) = (s * logit(0.9)) * world.direction(j).transpose();
    const AttributeVector a = world.attrs_from_latent(w);
    for (std::size_t k = 0; k < kNumAttributes; ++k) EXPECT_NEAR(a[k], k == j ? 0.9 : 0.5, 1e-12);
  }
}

TEST(World, AttrsFromLatentMatchesLoopOracle) {
  const World& world = default_world();
  Rng rng(20);
  for (int t = 0; t < 20; ++t) {
    const LatentCode w = random_latent(rng, world, 2.0);
    const AttributeVector got = world.attrs_from_latent(w);
    for (std::size_t j = 0; j < kNumAttributes; ++j) {
      double dot = 0.0;
      const int layer = world.layer_of(j);
      for (int c = 0; c < world.layer_dim(); ++c) dot += world.direction(j)[c] * w.rows()(layer, c);
      EXPECT_NEAR(got[j], logistic(dot / world.config().logit_scale), 1e-14);
    }
  }
}

TEST(World, ShapeMismatchIsContractError) {
  const World& world = default_world();
  EXPECT_THROW(world.attrs_from_latent(LatentCode(world.layers() + 1, world.layer_dim())), ContractError);
  EXPECT_THROW(world.attrs_from_latent(LatentCode(world.layers(), 3)), ContractError);
}

TEST(World, CanonicalLatentOfHalfIsZero) {
  const World& world = default_world();
  const LatentCode w = world.canonical_latent(AttributeVector::filled(0.5));
  EXPECT_EQ(w.rows().cwiseAbs().maxCoeff(), 0.0);
}

TEST(World, CanonicalRoundTrip) {
  const World& world = default_world();
  Rng rng(21);
  for (int t = 0; t < 200; ++t) {
    const AttributeVector a = random_attrs(rng, 0.01, 0.99);
    const AttributeVector back = world.attrs_from_latent(world.canonical_latent(a));
    for (std::size_t j = 0; j < kNumAttributes; ++j) EXPECT_NEAR(back[j], a[j], 1e-9);
  }
  // Extremes are clamped to [0.01, 0.99] first.
  const AttributeVector back = world.attrs_from_latent(world.canonical_latent(AttributeVector::filled(1.0)));
  EXPECT_NEAR(back[0], 0.99, 1e-9);
}

TEST(World, CanonicalLatentHasNoOffAxisComponent) {
  const World& world = default_world();
  Rng rng(22);
  for (int layer = 0; layer < world.layers(); ++layer) {
    Vec v(world.layer_dim());
    for (int c = 0; c < world.layer_dim(); ++c) v[c] = rng.normal();
    for (std::size_t j = 0; j < kNumAttributes; ++j) {
      if (world.layer_of(j) == layer) v -= v.dot(world.direction(j)) * world.direction(j);
    }
    v.normalize();
    for (int t = 0; t < 10; ++t) {
      const LatentCode w = world.canonical_latent(random_attrs(rng, 0.01, 0.99));
      EXPECT_NEAR(w.row(layer).dot(v.transpose()), 0.0, 1e-9);
    }
  }
}

TEST(Render, ZeroContrastShapeIsInvisible) {
  const World& world = default_world();
  for (double bg : {0.0, 0.3, 0.77, 1.0}) {
    AttributeVector a = AttributeVector::filled(0.5);
    a[kSize] = 0.0;
    a[kFgR] = a[kFgG] = a[kFgB] = a[kBgBrightness] = bg;
    const Image img = world.render(a);
    for (double p : img.pixels) EXPECT_NEAR(p, bg, 1e-6);
  }
}

TEST(Render, CornerPatchesAreBackground) {
  const World& world = default_world();
  Rng rng(23);
  std::vector<AttributeVector> cases;
  for (int t = 0; t < 100; ++t) cases.push_back(random_attrs(rng));
  // The largest, squarest shape pushed into a corner.
  AttributeVector extreme = AttributeVector::filled(1.0);
  extreme[kRoundness] = 0.0;
  extreme[kBgBrightness] = 0.0;
  cases.push_back(extreme);
  extreme[kPosX] = extreme[kPosY] = 0.0;
  cases.push_back(extreme);
  const int n = world.image_size();
  for (const auto& a : cases) {
    const Image img = world.render(a);
    for (int y0 : {0, n - 4}) {
      for (int x0 : {0, n - 4}) {
        for (int y = y0; y < y0 + 4; ++y) {
          for (int x = x0; x < x0 + 4; ++x) {
            for (int c = 0; c < 3; ++c) ASSERT_NEAR(img.at(y, x, c), a[kBgBrightness], 1e-6);
          }
        }
      }
    }
  }
}

TEST(Render, ValuesStayInUnitInterval) {
  const World& world = default_world();
  Rng rng(24);
  for (int t = 0; t < 50; ++t) {
    const Image img = world.render(random_attrs(rng));
    EXPECT_EQ(img.height, world.image_size());
    EXPECT_EQ(img.width, world.image_size());
    for (double p : img.pixels) {
      ASSERT_GE(p, 0.0);
      ASSERT_LE(p, 1.0);
    }
  }
}

// Central differences against the analytic Jacobian, one attribute column at
// a time. The error is measured on the whole column (relative L2), which
// stays meaningful where individual pixels have near-zero derivatives.
TEST(Render, FiniteDifferenceJacobian) {
  const World& world = default_world();
  Rng rng(25);
  const double h = 1e-6;
  for (int t = 0; t < 10; ++t) {
    const AttributeVector a = random_attrs(rng, 0.05, 0.95);
    const Mat jac = world.render_jacobian(a);
    for (std::size_t j = 0; j < kNumAttributes; ++j) {
      AttributeVector ap = a, am = a;
      ap[j] += h;
      am[j] -= h;
      const Image ip = world.render(ap), im = world.render(am);
      Vec fd(static_cast<Eigen::Index>(ip.size()));
      for (std::size_t p = 0; p < ip.size(); ++p) fd[static_cast<Eigen::Index>(p)] = (ip.pixels[p] - im.pixels[p]) / (2 * h);
      const Vec an = jac.col(static_cast<Eigen::Index>(j));
      const double rel = (fd - an).norm() / std::max(fd.norm(), 1e-12);
      EXPECT_LE(rel, 1e-4) << "point " << t << " attr " << attribute_name(j);
    }
  }
}

TEST(Render, BackwardMatchesJacobianTranspose) {
  const World& world = default_world();
  Rng rng(26);
  const AttributeVector a = random_attrs(rng, 0.1, 0.9);
  Image g(world.image_size(), world.image_size());
  for (double& p : g.pixels) p = rng.normal();
  const Mat jac = world.render_jacobian(a);
  const Vec gv = Eigen::Map<const Vec>(g.pixels.data(), static_cast<Eigen::Index>(g.pixels.size()));
  const Vec expected = jac.transpose() * gv;
  const AttributeVector got = world.render_backward(a, g);
  for (std::size_t j = 0; j < kNumAttributes; ++j) EXPECT_NEAR(got[j], expected[static_cast<Eigen::Index>(j)], 1e-9);
}

TEST(Estimate, OracleFidelityOnFreshSample) {
  const World& world = default_world();
  const auto attrs = sample_attrs(AttrDistribution::uniform, 500, 9001);
  std::array<double, kNumAttributes> err{};
  for (const auto& a : attrs) {
    const AttributeEstimate e = world.estimate_attrs(world.render(a));
    ASSERT_TRUE(e.shape_detected());
    for (std::size_t j = 0; j < kNumAttributes; ++j) err[j] += std::abs(e.attrs[j] - a[j]);
  }
  for (std::size_t j = 0; j < kNumAttributes; ++j) {
    EXPECT_LE(err[j] / attrs.size(), 0.05) << attribute_name(j);
  }
}

TEST(Estimate, UniformImageIsUndetected) {
  const World& world = default_world();
  const Image img(world.image_size(), world.image_size(), 0.42);
  const AttributeEstimate e = world.estimate_attrs(img);
  EXPECT_NEAR(e.attrs[kBgBrightness], 0.42, 1e-6);
  EXPECT_TRUE(e.detected[kBgBrightness]);
  EXPECT_FALSE(e.shape_detected());
  for (std::size_t j : {kSize, kPosX, kPosY, kFgR, kFgG, kFgB}) EXPECT_FALSE(e.detected[j]);
}

TEST(Estimate, StableUnderSmallPixelNoise) {
  const World& world = default_world();
  const auto attrs = sample_attrs(AttrDistribution::uniform, 100, 9002);
  Rng rng(27);
  std::array<double, kNumAttributes> drift{};
  for (const auto& a : attrs) {
    const Image clean = world.render(a);
    Image noisy = clean;
    for (double& p : noisy.pixels) p = std::clamp(p + rng.uniform(-0.005, 0.005), 0.0, 1.0);
    const AttributeEstimate ec = world.estimate_attrs(clean), en = world.estimate_attrs(noisy);
    for (std::size_t j = 0; j < kNumAttributes; ++j) drift[j] += std::abs(ec.attrs[j] - en.attrs[j]);
  }
  for (std::size_t j = 0; j < kNumAttributes; ++j) EXPECT_LE(drift[j] / attrs.size(), 0.02) << attribute_name(j);
}

TEST(Sampling, DeterministicGivenSeed) {
  EXPECT_EQ(sample_attrs(AttrDistribution::real, 50, 5), sample_attrs(AttrDistribution::real, 50, 5));
  EXPECT_NE(sample_attrs(AttrDistribution::real, 50, 5), sample_attrs(AttrDistribution::real, 50, 6));
}

TEST(Sampling, UniformMeansNearHalf) {
  const auto attrs = sample_attrs(AttrDistribution::uniform, 10000, 77);
  for (std::size_t j = 0; j < kNumAttributes; ++j) {
    double mean = 0.0;
    for (const auto& a : attrs) mean += a[j];
    mean /= attrs.size();
    EXPECT_GE(mean, 0.45) << attribute_name(j);
    EXPECT_LE(mean, 0.55) << attribute_name(j);
  }
}

TEST(Sampling, ContrastConstraintHolds) {
  for (auto dist : {AttrDistribution::real, AttrDistribution::uniform}) {
    for (const auto& a : sample_attrs(dist, 2000, 78)) {
      double c = 0.0;
      for (std::size_t ch : {kFgR, kFgG, kFgB}) c = std::max(c, std::abs(a[ch] - a[kBgBrightness]));
      ASSERT_GE(c, kMinContrast);
      for (double v : a.values) {
        ASSERT_GE(v, 0.0);
        ASSERT_LE(v, 1.0);
      }
    }
  }
}

TEST(Sampling, RealIsNarrowerThanUniform) {
  // Beta(2,2) has variance 1/20, uniform 1/12.
  const auto attrs = sample_attrs(AttrDistribution::real, 10000, 79);
  double var = 0.0;
  for (const auto& a : attrs) var += (a[kSize] - 0.5) * (a[kSize] - 0.5);
  EXPECT_NEAR(var / attrs.size(), 0.05, 0.005);
  EXPECT_THROW(parse_distribution("gaussian"), ConfigError);
}

TEST(WorldConfigJson, RoundTripAndStrictKeys) {
  WorldConfig cfg;
  cfg.seed = 99;
  const nlohmann::json j = cfg;
  EXPECT_EQ(j.get<WorldConfig>().seed, 99u);
  nlohmann::json extra = j;
  extra["colour"] = 1;
  EXPECT_THROW(extra.get<WorldConfig>(), ConfigError);
}
