#include "spacealign/generator.hpp"
#include "spacealign/image_io.hpp"

#include "gradcheck.hpp"

#include <gtest/gtest.h>

#include <filesystem>

using namespace spacealign;
using spacealign::testing::central_difference;
using spacealign::testing::rel_error;

namespace {

LatentCode random_latent(int layers, int dim, std::uint64_t seed, double sigma = 1.0) {
  Rng rng(seed);
  LatentCode w(layers, dim);
  for (Eigen::Index i = 0; i < w.rows().size(); ++i) w.rows().data()[i] = rng.normal(0.0, sigma);
  return w;
}

}  // namespace

TEST(ToyGenerator, GenerateIsRenderOfLatentAttrs) {
  const World world(WorldConfig{});
  const ToyGenerator gen(world);
  for (std::uint64_t s = 0; s < 5; ++s) {
    const LatentCode w = random_latent(world.layers(), world.layer_dim(), s);
    EXPECT_EQ(image_hash(gen.generate(w)), image_hash(world.render(world.attrs_from_latent(w))));
  }
  // Canonical codes of sampled attributes regenerate the same picture.
  for (const auto& a : sample_attrs(AttrDistribution::real, 5, 3)) {
    const Image direct = world.render(a);
    const Image via = gen.generate(world.canonical_latent(a));
    double worst = 0.0;
    for (std::size_t i = 0; i < direct.size(); ++i) worst = std::max(worst, std::abs(direct.pixels[i] - via.pixels[i]));
    EXPECT_LE(worst, 1e-9);
  }
}

TEST(ToyGenerator, BackwardMatchesFiniteDifferences) {
  const World world(WorldConfig::tiny());
  const ToyGenerator gen(world);
  for (std::uint64_t s = 0; s < 5; ++s) {
    const LatentCode w = random_latent(world.layers(), world.layer_dim(), 20 + s);
    Image probe(world.image_size(), world.image_size());
    Rng rng(40 + s);
    for (double& v : probe.pixels) v = rng.normal();
    auto f = [&](const Vec& x) {
      LatentCode moved(Eigen::Map<const Mat>(x.data(), w.layers(), w.dim()));
      const Image img = gen.generate(moved);
      double dot = 0.0;
      for (std::size_t i = 0; i < img.size(); ++i) dot += img.pixels[i] * probe.pixels[i];
      return dot;
    };
    const Vec x = Eigen::Map<const Vec>(w.rows().data(), w.rows().size());
    const LatentCode g = gen.generate_backward(w, probe);
    const Vec an = Eigen::Map<const Vec>(g.rows().data(), g.rows().size());
    EXPECT_LE(rel_error(central_difference(f, x, 1e-6), an), 1e-6);
  }
}

TEST(LatentGrid, SnapIsIdempotentAndClose) {
  const LatentCode w = random_latent(4, 16, 5, 3.0);
  const LatentCode s = snap_to_grid(w);
  EXPECT_TRUE(on_grid(s));
  EXPECT_FALSE(on_grid(w));
  EXPECT_EQ(snap_to_grid(s), s);
  EXPECT_LE((s.rows() - w.rows()).cwiseAbs().maxCoeff(), kLatentGrid / 2);
  LatentCode big(1, 1);
  big.rows()(0, 0) = kLatentLimit;
  EXPECT_THROW(snap_to_grid(big), ContractError);
  big.rows()(0, 0) = std::nan("");
  EXPECT_THROW(snap_to_grid(big), ContractError);
}

TEST(LatentGrid, GridArithmeticIsExact) {
  const LatentCode a = snap_to_grid(random_latent(4, 16, 6));
  const LatentCode d = snap_to_grid(random_latent(4, 16, 7, 0.5));
  const Mat up = a.rows() + d.rows();
  EXPECT_EQ(Mat(up - d.rows()), a.rows());
  EXPECT_EQ(Mat(a.rows() + 2.0 * d.rows() - d.rows()), up);
}

TEST(Broadcast, CopiesEveryRow) {
  Vec ws(3);
  ws << 1, 2, 3;
  const LatentCode w = broadcast(ws, 4);
  ASSERT_EQ(w.layers(), 4);
  for (int l = 0; l < 4; ++l) EXPECT_EQ(Vec(w.row(l).transpose()), ws);
  EXPECT_THROW(broadcast(ws, 0), ContractError);
}

TEST(SampleWs, SeededAndScaled) {
  const auto a = sample_ws(2000, 16, 9, 2.0);
  const auto b = sample_ws(2000, 16, 9, 2.0);
  double sq = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ASSERT_EQ(a[i], b[i]);
    sq += a[i].squaredNorm();
  }
  EXPECT_NEAR(sq / (2000.0 * 16.0), 4.0, 0.15);
  EXPECT_NE(sample_ws(1, 16, 10)[0], sample_ws(1, 16, 11)[0]);
}

TEST(CanonicalInversion, RecoversAttributesOnGrid) {
  const World world(WorldConfig{});
  const CanonicalInversion inv(world);
  double worst = 0.0;
  for (const auto& a : sample_attrs(AttrDistribution::real, 50, 12)) {
    const LatentCode w = inv.invert(world.render(a));
    EXPECT_TRUE(on_grid(w));
    const AttributeVector back = world.attrs_from_latent(w);
    for (std::size_t j = 0; j < kNumAttributes; ++j) worst = std::max(worst, std::abs(back[j] - a[j]));
  }
  EXPECT_LE(worst, 0.05);
  EXPECT_THROW(inv.invert(Image(world.image_size(), world.image_size(), 0.4)), UndetectedError);
  EXPECT_THROW(inv.invert(Image(8, 8, 0.4)), ContractError);
}

TEST(NoisyInversion, BiasNormAndDeterminism) {
  const World world(WorldConfig{});
  const NoisyInversion a(world, 5), b(world, 5), c(world, 6);
  for (int l = 0; l < world.layers(); ++l) {
    EXPECT_NEAR(a.bias().row(l).norm(), 0.1 * std::sqrt(static_cast<double>(world.layer_dim())), 1e-12);
  }
  const Image img = world.render(sample_attrs(AttrDistribution::real, 1, 13)[0]);
  const LatentCode wa = a.invert(img);
  EXPECT_EQ(wa, a.invert(img));
  EXPECT_EQ(wa, b.invert(img));
  EXPECT_NE(wa, c.invert(img));
  EXPECT_TRUE(on_grid(wa));
}

TEST(NoisyInversion, NoiseStaysOffAttributeDirections) {
  const World world(WorldConfig{});
  const NoisyInversion noisy(world, 5);
  const CanonicalInversion canon(world);
  for (const auto& a : sample_attrs(AttrDistribution::real, 10, 14)) {
    const Image img = world.render(a);
    const Mat diff = noisy.invert(img).rows() - canon.invert(img).rows() - noisy.bias();
    for (std::size_t j = 0; j < kNumAttributes; ++j) {
      const double along = diff.row(world.layer_of(j)).dot(world.direction(j).transpose());
      EXPECT_LE(std::abs(along), 1e-8);
    }
    EXPECT_GT(diff.norm(), 0.0);
  }
}

TEST(LatentIo, RoundTripIsExact) {
  std::vector<LatentCode> codes;
  for (std::uint64_t s = 0; s < 4; ++s) codes.push_back(random_latent(3, 5, 50 + s, 1e3));
  const auto path = std::filesystem::temp_directory_path() / "spacealign_latents.jsonl";
  write_latents(path, codes);
  const auto back = read_latents(path);
  ASSERT_EQ(back.size(), codes.size());
  for (std::size_t i = 0; i < codes.size(); ++i) {
    EXPECT_EQ(back[i], codes[i]);
    EXPECT_EQ(latent_hash(back[i]), latent_hash(codes[i]));
  }
  std::filesystem::remove(path);
  EXPECT_THROW(latent_from_json(nlohmann::json{{"shape", {2, 2}}, {"data", {1.0, 2.0, 3.0}}}), DataError);
}

TEST(LatentHash, SensitiveToShapeAndValue) {
  LatentCode a(2, 3), b(3, 2);
  EXPECT_NE(latent_hash(a), latent_hash(b));
  LatentCode c = a;
  c.rows()(1, 2) = 0x1.0p-32;
  EXPECT_NE(latent_hash(a), latent_hash(c));
  EXPECT_EQ(latent_hash(a).size(), 64u);
}
