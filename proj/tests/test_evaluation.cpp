#include "spacealign/evaluation.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

using namespace spacealign;
using namespace spacealign::testing;

namespace {

OracleData synthetic(std::size_t n, int d, int out, std::uint64_t seed, Mat* truth = nullptr) {
  Rng rng(seed);
  Mat coef(d + 1, out);
  for (Eigen::Index i = 0; i < coef.size(); ++i) coef.data()[i] = rng.normal();
  OracleData data{Mat(static_cast<Eigen::Index>(n), d), Mat(static_cast<Eigen::Index>(n), out)};
  for (Eigen::Index i = 0; i < data.embeddings.size(); ++i) data.embeddings.data()[i] = rng.normal();
  data.latents = data.embeddings * coef.topRows(d);
  data.latents.rowwise() += coef.bottomRows(1).row(0);
  for (Eigen::Index i = 0; i < data.latents.size(); ++i) data.latents.data()[i] += rng.normal(0.0, 0.1);
  if (truth) *truth = coef;
  return data;
}

}  // namespace

TEST(OracleMap, MatchesNormalEquations) {
  const OracleData data = synthetic(200, 6, 8, 1);
  const OracleMap m = fit_oracle_map(data, 2, 4);
  Eigen::MatrixXd x(200, 7);
  x.leftCols(6) = data.embeddings;
  x.col(6).setOnes();
  const Eigen::MatrixXd normal = (x.transpose() * x).ldlt().solve(x.transpose() * Eigen::MatrixXd(data.latents));
  EXPECT_LE((Eigen::MatrixXd(m.coefficients) - normal).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_LT(m.residual, m.zero_residual);
  EXPECT_EQ(m.samples, 200u);
}

TEST(OracleMap, ResidualBeatsPerturbedMaps) {
  const OracleData data = synthetic(300, 5, 6, 2);
  const OracleMap m = fit_oracle_map(data, 2, 3);
  Rng rng(3);
  for (int t = 0; t < 5; ++t) {
    OracleMap other = m;
    for (Eigen::Index i = 0; i < other.coefficients.size(); ++i) other.coefficients.data()[i] += rng.normal(0.0, 0.05);
    EXPECT_LE(m.residual, other.error(data.embeddings, data.latents));
  }
}

TEST(OracleMap, DeterministicAndGuarded) {
  const OracleData data = synthetic(100, 4, 4, 4);
  EXPECT_EQ(fit_oracle_map(data, 1, 4).coefficients, fit_oracle_map(data, 1, 4).coefficients);
  EXPECT_THROW(fit_oracle_map(synthetic(30, 4, 4, 5), 1, 4), ContractError);
  OracleData rank = data;
  rank.embeddings.col(3) = rank.embeddings.col(1);
  try {
    fit_oracle_map(rank, 1, 4);
    FAIL() << "expected a rank deficiency error";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("condition"), std::string::npos);
  }
}

TEST(OracleMap, StableUnderMoreSamples) {
  Mat truth;
  const OracleData small = synthetic(400, 5, 6, 6, &truth);
  const OracleData large = synthetic(800, 5, 6, 6);
  const OracleData held = synthetic(500, 5, 6, 6);
  const double a = fit_oracle_map(small, 2, 3).error(held.embeddings, held.latents);
  const double b = fit_oracle_map(large, 2, 3).error(held.embeddings, held.latents);
  EXPECT_LT(std::abs(a - b) / a, 0.10);
}

TEST(Classification, TiesFailAndRange) {
  const World world(WorldConfig::tiny());
  const MiniEmbedder e(8, 8, EmbedderConfig{4, 4, 4, 8}, 3);
  std::vector<Image> images;
  for (const auto& a : sample_attrs(AttrDistribution::real, 10, 1)) images.push_back(world.render(a));
  EXPECT_EQ(classification_accuracy(e, images, "a red shape", "a red shape"), 0.0);
  const double acc = classification_accuracy(e, images, "a red shape", "a shape");
  EXPECT_GE(acc, 0.0);
  EXPECT_LE(acc, 1.0);
  EXPECT_THROW(classification_accuracy(e, {}, "a red shape", "a shape"), ContractError);
}

TEST(Preservation, HandValues) {
  const auto originals = sample_attrs(AttrDistribution::real, 10, 2);
  EXPECT_EQ(preservation_score(originals, originals, {kSize}), 1.0);
  auto moved = originals;
  for (auto& a : moved) {
    a[kSize] += 0.5;        // target: ignored
    a[kPosX] += 0.2;        // one non-target attribute
  }
  EXPECT_NEAR(preservation_score(originals, moved, {kSize}), 1.0 - 0.2 / 7.0, 1e-12);
  for (auto& a : moved) a.values.fill(5.0);
  EXPECT_EQ(preservation_score(originals, moved, {kSize}), 0.0);
}

TEST(OracleAgreement, IdentityAndNegation) {
  const World world(WorldConfig::tiny());
  const MiniEmbedder e(8, 8, EmbedderConfig{4, 4, 4, 8}, 3);
  const OracleMap oracle = fit_oracle_map(e, world, 200, 4);
  const PromptBank bank = PromptBank::stock();
  SemanticShift s;
  s.delta = LatentCode(Mat(oracle.map(prompt_average(e, bank, "a large shape")).rows() -
                           oracle.map(prompt_average(e, bank, "a shape")).rows()));
  EXPECT_NEAR(shift_oracle_agreement(s, oracle, e, bank, "a shape", "a large shape"), 1.0, 1e-12);
  s.delta.rows() *= -1.0;
  EXPECT_NEAR(shift_oracle_agreement(s, oracle, e, bank, "a shape", "a large shape"), -1.0, 1e-12);
}

TEST(Projection, LineHasNoSecondComponent) {
  Mat rows(20, 5);
  Vec dir(5);
  dir << 1, -2, 0.5, 3, 1;
  for (int i = 0; i < 20; ++i) rows.row(i) = (0.3 * i - 2.0) * dir.transpose() + Eigen::RowVectorXd::Constant(5, 1.5);
  const Projection p = project_2d(rows);
  const double v1 = p.points.col(0).squaredNorm(), v2 = p.points.col(1).squaredNorm();
  EXPECT_LT(v2, 1e-9 * v1);
}

TEST(Projection, CenteredOrthonormalAndSigned) {
  Rng rng(7);
  Mat rows(50, 6);
  for (Eigen::Index i = 0; i < rows.size(); ++i) rows.data()[i] = rng.normal() * (1 + i % 6);
  const Projection p = project_2d(rows);
  EXPECT_LE(p.points.colwise().mean().cwiseAbs().maxCoeff(), 1e-12);
  const Mat gram = p.loadings.transpose() * p.loadings;
  EXPECT_LE((gram - Mat::Identity(2, 2)).cwiseAbs().maxCoeff(), 1e-9);
  for (int c = 0; c < 2; ++c) {
    for (Eigen::Index r = 0; r < p.loadings.rows(); ++r) {
      if (p.loadings(r, c) != 0.0) {
        EXPECT_GT(p.loadings(r, c), 0.0);
        break;
      }
    }
  }
  EXPECT_GE(p.variance[0], p.variance[1]);
  // Projecting the input again reproduces the points.
  EXPECT_LE((apply_projection(p, rows) - p.points).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_THROW(project_2d(Mat(2, 3)), ContractError);
}

TEST(Hull, SquareWithInteriorPoints) {
  Mat pts(6, 2);
  pts << 0, 0, 1, 0, 1, 1, 0, 1, 0.5, 0.5, 0.2, 0.7;
  const auto hull = convex_hull(pts);
  EXPECT_EQ(hull.size(), 4u);
  EXPECT_TRUE(inside_hull(hull, {0.5, 0.5}));
  EXPECT_TRUE(inside_hull(hull, {1.0, 0.5}));  // on the boundary
  EXPECT_FALSE(inside_hull(hull, {1.01, 0.5}));
  EXPECT_FALSE(inside_hull(hull, {-0.5, -0.5}));
}

TEST(Separation, HandComputed) {
  Mat pts(4, 2);
  pts << -1, 1, -1, -1, 5, 1, 5, -1;
  // Centroids (-1,0) and (5,0); every point sits 1 away from its centroid.
  EXPECT_NEAR(cluster_separation(pts, {0, 0, 1, 1}), 6.0, 1e-12);
  EXPECT_THROW(cluster_separation(pts, {0, 0, 0, 0}), ContractError);
}

TEST(Visualization, ClusterAttrsRespectSizeBins) {
  for (const auto& a : cluster_attrs(0, 50, 1)) EXPECT_LT(a[kSize], 1.0 / 3.0);
  for (const auto& a : cluster_attrs(1, 50, 2)) EXPECT_GE(a[kSize], 2.0 / 3.0);
  EXPECT_EQ(visualization_probes().size(), 10u);
}

TEST(Report, TinyReportIsDeterministicAndReplays) {
  const TinySetup t;
  TrainConfig tc;
  tc.steps_sa = 20;
  tc.steps_indomain = 10;
  tc.steps_adapt = 10;
  tc.batch_size = 4;
  tc.hidden = 8;
  const NoisyInversion noisy(t.world, 5);
  auto c1 = train_stage_align(initial_alignment(t.world, t.embedder, tc, "e"), t.world, t.embedder, tc);
  auto c2 = train_stage_indomain(c1, t.world, t.embedder, tc);
  auto c3 = train_stage_adapt(c2, t.world, t.embedder, noisy, tc);
  ReportInputs in{&t.world, &t.embedder, {{"sa", &c1}, {"indomain", &c2}, {"adapt", &c3}}};
  EvalConfig ec;
  ec.holdout_images = 10;
  ec.holdout_ws = 10;
  ec.reconstruction_images = 10;
  ec.retrieval_batches = 1;
  ec.oracle_samples = 100;
  ec.cluster_size = 10;
  const EvalReport a = build_report(in, ec);
  const EvalReport b = build_report(in, ec);
  nlohmann::json ja = a.json, jb = b.json;
  ja.erase("runtime_seconds");
  jb.erase("runtime_seconds");
  EXPECT_EQ(ja, jb);
  EXPECT_EQ(a.json.at("schema"), 1);
  EXPECT_EQ(a.json.at("stages").size(), 3u);
  EXPECT_EQ(a.json.at("shifts").size(), 8u);
  const nlohmann::json replay = replay_accuracies(a.samples);
  const std::vector<std::pair<std::string, std::string>> keys{
      {"canonical", "/canonical/adapt"}, {"noisy_post", "/noisy/adapt"}, {"noisy_pre", "/noisy/indomain"}};
  for (const auto& [name, shift] : a.json.at("shifts").items()) {
    for (const auto& [field, suffix] : keys) {
      const double acc = shift.at(field).at("accuracy").get<double>();
      EXPECT_GE(acc, 0.0);
      EXPECT_LE(acc, 1.0);
      EXPECT_EQ(replay.at(name + suffix).get<double>(), acc) << name << " " << field;
    }
  }
  const auto path = std::filesystem::temp_directory_path() / "spacealign_samples.jsonl";
  write_samples(path, a.samples);
  EXPECT_EQ(replay_accuracies(read_samples(path)), replay);
  std::filesystem::remove(path);
}
