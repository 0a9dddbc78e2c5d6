#include "laot/data.hpp"
#include "laot/evaluation.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

using namespace laot;
using namespace laot::eval;
using laot::testing::random_normal;
using laot::testing::random_spd;

namespace {

// Well separated Gaussian blobs, balanced labels.
LabeledDataset blobs(Index n, Index d, int classes, double spread, std::uint64_t seed,
                     double noise = 1.0) {
  std::mt19937_64 rng(seed);
  const Matrix means = spread * random_normal(classes, d, rng);
  Matrix x = noise * random_normal(n, d, rng);
  std::vector<int> y(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    y[static_cast<std::size_t>(i)] = static_cast<int>(i % classes);
    x.row(i) += means.row(i % classes);
  }
  return LabeledDataset(std::move(x), std::move(y));
}

nn::MlpParams identity_net(Index d) {
  nn::MlpParams p;
  p.layers.push_back(nn::Layer{Matrix::Identity(d, d), Vector::Zero(d), nn::Activation::linear});
  return p;
}

// Encoders and decoders are identities; the fitted map is the identity.
align::LaotModel identity_model(Index d) {
  align::LaotModel m;
  m.enc_s = m.dec_s = m.enc_t = m.dec_t = identity_net(d);
  m.fitted_map = gaussian::AffineMap::identity(d);
  m.config.latent_dim = d;
  return m;
}

// Straightforward kNN: sort all distances, majority vote, ties by summed
// distance then by class id.
std::vector<int> knn_oracle(const Matrix& train, const std::vector<int>& y, const Matrix& q, int k) {
  std::vector<int> out;
  for (Index i = 0; i < q.rows(); ++i) {
    std::vector<std::pair<double, int>> d;
    for (Index j = 0; j < train.rows(); ++j)
      d.emplace_back((train.row(j) - q.row(i)).squaredNorm(), y[static_cast<std::size_t>(j)]);
    std::sort(d.begin(), d.end());
    std::map<int, std::pair<int, double>> votes;
    for (int j = 0; j < k; ++j) {
      auto& v = votes[d[static_cast<std::size_t>(j)].second];
      ++v.first;
      v.second += std::sqrt(d[static_cast<std::size_t>(j)].first);
    }
    int best = -1;
    for (const auto& [c, v] : votes) {
      if (best < 0 || v.first > votes[best].first ||
          (v.first == votes[best].first && v.second < votes[best].second))
        best = c;
    }
    out.push_back(best);
  }
  return out;
}

align::ExperimentConfig rv_config() {
  align::ExperimentConfig c;
  c.latent_dim = 4;
  c.lambda = 0.1;
  c.batch_size = 32;
  c.learning_rate = 1e-3;
  c.epochs = 5;
  c.seed = 3;
  return c;
}

align::LaotModel make_model(Index ds, Index dt, const align::ExperimentConfig& c) {
  return align::LaotModel::create(ds, dt, c);
}

}  // namespace

TEST(Knn, OneDimensionalExample) {
  Matrix x(4, 1);
  x << 0, 1, 10, 11;
  const std::vector<int> y{0, 0, 1, 1};
  Matrix q(2, 1);
  q << 0.4, 10.6;
  EXPECT_EQ(knn_predict(x, y, q, 1), (std::vector<int>{0, 1}));
  EXPECT_EQ(knn_predict(x, y, q, 3), (std::vector<int>{0, 1}));
}

TEST(Knn, MatchesBruteForceOracle) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    std::mt19937_64 rng(seed);
    const Matrix train = random_normal(80, 3, rng);
    const Matrix q = random_normal(30, 3, rng);
    std::vector<int> y(80);
    std::uniform_int_distribution<int> c(0, 3);
    for (auto& v : y) v = c(rng);
    for (int k : {1, 3, 4, 7}) EXPECT_EQ(knn_predict(train, y, q, k), knn_oracle(train, y, q, k));
  }
}

TEST(Knn, VoteTieGoesToCloserClass) {
  Matrix x(2, 1);
  x << 2.0, -1.0;
  Matrix q(1, 1);
  q << 0.0;
  EXPECT_EQ(knn_predict(x, {0, 1}, q, 2), std::vector<int>{1});
}

TEST(Knn, FullTieGoesToSmallestClass) {
  Matrix x(2, 1);
  x << 1.0, -1.0;
  Matrix q(1, 1);
  q << 0.0;
  EXPECT_EQ(knn_predict(x, {3, 1}, q, 2), std::vector<int>{1});
  EXPECT_EQ(knn_predict(x, {1, 3}, q, 2), std::vector<int>{1});
}

TEST(Knn, Deterministic) {
  const auto d = blobs(200, 5, 4, 1.0, 7);
  EXPECT_EQ(knn_predict(d, d.features, 5), knn_predict(d, d.features, 5));
}

TEST(Knn, LabelCountMismatchThrows) {
  EXPECT_THROW(knn_predict(Matrix::Zero(3, 2), {0, 1}, Matrix::Zero(1, 2), 1), InvalidInput);
}

TEST(Dataset, RejectsBadLabelsAndMasks) {
  EXPECT_THROW(LabeledDataset(Matrix::Zero(3, 2), {0, 1}), InvalidInput);
  EXPECT_THROW(LabeledDataset(Matrix::Zero(2, 2), {0, -1}), InvalidInput);
  EXPECT_THROW(LabeledDataset(Matrix::Zero(2, 2), {0, 1}, {true}), InvalidInput);
  EXPECT_EQ(LabeledDataset(Matrix::Zero(3, 2), {0, 4, 1}).num_classes(), 5);
}

TEST(Dataset, LabelGuardLocksAndReleases) {
  const LabeledDataset d(Matrix::Zero(2, 1), {0, 1});
  {
    LabelGuard g(d);
    EXPECT_TRUE(d.labels_locked());
    EXPECT_THROW(d.labels(), InvalidState);
    {
      LabelGuard inner(d);
      EXPECT_THROW(d.labels(), InvalidState);
    }
    EXPECT_THROW(d.labels(), InvalidState);
  }
  EXPECT_FALSE(d.labels_locked());
  EXPECT_EQ(d.labels().size(), 2u);
}

TEST(Score, PerClassAndTotals) {
  const auto r = score({0, 1, 1, 2, 0}, {0, 1, 2, 2, 1}, 4, "x");
  EXPECT_DOUBLE_EQ(r.accuracy, 3.0 / 5.0);
  ASSERT_EQ(r.per_class_accuracy.size(), 4);
  EXPECT_DOUBLE_EQ(r.per_class_accuracy[0], 1.0);
  EXPECT_DOUBLE_EQ(r.per_class_accuracy[1], 0.5);
  EXPECT_DOUBLE_EQ(r.per_class_accuracy[2], 0.5);
  EXPECT_DOUBLE_EQ(r.per_class_accuracy[3], 0.0);
  EXPECT_EQ(r.class_counts, (std::vector<Index>{1, 2, 2, 0}));
  EXPECT_EQ(r.to_json().at("method"), "x");
  EXPECT_THROW(score({0}, {0, 1}, 2, "x"), InvalidInput);
}

TEST(Score, AccuracyIsCountWeightedMeanOfPerClass) {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> c(0, 5);
  for (int t = 0; t < 20; ++t) {
    std::vector<int> p(100), y(100);
    for (auto& v : p) v = c(rng);
    for (auto& v : y) v = c(rng);
    const auto r = score(p, y, 6, "x");
    double acc = 0.0;
    for (int k = 0; k < 6; ++k) acc += r.per_class_accuracy[k] * static_cast<double>(r.class_counts[k]);
    EXPECT_NEAR(acc / 100.0, r.accuracy, 1e-12);
  }
}

TEST(Score, RandomPredictionsNearChance) {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<int> c(0, 4);
  std::vector<int> p(20000), y(20000);
  for (auto& v : p) v = c(rng);
  for (auto& v : y) v = c(rng);
  EXPECT_NEAR(score(p, y, 5, "x").accuracy, 0.2, 0.015);
}

TEST(Baselines, OtGaussOnIdenticalDomainsIsSelfClassification) {
  const auto s = blobs(300, 4, 3, 1.5, 11);
  const auto self = score(knn_predict(s, s.features, 3), s.labels(), 3, "self").accuracy;
  EXPECT_NEAR(ot_gauss_baseline(s, s).accuracy, self, 1e-12);
}

TEST(Baselines, OtGaussOnAffineImageMatchesSelfClassification) {
  const auto s = blobs(400, 5, 4, 1.5, 12);
  std::mt19937_64 rng(5);
  const Matrix a = random_spd(5, rng, 0.5, 2.0);
  const Vector b = 3.0 * random_normal(5, 1, rng).col(0);
  const LabeledDataset t(Matrix((s.features * a).rowwise() + b.transpose()), s.labels());
  const double self = score(knn_predict(s, s.features, 3), s.labels(), 4, "self").accuracy;
  EXPECT_NEAR(ot_gauss_baseline(s, t).accuracy, self, 0.02);
}

TEST(Baselines, EmdOnIdenticalCloudsIsPerfectWithOneNeighbour) {
  const auto s = blobs(60, 3, 3, 1.0, 13);
  EXPECT_DOUBLE_EQ(emd_barycentric_baseline(s, s, 1).accuracy, 1.0);
}

TEST(Baselines, TranslationEmdAgreesWithOtGauss) {
  const auto s = blobs(300, 4, 3, 1.5, 14);
  std::mt19937_64 rng(9);
  const auto t0 = blobs(300, 4, 3, 1.5, 14);
  const Vector shift = 5.0 * random_normal(4, 1, rng).col(0);
  // Same generator, fresh noise would change the draw; reuse the points.
  const LabeledDataset t(Matrix(t0.features.rowwise() + shift.transpose()), t0.labels());
  const double og = ot_gauss_baseline(s, t).accuracy;
  const double emd = emd_barycentric_baseline(s, t).accuracy;
  EXPECT_NEAR(og, emd, 0.02);
}

TEST(Baselines, RejectHeterogeneousAndOversizedInput) {
  const auto a = blobs(20, 3, 2, 1.0, 1);
  const auto b = blobs(20, 4, 2, 1.0, 2);
  EXPECT_THROW(ot_gauss_baseline(a, b), InvalidInput);
  EXPECT_THROW(emd_barycentric_baseline(a, b), InvalidInput);
  EXPECT_THROW(emd_barycentric_baseline(a, a, 3, 10), InvalidInput);
}

TEST(Transfer, AffineShiftTaskAfterTraining) {
  align::ExperimentConfig cfg;
  cfg.latent_dim = 64;
  cfg.batch_size = 64;
  cfg.learning_rate = 5e-4;
  cfg.epochs = 100;
  const auto task = data::gen_synthetic("gauss_affine", 0);
  auto res = align::train(align::LaotModel::create(task.source.dim(), task.target.dim(), cfg),
                          task.source.features, task.target.features);
  EXPECT_GE(evaluate_transfer(res.model, task.source, task.target, 3).accuracy, 0.9);
}

TEST(Transfer, MaskedTargetPointsJoinTrainingAndAreNotScored) {
  const auto s = blobs(60, 2, 2, 5.0, 3);
  std::vector<int> yt(s.labels());
  std::vector<bool> mask(60, false);
  mask[0] = mask[1] = true;
  // Wrong labels on the masked points cannot hurt: they are never scored and
  // one neighbour among three is outvoted.
  yt[0] = 1 - yt[0];
  const LabeledDataset t(s.features, yt, mask);
  const auto r = evaluate_transfer(identity_model(2), s, t, 3);
  EXPECT_EQ(std::accumulate(r.class_counts.begin(), r.class_counts.end(), Index{0}), 58);
}

TEST(Bound, PerfectClassifierHasZeroLhs) {
  const auto s = blobs(200, 3, 3, 20.0, 4, 0.1);
  const auto d = worst_case_bound_diag(identity_model(3), s, s);
  EXPECT_DOUBLE_EQ(d.lhs_risk, 0.0);
  EXPECT_DOUBLE_EQ(d.source_risk, 0.0);
  EXPECT_DOUBLE_EQ(d.joint_term, 0.0);
  EXPECT_GT(d.lipschitz, 0.0);
  EXPECT_TRUE(d.holds());
  EXPECT_NEAR(d.slack, d.bound, 1e-15);
}

TEST(Bound, ConstantClassifierCollapsesToRiskTerms) {
  std::mt19937_64 rng(6);
  const LabeledDataset s(random_normal(100, 3, rng), std::vector<int>(100, 0));
  std::vector<int> yt(100);
  for (int i = 0; i < 100; ++i) yt[static_cast<std::size_t>(i)] = i % 2;
  const LabeledDataset t(random_normal(100, 3, rng), yt);
  const auto d = worst_case_bound_diag(identity_model(3), s, t);
  EXPECT_DOUBLE_EQ(d.lipschitz, 0.0);
  EXPECT_DOUBLE_EQ(d.trace_term, 0.0);
  EXPECT_DOUBLE_EQ(d.lhs_risk, 0.5);
  EXPECT_DOUBLE_EQ(d.bound, d.source_risk + d.joint_term);
}

TEST(Bound, ConstantClassifierOnConsistentTargetHolds) {
  std::mt19937_64 rng(7);
  const LabeledDataset s(random_normal(100, 3, rng), std::vector<int>(100, 1));
  const LabeledDataset t(random_normal(100, 3, rng), std::vector<int>(100, 1));
  const auto d = worst_case_bound_diag(identity_model(3), s, t);
  EXPECT_DOUBLE_EQ(d.lipschitz, 0.0);
  EXPECT_DOUBLE_EQ(d.lhs_risk, 0.0);
  EXPECT_TRUE(d.holds());
}

TEST(Bound, LipschitzPairAttainsReportedRatio) {
  const auto s = blobs(150, 3, 3, 2.0, 8);
  const auto m = identity_model(3);
  const auto d = worst_case_bound_diag(m, s, s);
  ASSERT_GE(d.max_pair_a, 0);
  Matrix pooled(300, 3);
  pooled << s.features, s.features;
  const double dist = (pooled.row(d.max_pair_a) - pooled.row(d.max_pair_b)).norm();
  EXPECT_NEAR(d.lipschitz, std::sqrt(2.0) / dist, 1e-12);
}

TEST(CrossValidation, SeparableBlobsArePerfect) {
  EXPECT_DOUBLE_EQ(cross_validated_accuracy(blobs(100, 3, 2, 30.0, 1, 0.1), 5, 3, 0), 1.0);
  EXPECT_THROW(cross_validated_accuracy(blobs(10, 3, 2, 1.0, 1), 1, 3, 0), InvalidInput);
}

TEST(ReverseValidation, ReadsNoTargetLabels) {
  const auto s = blobs(150, 4, 3, 3.0, 21);
  const auto t = blobs(150, 4, 3, 3.0, 22);
  bool read_failed = false;
  auto factory = [&](Index ds, Index dt, const align::ExperimentConfig& c) {
    try {
      (void)t.labels();
    } catch (const InvalidState&) {
      read_failed = true;
    }
    return make_model(ds, dt, c);
  };
  reverse_validation_score(factory, s, t, rv_config());
  EXPECT_TRUE(read_failed);
  EXPECT_FALSE(t.labels_locked());
}

TEST(ReverseValidation, SelfTransferMatchesSourceCrossValidation) {
  const auto s = blobs(300, 4, 3, 3.0, 23);
  const double cv = cross_validated_accuracy(s, 5, 3, 0);
  const auto rv = reverse_validation_score(make_model, s, s.features, rv_config());
  EXPECT_NEAR(rv.score, cv, 0.05);
  EXPECT_FALSE(rv.pseudo_label_collapse);
  EXPECT_EQ(rv.pseudo_label_classes, 3);
}

TEST(ReverseValidation, Deterministic) {
  const auto s = blobs(120, 4, 3, 3.0, 24);
  const auto t = blobs(120, 4, 3, 3.0, 25);
  const auto a = reverse_validation_score(make_model, s, t, rv_config());
  const auto b = reverse_validation_score(make_model, s, t, rv_config());
  EXPECT_EQ(a.score, b.score);
}

TEST(ReverseValidation, BadHoldoutThrows) {
  const auto s = blobs(60, 4, 3, 3.0, 26);
  ReverseValidationOptions o;
  o.holdout_fraction = 1.0;
  EXPECT_THROW(reverse_validation_score(make_model, s, s.features, rv_config(), o), InvalidInput);
}
