#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "rmit/error.hpp"
#include "rmit/metrics.hpp"
#include "support/oracles.hpp"

using namespace rmit;

namespace {

Eigen::MatrixXd gaussian_sample(int n, int d, std::uint64_t seed, double shift = 0.0, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd m(n, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) m(i, j) = shift + scale * normal(rng);
  return m;
}

oracle::Matrix to_oracle(const Eigen::MatrixXd& m) {
  oracle::Matrix out(static_cast<std::size_t>(m.rows()), std::vector<long double>(static_cast<std::size_t>(m.cols())));
  for (int i = 0; i < m.rows(); ++i)
    for (int j = 0; j < m.cols(); ++j) out[i][j] = m(i, j);
  return out;
}

std::vector<std::vector<double>> rows_of(const Eigen::MatrixXd& m, const std::vector<std::int64_t>& idx) {
  std::vector<std::vector<double>> out;
  for (auto i : idx) {
    std::vector<double> r(static_cast<std::size_t>(m.cols()));
    for (int j = 0; j < m.cols(); ++j) r[j] = m(i, j);
    out.push_back(r);
  }
  return out;
}

}  // namespace

TEST(Fid, IdenticalSetsGiveZero) {
  EmbeddingSet a{gaussian_sample(300, 6, 1), EmbeddingSource::real_train};
  EXPECT_NEAR(fid(a, a), 0.0, 1e-6);
}

TEST(Fid, MeanShiftGivesSquaredNorm) {
  auto base = gaussian_sample(20000, 4, 2);
  Eigen::MatrixXd shifted = base;
  Eigen::RowVectorXd shift(4);
  shift << 1.0, -2.0, 0.5, 1.5;
  shifted.rowwise() += shift;
  EmbeddingSet a{base, EmbeddingSource::real_train}, b{shifted, EmbeddingSource::generated};
  const double expected = shift.squaredNorm();
  EXPECT_NEAR(fid(a, b), expected, 0.05 * expected);
  // Independent samples of one distribution after the shift.
  EmbeddingSet c{gaussian_sample(20000, 4, 3), EmbeddingSource::generated};
  c.vectors.rowwise() += shift;
  EXPECT_NEAR(fid(a, c), expected, 0.05 * expected);
}

TEST(Fid, MatchesJacobiOracle) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto x = gaussian_sample(50, 5, 10 + seed, 0.3, 1.2);
    auto y = gaussian_sample(60, 5, 20 + seed, -0.1, 0.7);
    // Correlate the second set so the covariances do not commute.
    y.col(1) += 0.8 * y.col(0);
    const auto fx = fit_gaussian({x, EmbeddingSource::real_train});
    const auto fy = fit_gaussian({y, EmbeddingSource::generated});
    std::vector<long double> mx(fx.mean.data(), fx.mean.data() + 5), my(fy.mean.data(), fy.mean.data() + 5);
    const long double expected = oracle::frechet(mx, to_oracle(fx.covariance), my, to_oracle(fy.covariance));
    EXPECT_NEAR(frechet_distance(fx.mean, fx.covariance, fy.mean, fy.covariance), static_cast<double>(expected),
                1e-9 * std::max(1.0L, expected));
  }
}

TEST(Fid, UnbiasedCovariance) {
  Eigen::MatrixXd m(3, 1);
  m << 1.0, 2.0, 6.0;
  const auto f = fit_gaussian({m, EmbeddingSource::real_train});
  EXPECT_DOUBLE_EQ(f.mean(0), 3.0);
  EXPECT_DOUBLE_EQ(f.covariance(0, 0), 7.0);
  EXPECT_THROW(fit_gaussian({Eigen::MatrixXd::Zero(1, 2), EmbeddingSource::real_train}), InvalidInput);
}

TEST(InceptionScore, Bounds) {
  const int c = 5;
  EXPECT_EQ(inception_score(Eigen::MatrixXd::Constant(40, c, 1.0 / c)), 1.0);
  Eigen::MatrixXd onehot = Eigen::MatrixXd::Zero(40, c);
  for (int i = 0; i < 40; ++i) onehot(i, i % c) = 1.0;
  EXPECT_EQ(inception_score(onehot), static_cast<double>(c));
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.01, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    Eigen::MatrixXd p(30, c);
    for (int i = 0; i < 30; ++i) {
      for (int j = 0; j < c; ++j) p(i, j) = std::pow(u(rng), 4);
      p.row(i) /= p.row(i).sum();
    }
    const double s = inception_score(p);
    EXPECT_GE(s, 1.0 - 1e-12);
    EXPECT_LE(s, c + 1e-12);
  }
}

TEST(Kid, PerSplitMatchesBruteForce) {
  auto real = gaussian_sample(120, 8, 5);
  auto gen = gaussian_sample(90, 8, 6, 0.2, 1.1);
  Rng rng(7);
  const auto r = kid({real, EmbeddingSource::real_train}, {gen, EmbeddingSource::generated}, 4, 30, rng);
  ASSERT_EQ(r.per_split.size(), 4u);
  double mean = 0;
  for (std::size_t s = 0; s < 4; ++s) {
    ASSERT_EQ(r.real_rows[s].size(), 30u);
    const long double expected = oracle::mmd2_loops(rows_of(real, r.real_rows[s]), rows_of(gen, r.generated_rows[s]));
    EXPECT_NEAR(r.per_split[s], static_cast<double>(expected), 1e-12 * std::max(1.0L, std::fabs(expected)));
    mean += r.per_split[s] / 4;
  }
  EXPECT_DOUBLE_EQ(r.mean, mean);
}

TEST(Kid, SameDistributionMeanNearZero) {
  auto a = gaussian_sample(2000, 6, 8);
  auto b = gaussian_sample(2000, 6, 9);
  Rng rng(10);
  const auto r = kid({a, EmbeddingSource::real_train}, {b, EmbeddingSource::generated}, 40, 100, rng);
  double var = 0;
  for (double v : r.per_split) var += (v - r.mean) * (v - r.mean);
  const double se = std::sqrt(var / (r.per_split.size() - 1) / r.per_split.size());
  EXPECT_LE(std::fabs(r.mean), 3 * se);
}

TEST(Kid, SplitLargerThanSampleRejected) {
  Rng rng(0);
  EXPECT_THROW(kid({gaussian_sample(10, 2, 1), EmbeddingSource::real_train},
                   {gaussian_sample(10, 2, 2), EmbeddingSource::generated}, 2, 20, rng),
               InvalidInput);
}

TEST(Spearman, RanksMatchOracle) {
  const std::vector<double> v{3.0, 1.0, 4.0, 1.0, 5.0, 9.0, 2.0, 6.0, 5.0};
  EXPECT_EQ(average_ranks(v), oracle::ranks(v));
}

TEST(Spearman, MatchesPearsonOfRanks) {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> coarse(0, 6);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> a(12), b(12);
    for (int i = 0; i < 12; ++i) a[i] = coarse(rng), b[i] = coarse(rng) + 0.5 * a[i];
    if (*std::min_element(a.begin(), a.end()) == *std::max_element(a.begin(), a.end())) continue;
    EXPECT_NEAR(spearman_abs(a, b), std::fabs(oracle::pearson(oracle::ranks(a), oracle::ranks(b))), 1e-12);
  }
}

TEST(Spearman, MonotoneTransformInvariance) {
  std::mt19937_64 rng(12);
  std::normal_distribution<double> normal;
  std::uniform_int_distribution<int> len(5, 40);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = len(rng);
    std::vector<double> a(n), b(n), fa(n), gb(n);
    for (int i = 0; i < n; ++i) {
      a[i] = normal(rng);
      b[i] = a[i] + normal(rng);
      fa[i] = std::exp(2 * a[i]) + 3;  // increasing
      gb[i] = -std::pow(b[i], 3);      // decreasing
    }
    EXPECT_DOUBLE_EQ(spearman_abs(a, b), spearman_abs(fa, gb)) << "trial " << trial;
  }
}

TEST(Spearman, UndefinedCasesThrow) {
  std::vector<double> a{1, 2, 3}, c{2, 2, 2}, s{1, 2};
  EXPECT_THROW(spearman_abs(a, c), InvalidInput);
  EXPECT_THROW(spearman_abs(a, s), InvalidInput);
}

TEST(MetricsReport, JsonRoundTripAndValidation) {
  MetricsReport r{10, 55.0, 12.5, 2.1, 0.3, {0.2, 0.4}};
  const auto back = MetricsReport::from_json(r.to_json());
  EXPECT_EQ(back.epoch, 10);
  EXPECT_EQ(back.kid_splits, r.kid_splits);
  r.is_score = 4.0;
  EXPECT_THROW(r.validate(3), InvalidInput);
}

TEST(ClassificationAccuracy, TargetsAvoidSourceDomain) {
  std::vector<std::int64_t> labels(3000);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<std::int64_t>(i % 4);
  Rng rng(13);
  const auto t = draw_other_domains(labels, 4, rng);
  std::vector<std::vector<int>> counts(4, std::vector<int>(4, 0));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    ASSERT_NE(t[i], labels[i]);
    counts[labels[i]][t[i]]++;
  }
  // 750 per source, 250 expected per other target.
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j)
      if (i != j) EXPECT_NEAR(counts[i][j], 250, 3 * std::sqrt(750 * (1.0 / 3) * (2.0 / 3)));
}

TEST(ClassificationAccuracy, CountsTargetHits) {
  // With two domains the target is always the other one. A zeroed
  // classifier predicts domain 0, so exactly the images from domain 1 hit.
  EvalClassifierConfig cfg;
  cfg.image_size = 8;
  cfg.num_domains = 2;
  EvalClassifier e(cfg);
  {
    torch::NoGradGuard ng;
    for (auto& p : e->parameters()) p.zero_();
  }
  Translator passthrough = [](const torch::Tensor& x, const torch::Tensor&) { return x; };
  auto images = torch::zeros({6, 3, 8, 8});
  std::vector<std::int64_t> labels{1, 1, 0, 0, 1, 0};
  Rng rng(1);
  EXPECT_THROW(classification_accuracy(e, passthrough, images, labels, 2, rng), LifecycleError);
  e->mark_trained();
  EXPECT_EQ(classification_accuracy(e, passthrough, images, labels, 2, rng), 50.0);
}
