#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "nsfa/eval.hpp"

using namespace nsfa;
using namespace nsfa::eval;

namespace {

double log_normal_var(double y, double mean, double var) {
  return -0.5 * std::log(2.0 * std::numbers::pi * var) - 0.5 * (y - mean) * (y - mean) / var;
}

}  // namespace

TEST(ReconstructionError, HandComputedExample) {
  Matrix g_true(2, 2);
  g_true << 1.0, 0.0,
            2.0, 3.0;
  Matrix g_hat(2, 3);
  g_hat << 1.0, 0.5, 9.0,
           1.0, 3.0, 9.0;
  // col 0: best (1,1) -> 1; col 1: best (0.5,3) -> 0.25
  EXPECT_NEAR(reconstruction_error(g_true, g_hat), (1.0 + 0.25) / 4.0, 1e-15);
}

TEST(ReconstructionError, ColumnsMayBeReused) {
  Matrix g_true(1, 3);
  g_true << 1.0, 1.1, 0.9;
  Matrix g_hat(1, 1);
  g_hat << 1.0;
  EXPECT_NEAR(reconstruction_error(g_true, g_hat), (0.0 + 0.01 + 0.01) / 3.0, 1e-15);
}

TEST(ReconstructionError, SignModes) {
  Matrix g_true(3, 1);
  g_true << 1.0, -2.0, 0.5;
  const Matrix g_hat = -g_true;
  EXPECT_NEAR(reconstruction_error(g_true, g_hat, SignMode::kVerbatim), 4.0 * 5.25 / 3.0, 1e-12);
  EXPECT_NEAR(reconstruction_error(g_true, g_hat, SignMode::kSignAware), 0.0, 1e-15);
  EXPECT_NEAR(reconstruction_error(g_true, g_true, SignMode::kVerbatim), 0.0, 1e-15);
}

TEST(ReconstructionError, EmptyEstimateIsAZeroColumn) {
  Matrix g_true(2, 1);
  g_true << 3.0, 4.0;
  EXPECT_NEAR(reconstruction_error(g_true, Matrix(2, 0)), 25.0 / 2.0, 1e-15);
  EXPECT_THROW(reconstruction_error(g_true, Matrix::Zero(3, 1)), InvalidState);
}

TEST(SupportRecovery, HandComputedExample) {
  BinaryMatrix z(4, 1);
  z << 1, 1, 0, 0;
  Matrix g_true(4, 1);
  g_true << 1.0, 1.0, 0.0, 0.0;
  Matrix g_hat(4, 2);
  g_hat << 1.0, 0.0,
           0.0, 0.0,
           0.5, 0.0,
           0.0, 0.0;
  const auto pr = support_precision_recall(z, g_true, g_hat, 0.1);
  // matched column 0: inferred {0, 2}, true {0, 1}
  EXPECT_NEAR(pr.precision, 0.5, 1e-15);
  EXPECT_NEAR(pr.recall, 0.5, 1e-15);

  const auto strict = support_precision_recall(z, g_true, g_hat, 0.6);
  EXPECT_NEAR(strict.precision, 1.0, 1e-15);
  EXPECT_NEAR(strict.recall, 0.5, 1e-15);
}

TEST(SupportRecovery, PatternMatchingWithoutTrueLoadings) {
  BinaryMatrix z(3, 2);
  z << 1, 0,
       1, 1,
       0, 1;
  Matrix g_hat(3, 2);
  g_hat << 0.0, -2.0,
           0.7, 1.0,
           0.3, 0.0;
  const auto pr = support_precision_recall(z, g_hat, 0.0);
  EXPECT_NEAR(pr.precision, 1.0, 1e-15);
  EXPECT_NEAR(pr.recall, 1.0, 1e-15);
  EXPECT_THROW(support_precision_recall(z, g_hat, -1.0), DomainError);
}

TEST(SupportRecovery, EmptyPredictionHasUnitPrecision) {
  BinaryMatrix z = BinaryMatrix::Ones(2, 1);
  const auto pr = support_precision_recall(z, Matrix(2, 0), 0.0);
  EXPECT_EQ(pr.precision, 1.0);
  EXPECT_EQ(pr.recall, 0.0);
}

TEST(TestLikelihood, SingleSampleMatchesDirectSum) {
  Matrix y(2, 2);
  y << 0.3, -1.0,
       2.0, 0.1;
  Mask mask = Mask::Constant(2, 2, true);
  mask(0, 1) = false;
  mask(1, 0) = false;
  PosteriorSample s;
  s.g = Matrix(2, 1);
  s.g << 1.0, -0.5;
  s.x = Matrix(1, 2);
  s.x << 2.0, -1.5;
  s.psi_inv = Vector(2);
  s.psi_inv << 4.0, 0.5;
  const double expected = log_normal_var(-1.0, -1.5, 0.25) + log_normal_var(2.0, -1.0, 2.0);
  for (auto agg : {PredictiveAggregation::kLogMean, PredictiveAggregation::kMeanLog}) {
    EXPECT_NEAR(test_log_likelihood(y, mask, {s}, agg), expected, 1e-12);
  }
}

TEST(TestLikelihood, OrderInvariantAndJensen) {
  Rng rng(7);
  const Index d = 3, n = 4;
  Matrix y = Matrix::NullaryExpr(d, n, [&] { return rng.normal(); });
  Mask mask = Mask::Constant(d, n, true);
  mask(0, 0) = mask(2, 3) = mask(1, 2) = false;
  std::vector<PosteriorSample> samples;
  for (int i = 0; i < 5; ++i) {
    PosteriorSample s;
    s.g = Matrix::NullaryExpr(d, 2, [&] { return rng.normal(); });
    s.x = Matrix::NullaryExpr(2, n, [&] { return rng.normal(); });
    s.psi_inv = Vector::NullaryExpr(d, [&] { return rng.gamma(2.0, 1.0); });
    samples.push_back(s);
  }
  const double log_mean = test_log_likelihood(y, mask, samples);
  const double mean_log = test_log_likelihood(y, mask, samples, PredictiveAggregation::kMeanLog);
  EXPECT_GE(log_mean, mean_log);

  // independent evaluation of the log-mean aggregate
  double expected = 0.0;
  for (Index j = 0; j < n; ++j) {
    for (Index i = 0; i < d; ++i) {
      if (mask(i, j)) continue;
      double acc = 0.0;
      for (const auto& s : samples) {
        acc += std::exp(log_normal_var(y(i, j), (s.g * s.x)(i, j), 1.0 / s.psi_inv(i)));
      }
      expected += std::log(acc / samples.size());
    }
  }
  EXPECT_NEAR(log_mean, expected, 1e-10);

  std::reverse(samples.begin(), samples.end());
  std::swap(samples[0], samples[2]);
  EXPECT_NEAR(test_log_likelihood(y, mask, samples), log_mean, 1e-12);
  EXPECT_NEAR(test_log_likelihood(y, mask, samples, PredictiveAggregation::kMeanLog), mean_log, 1e-12);
}

TEST(TestLikelihood, NothingHeldOutIsZero) {
  PosteriorSample s{Matrix(2, 0), Matrix(0, 3), Vector::Ones(2)};
  EXPECT_EQ(test_log_likelihood(Matrix::Zero(2, 3), Mask::Constant(2, 3, true), {s}), 0.0);
  EXPECT_THROW(test_log_likelihood(Matrix::Zero(2, 3), Mask::Constant(2, 3, true), {}), InvalidState);
}

TEST(HoldOut, ExactCountAndMissingPreserved) {
  Mask observed = Mask::Constant(10, 7, true);
  observed(3, 3) = observed(0, 6) = false;
  const auto split = make_holdout_split(observed, 0.1, 5);
  // 68 observed -> round(6.8) = 7 held out
  EXPECT_EQ(observed.count() - split.mask.count(), 7);
  EXPECT_FALSE(split.mask(3, 3));
  EXPECT_FALSE(split.mask(0, 6));
  EXPECT_TRUE((split.mask && !observed).count() == 0);

  const auto again = make_holdout_split(observed, 0.1, 5);
  EXPECT_TRUE((again.mask == split.mask).all());
  const auto other = make_holdout_split(observed, 0.1, 6);
  EXPECT_FALSE((other.mask == split.mask).all());
  EXPECT_THROW(make_holdout_split(observed, 1.0, 1), ConfigError);
}

TEST(Synthetic, SupportSnrAndDeterminism) {
  Rng crng(3);
  SyntheticSpec spec;
  spec.z_true = random_connectivity(100, 16, 0.1, 3, crng);
  spec.samples = 100;
  spec.snr = 10.0;
  spec.seed = 11;
  for (Index k = 0; k < spec.z_true.cols(); ++k) EXPECT_GE(spec.z_true.col(k).cast<int>().sum(), 3);

  const auto a = generate_synthetic(spec);
  EXPECT_TRUE(((a.g_true.array() != 0.0) == (spec.z_true.array() != 0)).all());
  const Matrix signal = a.g_true * a.x_true;
  EXPECT_NEAR(mean_power(signal) / a.noise_variance, 10.0, 1e-9);
  const double realized = mean_power(signal) / mean_power(a.y - signal);
  EXPECT_NEAR(realized, 10.0, 10.0 * 5.0 * std::sqrt(2.0 / 1e4));

  const auto b = generate_synthetic(spec);
  EXPECT_TRUE(a.y == b.y);

  spec.snr = std::numeric_limits<double>::infinity();
  const auto clean = generate_synthetic(spec);
  EXPECT_EQ(clean.noise_variance, 0.0);
  EXPECT_TRUE(clean.y == clean.g_true * clean.x_true);
}

TEST(Synthetic, RejectsBadSpecs) {
  SyntheticSpec spec;
  spec.z_true = BinaryMatrix::Zero(3, 2);
  spec.z_true(0, 0) = 1;
  EXPECT_THROW(generate_synthetic(spec), ConfigError);
  Rng rng(1);
  EXPECT_THROW(random_connectivity(5, 2, 0.0, 1, rng), ConfigError);
  EXPECT_THROW(random_connectivity(5, 2, 0.5, 6, rng), ConfigError);
}

TEST(KHistogram, HandComputedExample) {
  const std::vector<Index> trace = {9, 9, 2, 3, 3, 4};
  const auto h = posterior_k_histogram(trace, 2);
  EXPECT_EQ(h.total, 4);
  EXPECT_EQ(h.counts.at(3), 2);
  EXPECT_EQ(h.counts.at(2), 1);
  EXPECT_DOUBLE_EQ(h.mean, 3.0);
  EXPECT_NEAR(h.sd, std::sqrt(2.0 / 3.0), 1e-15);
  EXPECT_THROW(posterior_k_histogram(trace, 6), InvalidState);
}
