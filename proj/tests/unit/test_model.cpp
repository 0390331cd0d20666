#include <gtest/gtest.h>

#include <cmath>

#include "nsfa/model.hpp"
#include "nsfa/rng.hpp"

using namespace nsfa;

namespace {

struct Fixture {
  ObservationMatrix y;
  FeatureState state;
  Vector psi_inv;
};

Fixture small_example() {
  Fixture f;
  Matrix y(2, 2);
  y << 1.0, 2.0, 3.0, -1.0;
  f.y = ObservationMatrix::complete(y);
  f.state.Z = BinaryMatrix::Ones(2, 1);
  f.state.G.resize(2, 1);
  f.state.G << 0.5, 2.0;
  f.state.X.resize(1, 2);
  f.state.X << 1.0, -0.5;
  f.psi_inv.resize(2);
  f.psi_inv << 2.0, 0.25;
  return f;
}

FeatureState random_state(Index dims, Index samples, Index features, Rng& rng) {
  FeatureState s;
  s.Z.resize(dims, features);
  s.G = Matrix::Zero(dims, features);
  for (Index k = 0; k < features; ++k) {
    for (Index d = 0; d < dims; ++d) {
      s.Z(d, k) = rng.uniform() < 0.5;
      if (s.Z(d, k)) s.G(d, k) = rng.normal();
    }
  }
  s.X.resize(features, samples);
  for (Index i = 0; i < s.X.size(); ++i) s.X(i) = rng.normal();
  return s;
}

}  // namespace

TEST(LogLikelihood, MatchesScipyReference) {
  const Fixture f = small_example();
  EXPECT_NEAR(log_likelihood(f.y, f.state, f.psi_inv), -9.806401313378636, 1e-12);
}

TEST(LogLikelihood, SkipsMaskedEntries) {
  Fixture f = small_example();
  f.y.mask(0, 1) = false;
  f.y.values(0, 1) = 1e6;  // ignored
  EXPECT_NEAR(log_likelihood(f.y, f.state, f.psi_inv), -4.171536370453936, 1e-12);
}

TEST(LogLikelihood, EmptyStateIsPureNoise) {
  Fixture f = small_example();
  f.state = FeatureState::empty(2, 2);
  double expected = 0.0;
  for (Index d = 0; d < 2; ++d) {
    for (Index n = 0; n < 2; ++n) {
      const double v = f.y.values(d, n);
      expected += -0.5 * std::log(2 * M_PI / f.psi_inv(d)) - 0.5 * f.psi_inv(d) * v * v;
    }
  }
  EXPECT_NEAR(log_likelihood(f.y, f.state, f.psi_inv), expected, 1e-12);
}

TEST(LogLikelihood, InvariantToFeaturePermutation) {
  Rng rng(7);
  const Index D = 6, N = 9, K = 4;
  FeatureState s = random_state(D, N, K, rng);
  Matrix y(D, N);
  for (Index i = 0; i < y.size(); ++i) y(i) = rng.normal();
  const ObservationMatrix obs = ObservationMatrix::complete(y);
  const Vector psi = Vector::Constant(D, 1.7);
  const double base = log_likelihood(obs, s, psi);

  Eigen::PermutationMatrix<Eigen::Dynamic> perm(K);
  perm.indices() << 2, 0, 3, 1;
  FeatureState p;
  p.Z = s.Z * perm;
  p.G = s.G * perm;
  p.X = perm.transpose() * s.X;
  EXPECT_NEAR(log_likelihood(obs, p, psi), base, 1e-10);
}

TEST(LogLikelihood, MaximizedAtResidualPrecision) {
  // For one dimension the likelihood in psi peaks at 1 / mean squared residual.
  Rng rng(3);
  const Index N = 40;
  Matrix y(1, N);
  for (Index n = 0; n < N; ++n) y(0, n) = rng.normal(0.0, 1.3);
  const ObservationMatrix obs = ObservationMatrix::complete(y);
  const FeatureState empty = FeatureState::empty(1, N);
  const double mle = 1.0 / (y.squaredNorm() / N);
  double best = -1.0, best_ll = -INFINITY;
  for (int i = 1; i <= 20000; ++i) {
    const double p = i * 1e-4;
    const double ll = log_likelihood(obs, empty, Vector::Constant(1, p));
    if (ll > best_ll) {
      best_ll = ll;
      best = p;
    }
  }
  EXPECT_NEAR(best, mle, 1e-4);
}

TEST(LogLikelihood, RejectsBadInputs) {
  Fixture f = small_example();
  Vector bad = f.psi_inv;
  bad(0) = 0.0;
  EXPECT_THROW(log_likelihood(f.y, f.state, bad), InvalidState);
  f.state.G(0, 0) = NAN;
  EXPECT_THROW(log_likelihood(f.y, f.state, f.psi_inv), InvalidState);
  Fixture g = small_example();
  g.state.X.resize(1, 3);
  EXPECT_THROW(log_likelihood(g.y, g.state, g.psi_inv), InvalidState);
}

TEST(FeatureState, CouplingAndValidation) {
  Fixture f = small_example();
  EXPECT_TRUE(f.state.coupling_holds());
  f.state.Z(0, 0) = 0;
  EXPECT_FALSE(f.state.coupling_holds());
  EXPECT_THROW(f.state.validate(3, 2), InvalidState);
}

TEST(FeatureState, RemoveFeaturesKeepsOrder) {
  Rng rng(11);
  FeatureState s = random_state(5, 4, 4, rng);
  const FeatureState before = s;
  s.remove_features({false, true, false, true});
  ASSERT_EQ(s.active(), 2);
  EXPECT_EQ(s.G.col(0), before.G.col(0));
  EXPECT_EQ(s.G.col(1), before.G.col(2));
  EXPECT_EQ(s.X.row(1), before.X.row(2));
  EXPECT_EQ(s.Z.col(1), before.Z.col(2));
}

TEST(Residual, RecomputeMatchesDefinition) {
  const Fixture f = small_example();
  const ResidualCache r = recompute_residual(f.y, f.state);
  Matrix expected(2, 2);
  expected << 1.0 - 0.5, 2.0 + 0.25, 3.0 - 2.0, -1.0 + 1.0;
  EXPECT_LT((r.E - expected).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_EQ(residual_drift(f.y.values, f.state, r), 0.0);
}

TEST(Imputation, ReplaysGeneratorDraws) {
  Fixture f = small_example();
  f.y.mask(1, 0) = false;
  f.y.mask(0, 1) = false;
  Rng a(5), b(5);
  ObservationMatrix imputed = f.y;
  impute_missing(imputed, f.state, f.psi_inv, a);
  const Matrix mean = f.state.G * f.state.X;
  // Column-major order: (1, 0) first, then (0, 1).
  const double v10 = mean(1, 0) + b.normal() / std::sqrt(f.psi_inv(1));
  const double v01 = mean(0, 1) + b.normal() / std::sqrt(f.psi_inv(0));
  EXPECT_DOUBLE_EQ(imputed.values(1, 0), v10);
  EXPECT_DOUBLE_EQ(imputed.values(0, 1), v01);
  EXPECT_EQ(imputed.values(0, 0), f.y.values(0, 0));
  EXPECT_EQ(imputed.values(1, 1), f.y.values(1, 1));
}

TEST(Imputation, KeepsResidualConsistent) {
  Fixture f = small_example();
  f.y.mask(1, 1) = false;
  Matrix y = f.y.values;
  ResidualCache cache = recompute_residual(y, f.state);
  Rng rng(1);
  impute_missing(y, f.y.mask, f.psi_inv, cache, rng);
  EXPECT_LT(residual_drift(y, f.state, cache), 1e-14);
}

TEST(ObservationMatrix, ValidateRejectsNonFinite) {
  Fixture f = small_example();
  f.y.values(0, 0) = INFINITY;
  EXPECT_THROW(f.y.validate(), InvalidState);
  f.y.mask(0, 0) = false;
  EXPECT_NO_THROW(f.y.validate());
}
