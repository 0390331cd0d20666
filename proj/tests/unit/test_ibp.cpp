#include <gtest/gtest.h>

#include <boost/math/quadrature/tanh_sinh.hpp>
#include <boost/math/special_functions/beta.hpp>
#include <cmath>
#include <functional>
#include <map>

#include "nsfa/ibp.hpp"
#include "nsfa/math.hpp"
#include "nsfa/variant_priors.hpp"
#include "support/oracles.hpp"

using namespace nsfa;

namespace {

BinaryMatrix matrix_from_bits(int dims, int features, unsigned bits) {
  BinaryMatrix z(dims, features);
  for (int k = 0; k < features; ++k) {
    for (int d = 0; d < dims; ++d) z(d, k) = (bits >> (k * dims + d)) & 1u;
  }
  return z;
}

// Every nonzero column history for `dims` rows, as a column vector.
std::vector<BinaryMatrix> nonzero_histories(int dims) {
  std::vector<BinaryMatrix> out;
  for (unsigned h = 1; h < (1u << dims); ++h) out.push_back(matrix_from_bits(dims, 1, h));
  return out;
}

// Calls `visit` with every lof class of `dims`-row matrices having at most
// `max_cols` nonzero columns (a multiset of histories).
void enumerate_classes(int dims, int max_cols, const std::function<void(const BinaryMatrix&)>& visit) {
  const auto histories = nonzero_histories(dims);
  std::vector<int> counts(histories.size(), 0);
  std::function<void(std::size_t, int)> rec = [&](std::size_t idx, int used) {
    if (idx == histories.size()) {
      BinaryMatrix z(dims, used);
      int col = 0;
      for (std::size_t h = 0; h < histories.size(); ++h) {
        for (int c = 0; c < counts[h]; ++c) z.col(col++) = histories[h].col(0);
      }
      visit(z);
      return;
    }
    for (int c = 0; used + c <= max_cols; ++c) {
      counts[idx] = c;
      rec(idx + 1, used + c);
    }
    counts[idx] = 0;
  };
  rec(0, 0);
}

}  // namespace

TEST(IbpFinite, NormalizesOverAllMatrices) {
  for (int dims = 1; dims <= 3; ++dims) {
    for (int features = 1; features <= 3; ++features) {
      for (double alpha : {0.3, 1.0, 2.5}) {
        double total = 0.0;
        const unsigned count = 1u << (dims * features);
        for (unsigned bits = 0; bits < count; ++bits) {
          total += std::exp(ibp::log_prob_finite(matrix_from_bits(dims, features, bits), alpha, features));
        }
        EXPECT_NEAR(total, 1.0, 1e-10) << "D=" << dims << " K=" << features << " alpha=" << alpha;
      }
    }
  }
}

TEST(IbpFinite, MatchesBetaIntegralQuadrature) {
  // P(Z) = prod_k int pi^m (1 - pi)^(D - m) Beta(pi; alpha/K, 1) dpi.
  boost::math::quadrature::tanh_sinh<double> integrator;
  const int dims = 5, features = 4;
  const double alpha = 1.7, r = alpha / features;
  Rng rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    BinaryMatrix z(dims, features);
    for (Index i = 0; i < z.size(); ++i) z(i) = rng.uniform() < 0.4;
    double expected = 0.0;
    for (int k = 0; k < features; ++k) {
      const int m = z.col(k).cast<int>().sum();
      const double integral = integrator.integrate(
          [&](double p) { return std::pow(p, m + r - 1.0) * std::pow(1.0 - p, dims - m) * r; }, 0.0, 1.0);
      expected += std::log(integral);
    }
    EXPECT_NEAR(ibp::log_prob_finite(z, alpha, features), expected, 1e-9);
  }
}

TEST(IbpInfinite, ClassProbabilitiesSumToOne) {
  // D = 2: three histories, up to 30 copies each; D = 3 with a small alpha
  // and at most 12 columns. Truncated mass is below 1e-11 in both cases.
  double total2 = 0.0;
  enumerate_classes(2, 30, [&](const BinaryMatrix& z) { total2 += std::exp(ibp::log_prob_infinite(z, 1.0)); });
  EXPECT_NEAR(total2, 1.0, 1e-10);
  double total3 = 0.0;
  enumerate_classes(3, 12, [&](const BinaryMatrix& z) { total3 += std::exp(ibp::log_prob_infinite(z, 0.5)); });
  EXPECT_NEAR(total3, 1.0, 1e-10);
}

TEST(IbpInfinite, SingleRowIsPoisson) {
  for (int k = 0; k < 10; ++k) {
    const BinaryMatrix z = BinaryMatrix::Ones(1, k);
    EXPECT_NEAR(ibp::log_prob_infinite(z, 2.0), k * std::log(2.0) - 2.0 - std::lgamma(k + 1.0), 1e-12);
  }
}

TEST(IbpInfinite, LimitOfFiniteClassProbability) {
  // The finite model assigns a lof class with K+ columns and K_h repeats
  // K! / ((K - K+)! prod K_h!) equal-probability matrices; as K grows this
  // approaches the infinite-model probability.
  BinaryMatrix z(3, 3);
  z << 1, 1, 0, 1, 0, 1, 0, 0, 1;
  const double alpha = 1.3;
  const double exact = ibp::log_prob_infinite(z, alpha);
  double prev_gap = INFINITY;
  for (int features : {100, 10000, 1000000}) {
    const double count = std::lgamma(features + 1.0) - std::lgamma(features - 3 + 1.0);  // all histories distinct
    const double finite = ibp::log_prob_finite(z, alpha, features) + count;
    const double gap = std::abs(finite - exact);
    EXPECT_LT(gap, prev_gap);
    prev_gap = gap;
  }
  EXPECT_LT(prev_gap, 1e-5);
}

TEST(IbpInfinite, RejectsZeroColumns) {
  BinaryMatrix z = BinaryMatrix::Zero(3, 1);
  EXPECT_THROW(ibp::log_prob_infinite(z, 1.0), DomainError);
}

TEST(IbpInfinite, InvariantUnderRowAndColumnPermutationOfClass) {
  BinaryMatrix z(3, 3);
  z << 1, 1, 0, 1, 0, 0, 0, 1, 1;
  BinaryMatrix swapped = z;
  swapped.col(0).swap(swapped.col(2));
  EXPECT_DOUBLE_EQ(ibp::log_prob_infinite(z, 0.8), ibp::log_prob_infinite(swapped, 0.8));
  EXPECT_EQ(ibp::lof_class_key(z), ibp::lof_class_key(swapped));
  EXPECT_EQ(ibp::left_ordered_form(z), ibp::left_ordered_form(swapped));
}

TEST(IbpConditional, OddsMatchFiniteLimit) {
  // P(z_dk = 1 | rest) / P(z_dk = 0 | rest) from ratios of finite-model
  // probabilities with a very large K.
  const int dims = 6;
  const double alpha = 2.0;
  const int features = 1000000;
  for (int m = 1; m < dims; ++m) {
    BinaryMatrix off = BinaryMatrix::Zero(dims, 1);
    for (int d = 0; d < m; ++d) off(d, 0) = 1;
    BinaryMatrix on = off;
    on(dims - 1, 0) = 1;
    const double ratio = ibp::log_prob_finite(on, alpha, features) - ibp::log_prob_finite(off, alpha, features);
    EXPECT_NEAR(ibp::conditional_inclusion_log_odds(m, dims), ratio, 1e-5);
  }
  EXPECT_EQ(ibp::conditional_inclusion_log_odds(0, dims), -INFINITY);
  EXPECT_THROW(ibp::conditional_inclusion_log_odds(dims, dims), DomainError);
  EXPECT_THROW(ibp::conditional_inclusion_log_odds(-1, dims), DomainError);
}

TEST(IbpConditional, FiniteOddsExact) {
  const int dims = 5, features = 3;
  const double alpha = 1.5;
  for (int m = 0; m < dims; ++m) {
    BinaryMatrix on = BinaryMatrix::Zero(dims, features);
    for (int d = 0; d < m; ++d) on(d, 1) = 1;
    BinaryMatrix off = on;
    on(dims - 1, 1) = 1;
    const double ratio = ibp::log_prob_finite(on, alpha, features) - ibp::log_prob_finite(off, alpha, features);
    EXPECT_NEAR(variants::finite_z_log_odds(m, dims, features, alpha), ratio, 1e-12);
  }
}

TEST(IbpSampler, ClassFrequenciesMatchProbabilities) {
  const int dims = 3;
  const double alpha = 1.0;
  const int draws = 200000;
  Rng rng(2024);
  std::map<std::string, int> freq;
  for (int i = 0; i < draws; ++i) ++freq[ibp::lof_class_key(ibp::sample_ibp(dims, alpha, rng).Z)];
  int checked = 0;
  enumerate_classes(dims, 3, [&](const BinaryMatrix& z) {
    const double p = std::exp(ibp::log_prob_infinite(z, alpha));
    if (p < 0.005) return;
    const double observed = static_cast<double>(freq[ibp::lof_class_key(z)]) / draws;
    const double se = std::sqrt(p * (1 - p) / draws);
    EXPECT_LT(std::abs(observed - p), 4.5 * se) << ibp::lof_class_key(z);
    ++checked;
  });
  EXPECT_GT(checked, 10);
}

TEST(IbpSampler, MomentsMatchPoissonFacts) {
  const int dims = 100, draws = 10000;
  const double alpha = 1.0;
  Rng rng(99);
  double sum_k = 0, sq_k = 0, sum_row = 0, sq_row = 0;
  for (int i = 0; i < draws; ++i) {
    const auto draw = ibp::sample_ibp(dims, alpha, rng);
    const double k = static_cast<double>(draw.Z.cols());
    const double row = draw.Z.cast<double>().sum() / dims;
    sum_k += k;
    sq_k += k * k;
    sum_row += row;
    sq_row += row * row;
  }
  const double mean_k = sum_k / draws, mean_row = sum_row / draws;
  const double se_k = std::sqrt((sq_k / draws - mean_k * mean_k) / draws);
  const double se_row = std::sqrt((sq_row / draws - mean_row * mean_row) / draws);
  EXPECT_NEAR(harmonic(100), 5.187377517639621, 1e-12);
  EXPECT_LT(std::abs(mean_k - alpha * harmonic(dims)), 3 * se_k);
  EXPECT_LT(std::abs(mean_row - alpha), 3 * se_row);
}

TEST(IbpSampler, NewDishCountsArePoisson) {
  // Customer i's new dishes ~ Poisson(alpha / i); chi-square on customer 2.
  const int dims = 4, draws = 50000;
  const double alpha = 3.0;
  Rng rng(5);
  std::vector<int> hist(8, 0);
  for (int t = 0; t < draws; ++t) {
    const auto draw = ibp::sample_ibp(dims, alpha, rng);
    int fresh = 0;
    for (Index k = 0; k < draw.Z.cols(); ++k) {
      if (draw.Z(1, k) && !draw.Z(0, k)) ++fresh;
    }
    ++hist[static_cast<std::size_t>(std::min(fresh, 7))];
  }
  double chi2 = 0.0, tail = 1.0;
  for (int k = 0; k < 8; ++k) {
    const double p = k < 7 ? std::exp(log_poisson_pmf(k, alpha / 2)) : tail;
    tail -= k < 7 ? p : 0.0;
    const double e = p * draws;
    chi2 += (hist[static_cast<std::size_t>(k)] - e) * (hist[static_cast<std::size_t>(k)] - e) / e;
  }
  EXPECT_LT(chi2, 18.48);  // chi-square(7) 99% quantile
}

TEST(IbpSampler, DishCountsMatchColumns) {
  Rng rng(1);
  const auto draw = ibp::sample_ibp(20, 4.0, rng);
  EXPECT_EQ(draw.dish_counts, draw.Z.cast<int>().colwise().sum().transpose());
  EXPECT_TRUE((draw.dish_counts.array() > 0).all());
  EXPECT_THROW(ibp::sample_ibp(0, 1.0, rng), DomainError);
  EXPECT_THROW(ibp::sample_ibp(3, 0.0, rng), DomainError);
}

TEST(IbpAlpha, PosteriorMatchesGrid) {
  // Grid posterior: Gamma(e, f) prior times the class likelihood in alpha.
  BinaryMatrix z(6, 4);
  z << 1, 0, 0, 1, 1, 1, 0, 0, 0, 1, 1, 0, 0, 0, 1, 0, 1, 0, 0, 0, 0, 0, 0, 1;
  const double e = 2.0, f = 0.5;
  Rng rng(8);
  std::vector<double> draws;
  for (int i = 0; i < 100000; ++i) draws.push_back(ibp::sample_alpha(4, 6, e, f, rng));
  const auto [lo, hi] = oracle::grid_bounds(draws, true);
  const oracle::GridCdf cdf(
      [&](double a) { return log_gamma_density(a, e, f) + ibp::log_prob_infinite(z, a); }, lo, hi);
  EXPECT_LT(oracle::ks_statistic(draws, [&](double x) { return cdf(x); }), 0.01);
}
