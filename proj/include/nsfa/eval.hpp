#pragma once

// Evaluation protocols: synthetic data from a connectivity pattern,
// reconstruction error, support recovery, held-out predictive likelihood and
// the posterior over the number of features.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <vector>

#include "nsfa/errors.hpp"
#include "nsfa/math.hpp"
#include "nsfa/model.hpp"
#include "nsfa/rng.hpp"
#include "nsfa/sampler.hpp"

namespace nsfa::eval {

struct SyntheticSpec {
  BinaryMatrix z_true;
  Index samples = 100;
  double snr = 10.0;  // power of G X over power of the noise; infinity = noiseless
  std::uint64_t seed = 0;

  void validate() const {
    if (z_true.rows() < 1 || z_true.cols() < 1) throw ConfigError("connectivity matrix is empty");
    if (samples < 1) throw ConfigError("synthetic data needs N >= 1");
    if (!(snr > 0.0)) throw ConfigError("snr must be positive");
    for (Index k = 0; k < z_true.cols(); ++k) {
      if (z_true.col(k).cast<int>().sum() == 0) {
        throw ConfigError("connectivity matrix has an all-zero column");
      }
    }
  }
};

struct SyntheticData {
  Matrix y;
  Matrix g_true;
  Matrix x_true;
  double noise_variance = 0.0;
};

inline double mean_power(const Matrix& m) {
  return m.size() > 0 ? m.squaredNorm() / static_cast<double>(m.size()) : 0.0;
}

// G on the support of Z, then X, then the noise, each N(0, 1) column-major.
// The noise variance is the realized power of G X divided by the snr.
inline SyntheticData generate_synthetic(const SyntheticSpec& spec, Rng& rng) {
  spec.validate();
  const Index dims = spec.z_true.rows();
  const Index features = spec.z_true.cols();
  SyntheticData out;
  out.g_true = Matrix::Zero(dims, features);
  for (Index k = 0; k < features; ++k) {
    for (Index d = 0; d < dims; ++d) {
      if (spec.z_true(d, k)) out.g_true(d, k) = rng.normal();
    }
  }
  out.x_true.resize(features, spec.samples);
  for (Index n = 0; n < spec.samples; ++n) {
    for (Index k = 0; k < features; ++k) out.x_true(k, n) = rng.normal();
  }
  const Matrix signal = out.g_true * out.x_true;
  out.noise_variance = std::isinf(spec.snr) ? 0.0 : mean_power(signal) / spec.snr;
  const double sd = std::sqrt(out.noise_variance);
  out.y = signal;
  for (Index n = 0; n < spec.samples; ++n) {
    for (Index d = 0; d < dims; ++d) out.y(d, n) += sd * rng.normal();
  }
  return out;
}

inline SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  Rng rng(spec.seed);
  return generate_synthetic(spec, rng);
}

// Random binary connectivity with independent Bernoulli(density) entries,
// redrawn column by column until every column has at least `min_per_column`
// ones.
inline BinaryMatrix random_connectivity(Index dims, Index features, double density,
                                        int min_per_column, Rng& rng) {
  if (!(density > 0.0 && density <= 1.0)) throw ConfigError("density must lie in (0, 1]");
  if (min_per_column < 1 || min_per_column > dims) {
    throw ConfigError("min_per_column must lie in [1, D]");
  }
  BinaryMatrix z(dims, features);
  for (Index k = 0; k < features; ++k) {
    int count = 0;
    do {
      count = 0;
      for (Index d = 0; d < dims; ++d) {
        z(d, k) = rng.uniform() < density ? 1 : 0;
        count += z(d, k);
      }
    } while (count < min_per_column);
  }
  return z;
}

struct HeldOutSplit {
  Mask mask;  // false = held out
  double fraction = 0.10;
  std::uint64_t seed = 0;
};

// Holds out round(fraction * #observed) observed entries chosen uniformly
// without replacement. Entries already unobserved stay unobserved.
inline HeldOutSplit make_holdout_split(const Mask& observed, double fraction, std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction < 1.0)) throw ConfigError("holdout fraction must lie in [0, 1)");
  HeldOutSplit split{observed, fraction, seed};
  std::vector<Index> candidates;
  for (Index i = 0; i < observed.size(); ++i) {
    if (observed(i)) candidates.push_back(i);
  }
  const auto target = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(candidates.size())));
  Rng rng(seed);
  for (std::size_t i = 0; i < target; ++i) {
    const std::size_t j = i + rng.index(candidates.size() - i);
    std::swap(candidates[i], candidates[j]);
    split.mask(candidates[i]) = false;
  }
  return split;
}

enum class SignMode {
  kVerbatim,   // compare columns as they are
  kSignAware,  // also compare against the negated inferred column
};

namespace detail {

inline double column_distance(const Matrix& a, Index ka, const Matrix& b, Index kb, SignMode mode) {
  const double direct = (a.col(ka) - b.col(kb)).squaredNorm();
  if (mode == SignMode::kVerbatim) return direct;
  return std::min(direct, (a.col(ka) + b.col(kb)).squaredNorm());
}

// Index of the inferred column closest to true column k, and its distance.
// An empty inferred matrix is treated as a single zero column (index -1).
inline std::pair<Index, double> best_match(const Matrix& g_true, Index k, const Matrix& g_hat,
                                           SignMode mode) {
  if (g_hat.cols() == 0) return {-1, g_true.col(k).squaredNorm()};
  Index best = 0;
  double best_dist = std::numeric_limits<double>::infinity();
  for (Index j = 0; j < g_hat.cols(); ++j) {
    const double dist = column_distance(g_true, k, g_hat, j, mode);
    if (dist < best_dist) {
      best_dist = dist;
      best = j;
    }
  }
  return {best, best_dist};
}

}  // namespace detail

// E_r = (1 / DK) sum_k min_j sum_d (G_dk - Ghat_dj)^2. Inferred columns may be
// reused across true columns.
inline double reconstruction_error(const Matrix& g_true, const Matrix& g_hat,
                                   SignMode mode = SignMode::kVerbatim) {
  if (g_hat.cols() > 0 && g_hat.rows() != g_true.rows()) {
    throw InvalidState("reconstruction_error: row counts differ");
  }
  if (g_true.cols() == 0) throw InvalidState("reconstruction_error: no true columns");
  double total = 0.0;
  for (Index k = 0; k < g_true.cols(); ++k) total += detail::best_match(g_true, k, g_hat, mode).second;
  return total / static_cast<double>(g_true.rows() * g_true.cols());
}

struct PrecisionRecall {
  double precision = 1.0;
  double recall = 1.0;
};

namespace detail {

inline PrecisionRecall count_support(const BinaryMatrix& z_true, const Matrix& g_hat,
                                     const std::vector<Index>& match, double threshold) {
  long true_pos = 0, predicted = 0, actual = 0;
  for (Index k = 0; k < z_true.cols(); ++k) {
    const Index j = match[static_cast<std::size_t>(k)];
    for (Index d = 0; d < z_true.rows(); ++d) {
      const bool truth = z_true(d, k) != 0;
      const bool inferred = j >= 0 && std::fabs(g_hat(d, j)) > threshold;
      actual += truth;
      predicted += inferred;
      true_pos += truth && inferred;
    }
  }
  PrecisionRecall pr;
  pr.precision = predicted > 0 ? static_cast<double>(true_pos) / predicted : 1.0;
  pr.recall = actual > 0 ? static_cast<double>(true_pos) / actual : 1.0;
  return pr;
}

}  // namespace detail

// Support recovery when only the true pattern is known: each true column is
// matched to the inferred column whose thresholded support pattern is closest
// in squared distance (E_r on the binary patterns). Inferred support is
// |g| > threshold; counts are pooled over columns, and an empty predicted
// support has precision 1.
inline PrecisionRecall support_precision_recall(const BinaryMatrix& z_true, const Matrix& g_hat,
                                                double threshold) {
  if (threshold < 0.0) throw DomainError("support threshold must be non-negative");
  if (g_hat.cols() > 0 && g_hat.rows() != z_true.rows()) {
    throw InvalidState("support_precision_recall: row counts differ");
  }
  const Matrix pattern = z_true.cast<double>();
  const Matrix inferred = (g_hat.array().abs() > threshold).cast<double>().matrix();
  std::vector<Index> match;
  for (Index k = 0; k < z_true.cols(); ++k) {
    match.push_back(detail::best_match(pattern, k, inferred, SignMode::kVerbatim).first);
  }
  return detail::count_support(z_true, g_hat, match, threshold);
}

// Same, with each true column matched to its E_r-minimizing inferred column.
inline PrecisionRecall support_precision_recall(const BinaryMatrix& z_true, const Matrix& g_true,
                                                const Matrix& g_hat, double threshold,
                                                SignMode mode = SignMode::kVerbatim) {
  if (threshold < 0.0) throw DomainError("support threshold must be non-negative");
  if (g_true.rows() != z_true.rows() || g_true.cols() != z_true.cols()) {
    throw InvalidState("support_precision_recall: truth shapes differ");
  }
  std::vector<Index> match;
  for (Index k = 0; k < z_true.cols(); ++k) {
    match.push_back(detail::best_match(g_true, k, g_hat, mode).first);
  }
  return detail::count_support(z_true, g_hat, match, threshold);
}

struct PosteriorSample {
  Matrix g;
  Matrix x;
  Vector psi_inv;
};

enum class PredictiveAggregation {
  kLogMean,  // log of the posterior-averaged density (posterior predictive)
  kMeanLog,  // average of per-sample log densities
};

// Sum over held-out (mask false) entries of the predictive log density.
inline double test_log_likelihood(const Matrix& y_full, const Mask& mask,
                                  const std::vector<PosteriorSample>& samples,
                                  PredictiveAggregation aggregation = PredictiveAggregation::kLogMean) {
  if (samples.empty()) throw InvalidState("test_log_likelihood: no posterior samples");
  if (mask.rows() != y_full.rows() || mask.cols() != y_full.cols()) {
    throw InvalidState("test_log_likelihood: mask shape mismatch");
  }
  std::vector<Matrix> means;
  means.reserve(samples.size());
  for (const auto& s : samples) {
    if (s.g.rows() != y_full.rows() || s.x.cols() != y_full.cols() || s.g.cols() != s.x.rows() ||
        s.psi_inv.size() != y_full.rows()) {
      throw InvalidState("test_log_likelihood: posterior sample shape mismatch");
    }
    means.push_back(s.g.cols() > 0 ? Matrix(s.g * s.x) : Matrix::Zero(y_full.rows(), y_full.cols()));
  }
  const double log_count = std::log(static_cast<double>(samples.size()));
  double total = 0.0;
  for (Index n = 0; n < y_full.cols(); ++n) {
    for (Index d = 0; d < y_full.rows(); ++d) {
      if (mask(d, n)) continue;
      if (aggregation == PredictiveAggregation::kLogMean) {
        double acc = kNegInf;
        for (std::size_t s = 0; s < samples.size(); ++s) {
          acc = log_add_exp(acc, log_normal_density(y_full(d, n), means[s](d, n), samples[s].psi_inv(d)));
        }
        total += acc - log_count;
      } else {
        double acc = 0.0;
        for (std::size_t s = 0; s < samples.size(); ++s) {
          acc += log_normal_density(y_full(d, n), means[s](d, n), samples[s].psi_inv(d));
        }
        total += acc / static_cast<double>(samples.size());
      }
    }
  }
  return total;
}

struct KHistogram {
  std::map<Index, int> counts;
  double mean = 0.0;
  double sd = 0.0;
  int total = 0;
};

inline KHistogram posterior_k_histogram(const std::vector<Index>& k_trace, int burn_in) {
  if (burn_in < 0 || static_cast<std::size_t>(burn_in) >= k_trace.size()) {
    throw InvalidState("posterior_k_histogram: trace must be longer than the burn-in");
  }
  KHistogram hist;
  double sum = 0.0, sq = 0.0;
  for (std::size_t i = static_cast<std::size_t>(burn_in); i < k_trace.size(); ++i) {
    ++hist.counts[k_trace[i]];
    sum += static_cast<double>(k_trace[i]);
    sq += static_cast<double>(k_trace[i]) * static_cast<double>(k_trace[i]);
    ++hist.total;
  }
  hist.mean = sum / hist.total;
  hist.sd = hist.total > 1 ? std::sqrt(std::max(0.0, (sq - sum * sum / hist.total) / (hist.total - 1))) : 0.0;
  return hist;
}

inline KHistogram posterior_k_histogram(const std::vector<TraceRecord>& traces, int burn_in) {
  std::vector<Index> ks;
  ks.reserve(traces.size());
  for (const auto& t : traces) ks.push_back(t.k_active);
  return posterior_k_histogram(ks, burn_in);
}

}  // namespace nsfa::eval
