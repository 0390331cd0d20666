#pragma once

// Prior pieces specific to the finite and dense comparison models.

#include <cmath>

#include "nsfa/errors.hpp"
#include "nsfa/model.hpp"
#include "nsfa/rng.hpp"

namespace nsfa::variants {

// Collapsed finite beta-Bernoulli prior odds for one element:
// log[(m + alpha/K) / (D - m)], m counting the other rows holding feature k.
inline double finite_z_log_odds(int m_minus, int dims, int num_features, double alpha) {
  if (num_features < 1) throw DomainError("finite_z_log_odds: K must be at least 1");
  if (m_minus < 0 || m_minus > dims - 1) {
    throw DomainError("finite_z_log_odds: m_minus must lie in [0, D-1]");
  }
  return std::log(m_minus + alpha / num_features) - std::log(static_cast<double>(dims - m_minus));
}

// Per-element loading precisions: lambda_dk | g_dk ~ Gamma(c + 1/2, d + g_dk^2 / 2).
// Draws are taken in column-major order.
inline void sample_fok_precisions(const Matrix& loadings, double shape, double rate,
                                  Matrix& precisions, Rng& rng) {
  precisions.resize(loadings.rows(), loadings.cols());
  for (Index k = 0; k < loadings.cols(); ++k) {
    for (Index d = 0; d < loadings.rows(); ++d) {
      const double g = loadings(d, k);
      precisions(d, k) = rng.gamma(shape + 0.5, rate + 0.5 * g * g);
    }
  }
}

}  // namespace nsfa::variants
