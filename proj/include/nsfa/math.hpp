#pragma once

#include <cmath>
#include <limits>
#include <numbers>

namespace nsfa {

inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;
inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// H_n = sum_{j=1}^n 1/j.
inline double harmonic(int n) {
  double h = 0.0;
  for (int j = n; j >= 1; --j) h += 1.0 / j;
  return h;
}

// log N(x; mean, variance) written in terms of the precision.
inline double log_normal_density(double x, double mean, double precision) {
  const double r = x - mean;
  return 0.5 * (std::log(precision) - kLog2Pi) - 0.5 * precision * r * r;
}

inline double log_poisson_pmf(int k, double rate) {
  if (k < 0) return kNegInf;
  if (rate <= 0.0) return k == 0 ? 0.0 : kNegInf;
  return k * std::log(rate) - rate - std::lgamma(k + 1.0);
}

// log Gamma(x; shape, rate) density.
inline double log_gamma_density(double x, double shape, double rate) {
  if (x <= 0.0) return kNegInf;
  return shape * std::log(rate) - std::lgamma(shape) + (shape - 1.0) * std::log(x) -
         rate * x;
}

inline double log_add_exp(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = a > b ? a : b;
  return m + std::log1p(std::exp(-std::fabs(a - b)));
}

// P(z = 1) from log odds, stable for large |log_odds|.
inline double logistic(double log_odds) {
  if (log_odds >= 0.0) return 1.0 / (1.0 + std::exp(-log_odds));
  const double e = std::exp(log_odds);
  return e / (1.0 + e);
}

}  // namespace nsfa
