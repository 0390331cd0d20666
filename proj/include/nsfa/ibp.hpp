#pragma once

// Indian Buffet Process prior over binary feature matrices. Rows are
// customers (observed dimensions), columns are dishes (features).

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "nsfa/errors.hpp"
#include "nsfa/math.hpp"
#include "nsfa/model.hpp"
#include "nsfa/rng.hpp"

namespace nsfa::ibp {

struct IbpDraw {
  BinaryMatrix Z;
  Eigen::VectorXi dish_counts;
  double alpha = 0.0;
};

// Column history as a string of '0'/'1', first row first. Sorting these keys
// in descending order gives the left-ordered form.
inline std::string column_key(const BinaryMatrix& z, Index k) {
  std::string key(static_cast<std::size_t>(z.rows()), '0');
  for (Index d = 0; d < z.rows(); ++d) {
    if (z(d, k)) key[static_cast<std::size_t>(d)] = '1';
  }
  return key;
}

// Canonical representative of the lof equivalence class of z.
inline BinaryMatrix left_ordered_form(const BinaryMatrix& z) {
  std::vector<std::string> keys;
  keys.reserve(static_cast<std::size_t>(z.cols()));
  for (Index k = 0; k < z.cols(); ++k) keys.push_back(column_key(z, k));
  std::sort(keys.begin(), keys.end(), std::greater<>());
  BinaryMatrix out(z.rows(), z.cols());
  for (Index k = 0; k < z.cols(); ++k) {
    for (Index d = 0; d < z.rows(); ++d) {
      out(d, k) = keys[static_cast<std::size_t>(k)][static_cast<std::size_t>(d)] == '1';
    }
  }
  return out;
}

// Class identifier: the lof column keys joined, zero columns excluded.
inline std::string lof_class_key(const BinaryMatrix& z) {
  std::vector<std::string> keys;
  for (Index k = 0; k < z.cols(); ++k) {
    std::string key = column_key(z, k);
    if (key.find('1') != std::string::npos) keys.push_back(std::move(key));
  }
  std::sort(keys.begin(), keys.end(), std::greater<>());
  std::string joined;
  for (const auto& key : keys) {
    joined += key;
    joined += '|';
  }
  return joined;
}

// Number of columns sharing each nonzero history h.
inline std::map<std::string, int> history_multiplicities(const BinaryMatrix& z) {
  std::map<std::string, int> counts;
  for (Index k = 0; k < z.cols(); ++k) ++counts[column_key(z, k)];
  return counts;
}

// log P(Z) under the finite beta-Bernoulli model with K columns after
// integrating out pi_k ~ Beta(alpha/K, 1). Z may carry fewer than K columns;
// the remainder are taken to be all-zero.
inline double log_prob_finite(const BinaryMatrix& z, double alpha, int num_features) {
  if (!(alpha > 0.0)) throw DomainError("log_prob_finite: alpha must be positive");
  if (num_features < 1) throw DomainError("log_prob_finite: K must be at least 1");
  if (z.cols() > num_features) {
    throw DomainError("log_prob_finite: Z has more columns than K");
  }
  const double dims = static_cast<double>(z.rows());
  const double r = alpha / num_features;
  auto column_term = [&](double m) {
    return std::log(r) + std::lgamma(m + r) + std::lgamma(dims - m + 1.0) -
           std::lgamma(dims + 1.0 + r);
  };
  const Eigen::VectorXi counts = z.cast<int>().colwise().sum().transpose();
  double total = 0.0;
  for (Index k = 0; k < z.cols(); ++k) total += column_term(counts(k));
  total += static_cast<double>(num_features - z.cols()) * column_term(0.0);
  return total;
}

// log P([Z]) for the lof equivalence class of Z under the one-parameter IBP.
// Factorials are indexed by the number of customers D.
inline double log_prob_infinite(const BinaryMatrix& z, double alpha) {
  if (!(alpha > 0.0)) throw DomainError("log_prob_infinite: alpha must be positive");
  const Index dims = z.rows();
  const Eigen::VectorXi counts = z.cast<int>().colwise().sum().transpose();
  for (Index k = 0; k < z.cols(); ++k) {
    if (counts(k) == 0) {
      throw DomainError("log_prob_infinite: Z contains an all-zero column");
    }
  }
  const double d = static_cast<double>(dims);
  double total = static_cast<double>(z.cols()) * std::log(alpha) - alpha * harmonic(static_cast<int>(dims));
  for (const auto& [key, mult] : history_multiplicities(z)) {
    total -= std::lgamma(mult + 1.0);
  }
  for (Index k = 0; k < z.cols(); ++k) {
    const double m = counts(k);
    total += std::lgamma(d - m + 1.0) + std::lgamma(m) - std::lgamma(d + 1.0);
  }
  return total;
}

// log P(z_dk = 1 | rest) / P(z_dk = 0 | rest) = log(m / (D - m)), where m is
// the number of other customers holding dish k.
inline double conditional_inclusion_log_odds(int m_minus, int dims) {
  if (m_minus < 0 || m_minus > dims - 1) {
    throw DomainError("conditional_inclusion_log_odds: m_minus must lie in [0, D-1]");
  }
  if (m_minus == 0) return kNegInf;
  return std::log(static_cast<double>(m_minus)) - std::log(static_cast<double>(dims - m_minus));
}

// Buffet construction: customer i takes dish k with probability m_k / i, then
// tries Poisson(alpha / i) new dishes.
inline IbpDraw sample_ibp(int dims, double alpha, Rng& rng) {
  if (dims < 1) throw DomainError("sample_ibp: D must be at least 1");
  if (!(alpha > 0.0)) throw DomainError("sample_ibp: alpha must be positive");
  std::vector<std::vector<int>> dish_customers;
  for (int i = 1; i <= dims; ++i) {
    for (auto& customers : dish_customers) {
      const double p = static_cast<double>(customers.size()) / i;
      if (rng.uniform() < p) customers.push_back(i - 1);
    }
    const int fresh = rng.poisson(alpha / i);
    for (int j = 0; j < fresh; ++j) dish_customers.push_back({i - 1});
  }
  IbpDraw draw;
  draw.alpha = alpha;
  const Index k_plus = static_cast<Index>(dish_customers.size());
  draw.Z = BinaryMatrix::Zero(dims, k_plus);
  draw.dish_counts.resize(k_plus);
  for (Index k = 0; k < k_plus; ++k) {
    const auto& customers = dish_customers[static_cast<std::size_t>(k)];
    for (int d : customers) draw.Z(d, k) = 1;
    draw.dish_counts(k) = static_cast<int>(customers.size());
  }
  return draw;
}

// Conjugate update alpha | Z ~ Gamma(K+ + e, f + H_D).
inline double sample_alpha(int k_plus, int dims, double shape, double rate, Rng& rng) {
  if (k_plus < 0 || dims < 1 || !(shape > 0.0) || !(rate > 0.0)) {
    throw DomainError("sample_alpha: invalid arguments");
  }
  return rng.gamma(k_plus + shape, rate + harmonic(dims));
}

}  // namespace nsfa::ibp
