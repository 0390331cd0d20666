#pragma once

// Linear-Gaussian factor model Y = G X + E with a spike-and-slab prior on G.
// Rows of Y are observed dimensions (genes), columns are samples.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "nsfa/errors.hpp"
#include "nsfa/math.hpp"
#include "nsfa/rng.hpp"

namespace nsfa {

using Index = Eigen::Index;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using BinaryMatrix = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>;
using Mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

// D x N data with an observation mask (true = observed).
struct ObservationMatrix {
  Matrix values;
  Mask mask;

  static ObservationMatrix complete(Matrix y) {
    ObservationMatrix obs;
    obs.mask = Mask::Constant(y.rows(), y.cols(), true);
    obs.values = std::move(y);
    return obs;
  }

  Index dims() const { return values.rows(); }
  Index samples() const { return values.cols(); }
  Index missing_count() const { return mask.size() - mask.count(); }

  void validate() const {
    if (values.rows() < 1 || values.cols() < 1) {
      throw InvalidState("observation matrix must be at least 1x1");
    }
    if (mask.rows() != values.rows() || mask.cols() != values.cols()) {
      throw InvalidState("mask shape does not match observation matrix");
    }
    for (Index n = 0; n < values.cols(); ++n) {
      for (Index d = 0; d < values.rows(); ++d) {
        if (mask(d, n) && !std::isfinite(values(d, n))) {
          throw InvalidState("non-finite observed value at (" + std::to_string(d) +
                             ", " + std::to_string(n) + ")");
        }
      }
    }
  }
};

// Coupled (Z, G, X). The number of columns of Z and G and rows of X is the
// current number of active features.
struct FeatureState {
  BinaryMatrix Z;
  Matrix G;
  Matrix X;

  static FeatureState empty(Index dims, Index samples) {
    return FeatureState{BinaryMatrix(dims, 0), Matrix(dims, 0), Matrix(0, samples)};
  }

  Index active() const { return Z.cols(); }
  Index dims() const { return G.rows(); }
  Index samples() const { return X.cols(); }

  Eigen::VectorXi column_counts() const { return Z.cast<int>().colwise().sum().transpose(); }

  void validate(Index dims, Index samples) const {
    if (Z.rows() != dims || G.rows() != dims || X.cols() != samples) {
      throw InvalidState("feature state shape does not match data");
    }
    if (Z.cols() != G.cols() || G.cols() != X.rows()) {
      throw InvalidState("Z, G and X disagree on the number of features");
    }
    if (!G.allFinite() || !X.allFinite()) {
      throw InvalidState("non-finite loading or factor value");
    }
  }

  // z_dk = 0 implies g_dk = 0 exactly.
  bool coupling_holds() const {
    for (Index k = 0; k < Z.cols(); ++k) {
      for (Index d = 0; d < Z.rows(); ++d) {
        if (Z(d, k) == 0 && G(d, k) != 0.0) return false;
      }
    }
    return true;
  }

  // Drop the features whose flag is set, keeping the relative order of the rest.
  void remove_features(const std::vector<bool>& drop) {
    Index kept = 0;
    for (Index k = 0; k < active(); ++k) {
      if (drop[static_cast<std::size_t>(k)]) continue;
      if (kept != k) {
        Z.col(kept) = Z.col(k);
        G.col(kept) = G.col(k);
        X.row(kept) = X.row(k);
      }
      ++kept;
    }
    Z.conservativeResize(Eigen::NoChange, kept);
    G.conservativeResize(Eigen::NoChange, kept);
    X.conservativeResize(kept, Eigen::NoChange);
  }
};

enum class PrecisionMode {
  kPerFactor,   // lambda_k per column of G
  kShared,      // one lambda for every loading
  kPerElement,  // lambda_dk per loading (Student-t marginal)
};

// Scalar hyperparameters and precisions. Gamma priors use shape/rate.
struct HyperParams {
  double alpha = 1.0;
  double alpha_shape = 1.0;  // e
  double alpha_rate = 1.0;   // f

  PrecisionMode precision_mode = PrecisionMode::kPerFactor;
  Vector lambda;                    // per feature, size K
  double lambda_shared = 1.0;       // used in shared mode and as the FOK/AFA seed
  Matrix lambda_element;            // D x K, per-element mode only
  double lambda_shape = 1.0;        // c
  double lambda_rate = 1.0;         // d
  double lambda_rate_shape = 1.0;   // c0
  double lambda_rate_rate = 1.0;    // d0

  Vector psi_inv;                   // per-dimension noise precision, size D
  double noise_shape = 1.0;         // a
  double noise_rate = 1.0;          // b
  double noise_rate_shape = 1.0;    // a0
  double noise_rate_rate = 1.0;     // b0

  double loading_precision(Index d, Index k) const {
    switch (precision_mode) {
      case PrecisionMode::kPerElement:
        return lambda_element(d, k);
      case PrecisionMode::kShared:
        return lambda_shared;
      case PrecisionMode::kPerFactor:
        break;
    }
    return lambda(k);
  }

  void validate(Index dims, Index features) const {
    auto positive = [](double v) { return std::isfinite(v) && v > 0.0; };
    const double scalars[] = {alpha,         alpha_shape,       alpha_rate,
                              lambda_shared, lambda_shape,      lambda_rate,
                              lambda_rate_shape, lambda_rate_rate, noise_shape,
                              noise_rate,    noise_rate_shape,  noise_rate_rate};
    for (double v : scalars) {
      if (!positive(v)) throw InvalidState("hyperparameters must be strictly positive");
    }
    if (psi_inv.size() != dims || !(psi_inv.array() > 0.0).all()) {
      throw InvalidState("psi_inv must hold one positive precision per dimension");
    }
    if (lambda.size() != features || !(lambda.array() > 0.0).all()) {
      throw InvalidState("lambda must hold one positive precision per feature");
    }
    if (precision_mode == PrecisionMode::kPerElement &&
        (lambda_element.rows() != dims || lambda_element.cols() != features ||
         !(lambda_element.array() > 0.0).all())) {
      throw InvalidState("per-element precisions must be a positive D x K matrix");
    }
  }
};

// Y - G X, maintained incrementally by the sampler.
struct ResidualCache {
  Matrix E;
};

inline void check_shapes(const Matrix& y, const FeatureState& state) {
  if (state.G.rows() != y.rows() || state.X.cols() != y.cols() ||
      state.G.cols() != state.X.rows()) {
    throw InvalidState("shape mismatch between data and feature state");
  }
}

inline ResidualCache recompute_residual(const Matrix& y, const FeatureState& state) {
  check_shapes(y, state);
  ResidualCache cache;
  cache.E = y;
  if (state.active() > 0) cache.E.noalias() -= state.G * state.X;
  return cache;
}

inline ResidualCache recompute_residual(const ObservationMatrix& y, const FeatureState& state) {
  return recompute_residual(y.values, state);
}

// Max-abs deviation between a cached residual and a fresh recomputation.
inline double residual_drift(const Matrix& y, const FeatureState& state,
                             const ResidualCache& cache) {
  const ResidualCache fresh = recompute_residual(y, state);
  if (fresh.E.size() == 0) return 0.0;
  return (fresh.E - cache.E).cwiseAbs().maxCoeff();
}

// Sum over observed (d, n) of log N(y_dn; (GX)_dn, 1 / psi_inv_d).
inline double log_likelihood(const ObservationMatrix& y, const FeatureState& state,
                             const Vector& psi_inv) {
  check_shapes(y.values, state);
  if (psi_inv.size() != y.dims()) throw InvalidState("psi_inv has the wrong length");
  if (!psi_inv.allFinite() || !(psi_inv.array() > 0.0).all()) {
    throw InvalidState("noise precisions must be finite and positive");
  }
  if (!state.G.allFinite() || !state.X.allFinite()) {
    throw InvalidState("non-finite loading or factor value");
  }
  Matrix mean = Matrix::Zero(y.dims(), y.samples());
  if (state.active() > 0) mean.noalias() = state.G * state.X;

  double total = 0.0;
  for (Index n = 0; n < y.samples(); ++n) {
    for (Index d = 0; d < y.dims(); ++d) {
      if (!y.mask(d, n)) continue;
      if (!std::isfinite(y.values(d, n))) throw InvalidState("non-finite observed value");
      total += log_normal_density(y.values(d, n), mean(d, n), psi_inv(d));
    }
  }
  return total;
}

// Redraw each unobserved y_dn from N((GX)_dn, 1 / psi_inv_d). Draws are taken
// in column-major order. The residual cache is kept equal to y - GX.
inline void impute_missing(Matrix& y, const Mask& mask, const Vector& psi_inv,
                           ResidualCache& cache, Rng& rng) {
  if (mask.rows() != y.rows() || mask.cols() != y.cols() || cache.E.rows() != y.rows() ||
      cache.E.cols() != y.cols() || psi_inv.size() != y.rows()) {
    throw InvalidState("shape mismatch in missing-value imputation");
  }
  for (Index n = 0; n < y.cols(); ++n) {
    for (Index d = 0; d < y.rows(); ++d) {
      if (mask(d, n)) continue;
      const double mean = y(d, n) - cache.E(d, n);
      const double noise = rng.normal() / std::sqrt(psi_inv(d));
      y(d, n) = mean + noise;
      cache.E(d, n) = noise;
    }
  }
}

// Stand-alone form: imputes the unobserved entries of y.values from the
// current G X without a residual cache.
inline void impute_missing(ObservationMatrix& y, const FeatureState& state,
                           const Vector& psi_inv, Rng& rng) {
  ResidualCache cache = recompute_residual(y.values, state);
  impute_missing(y.values, y.mask, psi_inv, cache, rng);
}

}  // namespace nsfa
