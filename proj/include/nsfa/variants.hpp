#pragma once

// Comparison models expressed as sampler configurations:
//   FA   dense loadings, one shared precision
//   AFA  dense loadings, per-factor (ARD) precisions
//   SFA  finite beta-Bernoulli support with K columns
//   FOK  dense loadings, per-element precisions (Student-t marginal)
//   NSFA IBP support with feature births

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>

#include "nsfa/errors.hpp"
#include "nsfa/model.hpp"
#include "nsfa/sampler.hpp"
#include "nsfa/variant_priors.hpp"

namespace nsfa::variants {

enum class VariantKind { kFA, kAFA, kSFA, kFOK, kNSFA };

inline const char* to_string(VariantKind kind) {
  switch (kind) {
    case VariantKind::kFA:
      return "fa";
    case VariantKind::kAFA:
      return "afa";
    case VariantKind::kSFA:
      return "sfa";
    case VariantKind::kFOK:
      return "fok";
    case VariantKind::kNSFA:
      return "nsfa";
  }
  return "?";
}

inline VariantKind parse_variant_kind(const std::string& name) {
  if (name == "fa") return VariantKind::kFA;
  if (name == "afa") return VariantKind::kAFA;
  if (name == "sfa") return VariantKind::kSFA;
  if (name == "fok") return VariantKind::kFOK;
  if (name == "nsfa") return VariantKind::kNSFA;
  throw ConfigError("unknown model variant '" + name + "' (expected fa, afa, sfa, fok or nsfa)");
}

struct ModelVariant {
  VariantKind kind = VariantKind::kNSFA;
  std::optional<int> k_fixed;
  NoiseMode noise_mode = NoiseMode::kIndependent;
  bool sample_alpha = false;
  bool shared_lambda = false;

  void validate() const {
    if (kind == VariantKind::kNSFA) {
      if (k_fixed) throw ConfigError("NSFA infers K: model.k must not be set");
    } else {
      if (!k_fixed || *k_fixed < 1) {
        throw ConfigError(std::string(to_string(kind)) + " needs a fixed K >= 1 (model.k)");
      }
      if (sample_alpha) {
        throw ConfigError("alpha sampling is only defined for NSFA");
      }
    }
    if (kind == VariantKind::kFOK && shared_lambda) {
      throw ConfigError("FOK uses per-element precisions; shared_lambda must be false");
    }
    if (kind == VariantKind::kAFA && shared_lambda) {
      throw ConfigError("AFA is defined by per-factor precisions; use FA for a shared one");
    }
  }
};

struct BuildOptions {
  HyperParams priors;  // alpha and Gamma prior parameters; precisions are initialized here
  BirthProposalParams proposal;
  int init_features = 0;  // NSFA only; finite variants start with K features
  bool sample_precision_rate = false;
  bool impute_missing = true;
  std::uint64_t seed = 0;
  std::uint64_t stream = 0;
};

// Z all ones over `features` columns, G ~ N(0, 1) on the support and
// X ~ N(0, 1). G is drawn column-major before X.
inline FeatureState random_dense_state(Index dims, Index samples, Index features, Rng& rng) {
  FeatureState state;
  state.Z = BinaryMatrix::Ones(dims, features);
  state.G.resize(dims, features);
  for (Index k = 0; k < features; ++k) {
    for (Index d = 0; d < dims; ++d) state.G(d, k) = rng.normal();
  }
  state.X.resize(features, samples);
  for (Index n = 0; n < samples; ++n) {
    for (Index k = 0; k < features; ++k) state.X(k, n) = rng.normal();
  }
  return state;
}

// 1 / variance of the observed entries in each row (1 when degenerate).
inline Vector initial_noise_precision(const ObservationMatrix& data) {
  Vector psi_inv(data.dims());
  for (Index d = 0; d < data.dims(); ++d) {
    double sum = 0.0, sq = 0.0;
    int count = 0;
    for (Index n = 0; n < data.samples(); ++n) {
      if (!data.mask(d, n)) continue;
      sum += data.values(d, n);
      sq += data.values(d, n) * data.values(d, n);
      ++count;
    }
    const double var = count > 1 ? (sq - sum * sum / count) / (count - 1) : 0.0;
    psi_inv(d) = var > 1e-12 ? 1.0 / var : 1.0;
  }
  return psi_inv;
}

inline SamplerConfig sampler_config(const ModelVariant& variant, const BuildOptions& options) {
  SamplerConfig cfg;
  cfg.noise = variant.noise_mode;
  cfg.proposal = options.proposal;
  cfg.sample_precision_rate = options.sample_precision_rate;
  cfg.impute_missing = options.impute_missing;
  cfg.births = false;
  switch (variant.kind) {
    case VariantKind::kFA:
    case VariantKind::kAFA:
    case VariantKind::kFOK:
      cfg.support = SupportPrior::kDense;
      break;
    case VariantKind::kSFA:
      cfg.support = SupportPrior::kFinite;
      cfg.finite_features = *variant.k_fixed;
      break;
    case VariantKind::kNSFA:
      cfg.support = SupportPrior::kIbp;
      cfg.births = true;
      cfg.sample_alpha = variant.sample_alpha;
      break;
  }
  return cfg;
}

inline PrecisionMode precision_mode(const ModelVariant& variant) {
  switch (variant.kind) {
    case VariantKind::kFA:
      return PrecisionMode::kShared;
    case VariantKind::kAFA:
      return PrecisionMode::kPerFactor;
    case VariantKind::kFOK:
      return PrecisionMode::kPerElement;
    case VariantKind::kSFA:
    case VariantKind::kNSFA:
      break;
  }
  return variant.shared_lambda ? PrecisionMode::kShared : PrecisionMode::kPerFactor;
}

// Initial draws come from a generator on stream `stream + 1` so that the
// chain's own stream starts fresh.
inline Sampler build_variant(const ModelVariant& variant, const ObservationMatrix& data,
                             const BuildOptions& options) {
  variant.validate();
  data.validate();
  if (options.init_features < 0) throw ConfigError("initial feature count must be >= 0");
  const SamplerConfig cfg = sampler_config(variant, options);

  const Index features = variant.k_fixed ? *variant.k_fixed : options.init_features;
  Rng init_rng(options.seed, options.stream + 1);
  FeatureState state = random_dense_state(data.dims(), data.samples(), features, init_rng);

  HyperParams hyper = options.priors;
  hyper.precision_mode = precision_mode(variant);
  if (variant.kind == VariantKind::kFOK) hyper.lambda_shape = 1.0;
  hyper.lambda = Vector::Constant(features, hyper.lambda_shared);
  hyper.lambda_element.resize(0, 0);
  if (hyper.precision_mode == PrecisionMode::kPerElement) {
    hyper.lambda_element = Matrix::Constant(data.dims(), features, hyper.lambda_shared);
  }
  hyper.psi_inv = initial_noise_precision(data);
  if (variant.noise_mode == NoiseMode::kIsotropic) {
    hyper.psi_inv.setConstant(hyper.psi_inv.mean());
  }
  return Sampler(data, cfg, std::move(state), std::move(hyper), options.seed, options.stream);
}

}  // namespace nsfa::variants
