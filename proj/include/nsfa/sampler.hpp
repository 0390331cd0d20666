#pragma once

// Gibbs / Metropolis-Hastings kernel for sparse factor analysis with an IBP
// prior on the loading support.

#include <Eigen/Cholesky>

#include <chrono>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "nsfa/errors.hpp"
#include "nsfa/ibp.hpp"
#include "nsfa/math.hpp"
#include "nsfa/model.hpp"
#include "nsfa/rng.hpp"
#include "nsfa/variant_priors.hpp"

namespace nsfa {

// Prior on the support pattern Z.
enum class SupportPrior {
  kIbp,     // infinite model, features born through the MH move
  kFinite,  // beta-Bernoulli with a fixed number of columns
  kDense,   // Z fixed to all ones
};

enum class NoiseMode { kIsotropic, kIndependent, kSoftCoupled };

inline const char* to_string(NoiseMode mode) {
  switch (mode) {
    case NoiseMode::kIsotropic:
      return "isotropic";
    case NoiseMode::kIndependent:
      return "independent";
    case NoiseMode::kSoftCoupled:
      return "soft_coupled";
  }
  return "?";
}

// Proposal for the number of new features kappa owned by a single dimension:
// J(kappa) = (1 - pi) Poisson(kappa; mult * gamma) + pi 1(kappa = 1).
struct BirthProposalParams {
  double pi_spike = 0.1;
  double lambda_mult = 1.0;
  double gamma_rate = 0.0;  // prior rate of single-dimension features, alpha / D

  void validate() const {
    if (!(pi_spike >= 0.0 && pi_spike <= 1.0)) {
      throw ConfigError("proposal.pi_spike must lie in [0, 1]");
    }
    if (!(lambda_mult >= 1.0)) throw ConfigError("proposal.lambda_mult must be >= 1");
    if (!(gamma_rate >= 0.0)) throw ConfigError("proposal gamma rate must be non-negative");
  }
};

inline double log_kappa_proposal_mass(int kappa, const BirthProposalParams& params) {
  if (kappa < 0) return kNegInf;
  const double poisson = std::exp(log_poisson_pmf(kappa, params.lambda_mult * params.gamma_rate));
  const double mass = (1.0 - params.pi_spike) * poisson + (kappa == 1 ? params.pi_spike : 0.0);
  return mass > 0.0 ? std::log(mass) : kNegInf;
}

// log P(kappa | alpha) - log J(kappa).
inline double log_kappa_prior_correction(int kappa, const BirthProposalParams& params) {
  return log_poisson_pmf(kappa, params.gamma_rate) - log_kappa_proposal_mass(kappa, params);
}

struct KappaDraw {
  int kappa = 0;
  double log_proposal = 0.0;
};

// One uniform decides the spike; the Poisson branch consumes a further draw.
inline KappaDraw propose_kappa(const BirthProposalParams& params, Rng& rng) {
  KappaDraw draw;
  if (rng.uniform() < params.pi_spike) {
    draw.kappa = 1;
  } else {
    draw.kappa = rng.poisson(params.lambda_mult * params.gamma_rate);
  }
  draw.log_proposal = log_kappa_proposal_mass(draw.kappa, params);
  return draw;
}

// Collapsed likelihood of a row's residual when kappa new features with
// loadings g are added and their factor rows are integrated out:
// M = psi_inv g g^T + I, m_n = M^{-1} psi_inv g e_n.
struct MhWorkspace {
  Vector g;
  double psi_inv = 1.0;
  Matrix M;
  Eigen::LLT<Matrix> llt;
  Vector mean_direction;  // M^{-1} psi_inv g, so m_n = mean_direction * e_n
  double log_det = 0.0;

  MhWorkspace(const Vector& loadings, double noise_precision)
      : g(loadings), psi_inv(noise_precision) {
    const Index kappa = g.size();
    M = psi_inv * g * g.transpose() + Matrix::Identity(kappa, kappa);
    llt.compute(M);
    if (llt.info() != Eigen::Success) throw InvalidState("birth workspace M is not positive definite");
    mean_direction = llt.solve(psi_inv * g);
    log_det = 0.0;
    const Matrix& factor = llt.matrixLLT();
    for (Index i = 0; i < kappa; ++i) log_det += 2.0 * std::log(factor(i, i));
  }

  Index kappa() const { return g.size(); }

  Vector conditional_mean(double residual) const { return mean_direction * residual; }

  // log a_l = -(N/2) log|M| + 1/2 sum_n m_n^T M m_n.
  template <typename Row>
  double log_likelihood_gain(const Row& residual_row) const {
    if (kappa() == 0) return 0.0;
    const double quad = mean_direction.dot(M * mean_direction);
    const double energy = residual_row.squaredNorm();
    return -0.5 * static_cast<double>(residual_row.size()) * log_det + 0.5 * quad * energy;
  }
};

// log a_l + log a_p for adding kappa = g.size() features to an empty
// single-dimension block of a row with residual `residual_row`.
template <typename Row>
double birth_acceptance_log_ratio(const Row& residual_row, const Vector& g, double psi_inv,
                                  const BirthProposalParams& params) {
  const int kappa = static_cast<int>(g.size());
  if (kappa == 0) return log_kappa_prior_correction(0, params);
  const MhWorkspace ws(g, psi_inv);
  return ws.log_likelihood_gain(residual_row) + log_kappa_prior_correction(kappa, params);
}

// Posterior quantities for one loading element given the rest, with the
// residual evaluated at g_dk = 0.
struct ElementPosterior {
  double log_odds = 0.0;   // prior log odds + collapsed likelihood ratio
  double mean = 0.0;       // mu
  double precision = 0.0;  // lambda = psi_inv x.x + lambda_k
};

// log odds = prior + 1/2 log(lambda_k / lambda) + 1/2 lambda mu^2.
template <typename FactorRow, typename ResidualRow>
ElementPosterior collapsed_zg_log_odds(const FactorRow& factor_row, const ResidualRow& residual_row,
                                       double psi_inv, double prior_precision,
                                       double prior_log_odds) {
  ElementPosterior post;
  post.precision = psi_inv * factor_row.squaredNorm() + prior_precision;
  post.mean = psi_inv * factor_row.dot(residual_row) / post.precision;
  post.log_odds = prior_log_odds + 0.5 * (std::log(prior_precision) - std::log(post.precision)) +
                  0.5 * post.precision * post.mean * post.mean;
  return post;
}

// State-level form using the IBP prior odds; the residual must exclude g_dk.
inline ElementPosterior collapsed_zg_log_odds(Index d, Index k, const FeatureState& state,
                                              const ResidualCache& residual,
                                              const HyperParams& hyper) {
  int m_minus = 0;
  for (Index i = 0; i < state.dims(); ++i) {
    if (i != d && state.Z(i, k)) ++m_minus;
  }
  const double prior =
      ibp::conditional_inclusion_log_odds(m_minus, static_cast<int>(state.dims()));
  return collapsed_zg_log_odds(state.X.row(k), residual.E.row(d), hyper.psi_inv(d),
                               hyper.loading_precision(d, k), prior);
}

// x_n | rest ~ N(Lambda^{-1} G^T Psi^{-1} y_n, Lambda^{-1}), Lambda = G^T Psi^{-1} G + I.
// Lambda does not depend on n and is factored once per sweep.
struct XConditional {
  Matrix weighted_loadings;  // G^T Psi^{-1}, K x D
  Eigen::LLT<Matrix> llt;    // of Lambda

  XConditional(const Matrix& loadings, const Vector& psi_inv) {
    weighted_loadings = loadings.transpose() * psi_inv.asDiagonal();
    const Index k = loadings.cols();
    Matrix precision = Matrix::Identity(k, k);
    precision.noalias() += weighted_loadings * loadings;
    llt.compute(precision);
    if (llt.info() != Eigen::Success) throw InvalidState("factor precision is not positive definite");
  }

  template <typename Column>
  Vector mean(const Column& y_n) const {
    return llt.solve(weighted_loadings * y_n);
  }

  Matrix precision() const { return llt.reconstructedMatrix(); }
};

// Draws x_n (K standard normals, in order) and refreshes residual column n.
inline void sample_x_column(Index n, const XConditional& cond, const Matrix& y, FeatureState& state,
                            ResidualCache& residual, Rng& rng) {
  const Index k = state.active();
  if (k == 0) return;
  Vector z(k);
  for (Index i = 0; i < k; ++i) z(i) = rng.normal();
  Vector x = cond.mean(y.col(n));
  x.noalias() += cond.llt.matrixU().solve(z);
  state.X.col(n) = x;
  residual.E.col(n) = y.col(n);
  residual.E.col(n).noalias() -= state.G * x;
}

// Conjugate loading-precision update. Shared: Gamma(c + sum m / 2, d + sum G^2 / 2).
// Per factor: Gamma(c + m_k / 2, d + sum_d G_dk^2 / 2). Counts are the number
// of slab elements in each column.
inline void sample_lambda(const FeatureState& state, const Eigen::VectorXi& counts,
                          HyperParams& hyper, Rng& rng) {
  const Index k = state.active();
  switch (hyper.precision_mode) {
    case PrecisionMode::kShared: {
      const double m = counts.sum();
      const double ss = state.G.squaredNorm();
      hyper.lambda_shared = rng.gamma(hyper.lambda_shape + 0.5 * m, hyper.lambda_rate + 0.5 * ss);
      hyper.lambda = Vector::Constant(k, hyper.lambda_shared);
      break;
    }
    case PrecisionMode::kPerFactor: {
      hyper.lambda.resize(k);
      for (Index j = 0; j < k; ++j) {
        hyper.lambda(j) = rng.gamma(hyper.lambda_shape + 0.5 * counts(j),
                                    hyper.lambda_rate + 0.5 * state.G.col(j).squaredNorm());
      }
      break;
    }
    case PrecisionMode::kPerElement:
      variants::sample_fok_precisions(state.G, hyper.lambda_shape, hyper.lambda_rate,
                                      hyper.lambda_element, rng);
      break;
  }
}

// Rate hyperprior for the loading precisions:
// d | lambda ~ Gamma(c0 + c * #precisions, d0 + sum of precisions).
inline void sample_lambda_rate(HyperParams& hyper, Rng& rng) {
  double count = 0.0;
  double total = 0.0;
  switch (hyper.precision_mode) {
    case PrecisionMode::kShared:
      count = 1.0;
      total = hyper.lambda_shared;
      break;
    case PrecisionMode::kPerFactor:
      count = static_cast<double>(hyper.lambda.size());
      total = hyper.lambda.sum();
      break;
    case PrecisionMode::kPerElement:
      count = static_cast<double>(hyper.lambda_element.size());
      total = hyper.lambda_element.sum();
      break;
  }
  hyper.lambda_rate = rng.gamma(hyper.lambda_rate_shape + hyper.lambda_shape * count,
                                hyper.lambda_rate_rate + total);
}

// Soft coupling: b | psi ~ Gamma(a0 + a D, b0 + sum_d psi_inv_d).
inline void sample_noise_rate(HyperParams& hyper, Rng& rng) {
  const double dims = static_cast<double>(hyper.psi_inv.size());
  hyper.noise_rate = rng.gamma(hyper.noise_rate_shape + hyper.noise_shape * dims,
                               hyper.noise_rate_rate + hyper.psi_inv.sum());
}

// Noise precisions from the residual. Isotropic: one Gamma(a + ND/2, b + sum E^2 / 2).
// Independent: per row Gamma(a + N/2, b + sum_n E_dn^2 / 2). Soft coupled
// redraws the shared rate b after the per-row draws.
inline void sample_noise(const ResidualCache& residual, HyperParams& hyper, NoiseMode mode,
                         Rng& rng) {
  const Index dims = residual.E.rows();
  const double samples = static_cast<double>(residual.E.cols());
  if (mode == NoiseMode::kIsotropic) {
    const double value = rng.gamma(hyper.noise_shape + 0.5 * samples * dims,
                                   hyper.noise_rate + 0.5 * residual.E.squaredNorm());
    hyper.psi_inv = Vector::Constant(dims, value);
    return;
  }
  hyper.psi_inv.resize(dims);
  for (Index d = 0; d < dims; ++d) {
    hyper.psi_inv(d) = rng.gamma(hyper.noise_shape + 0.5 * samples,
                                 hyper.noise_rate + 0.5 * residual.E.row(d).squaredNorm());
  }
  if (mode == NoiseMode::kSoftCoupled) sample_noise_rate(hyper, rng);
}

struct SamplerConfig {
  SupportPrior support = SupportPrior::kIbp;
  int finite_features = 0;  // K of the finite prior
  bool births = true;
  BirthProposalParams proposal;
  bool sample_alpha = false;
  bool sample_precisions = true;
  bool sample_precision_rate = false;
  NoiseMode noise = NoiseMode::kIndependent;
  bool sample_noise = true;
  bool impute_missing = true;
  double drift_tolerance = 1e-8;

  void validate() const {
    proposal.validate();
    if (proposal.pi_spike >= 1.0) throw ConfigError("proposal.pi_spike must be < 1");
    if (support == SupportPrior::kFinite && finite_features < 1) {
      throw ConfigError("finite support prior needs K >= 1");
    }
    if (support != SupportPrior::kIbp && births) {
      throw ConfigError("feature births require the IBP support prior");
    }
    if (support != SupportPrior::kIbp && sample_alpha) {
      throw ConfigError("alpha can only be sampled under the IBP support prior");
    }
    if (!(drift_tolerance > 0.0)) throw ConfigError("drift tolerance must be positive");
  }
};

struct TraceRecord {
  int iteration = 0;
  Index k_active = 0;
  double log_likelihood = 0.0;
  double alpha = 0.0;
  double mean_lambda = 0.0;
  double mean_psi_inv = 0.0;
  int births_proposed = 0;
  int births_accepted = 0;
  double wall_ms = 0.0;
  double residual_drift = 0.0;
};

// A proposed block of single-dimension features for one row.
struct BirthProposal {
  Vector loadings;
  Vector precisions;  // slab precision of each new feature
};

// Appends the proposal's features to dimension d. Their factor rows are drawn
// from N(m_n, M^{-1}) for n = 0..N-1 (kappa normals each). `residual_row` is
// the row residual without the new features; residual row d is refreshed.
inline void execute_birth(Index d, const BirthProposal& proposal, const Vector& residual_row,
                          double psi_inv, FeatureState& state, HyperParams& hyper,
                          ResidualCache& residual, Rng& rng) {
  const Index kappa = proposal.loadings.size();
  if (kappa == 0) return;
  const MhWorkspace ws(proposal.loadings, psi_inv);
  const Index old_k = state.active();
  const Index new_k = old_k + kappa;
  const Index samples = state.samples();

  state.Z.conservativeResize(Eigen::NoChange, new_k);
  state.G.conservativeResize(Eigen::NoChange, new_k);
  state.X.conservativeResize(new_k, Eigen::NoChange);
  state.Z.rightCols(kappa).setZero();
  state.G.rightCols(kappa).setZero();
  state.Z.block(d, old_k, 1, kappa).setOnes();
  state.G.block(d, old_k, 1, kappa) = proposal.loadings.transpose();

  const auto upper = ws.llt.matrixU();
  Vector z(kappa);
  for (Index n = 0; n < samples; ++n) {
    for (Index j = 0; j < kappa; ++j) z(j) = rng.normal();
    Vector x = ws.conditional_mean(residual_row(n));
    x.noalias() += upper.solve(z);
    state.X.block(old_k, n, kappa, 1) = x;
  }

  hyper.lambda.conservativeResize(new_k);
  hyper.lambda.tail(kappa) = proposal.precisions;
  if (hyper.precision_mode == PrecisionMode::kPerElement) {
    hyper.lambda_element.conservativeResize(Eigen::NoChange, new_k);
    for (Index j = 0; j < kappa; ++j) {
      hyper.lambda_element.col(old_k + j).setConstant(proposal.precisions(j));
    }
  }

  residual.E.row(d) = residual_row.transpose();
  residual.E.row(d).noalias() -= proposal.loadings.transpose() * state.X.bottomRows(kappa);
}

// One chain. Owns its data copy (with imputed entries), state and generator.
//
// Order of one sweep, which fixes the order of random draws:
//   1. for each dimension d: for each feature k, resample z_dk and g_dk
//      (one uniform when z is sampled, one normal when the slab is active);
//      then the birth/death move for features owned only by d
//      (kappa draw, per-feature precision when unshared, loadings, one
//      uniform for acceptance, factor rows when accepted);
//   2. factor columns x_n for n = 0..N-1;
//   3. unobserved entries of Y;
//   4. alpha; noise precisions; loading precisions and their rate;
//   5. removal of features with no active dimension (IBP prior only),
//      residual audit.
class Sampler {
 public:
  Sampler(ObservationMatrix data, SamplerConfig config, FeatureState init, HyperParams hyper,
          std::uint64_t seed, std::uint64_t stream = 0)
      : data_(std::move(data)),
        y_(data_.values),
        config_(config),
        state_(std::move(init)),
        hyper_(std::move(hyper)),
        rng_(seed, stream) {
    data_.validate();
    config_.validate();
    state_.validate(data_.dims(), data_.samples());
    if (hyper_.lambda.size() == 0 && state_.active() > 0) {
      hyper_.lambda = Vector::Constant(state_.active(), hyper_.lambda_shared);
    }
    if (hyper_.precision_mode == PrecisionMode::kShared) {
      hyper_.lambda = Vector::Constant(state_.active(), hyper_.lambda_shared);
    }
    if (hyper_.precision_mode == PrecisionMode::kPerElement && hyper_.lambda_element.size() == 0) {
      hyper_.lambda_element = Matrix::Constant(data_.dims(), state_.active(), hyper_.lambda_shared);
    }
    hyper_.validate(data_.dims(), state_.active());
    if (!state_.coupling_holds()) throw InvalidState("initial state violates z = 0 => g = 0");
    if (config_.support == SupportPrior::kDense && (state_.Z.array() != 1).any()) {
      throw InvalidState("dense support prior requires Z to be all ones");
    }
    if (config_.support == SupportPrior::kFinite && state_.active() != config_.finite_features) {
      throw InvalidState("finite support prior requires exactly K features");
    }
    // Unobserved entries start at the current model mean.
    const Matrix mean = state_.active() > 0 ? Matrix(state_.G * state_.X)
                                            : Matrix::Zero(data_.dims(), data_.samples());
    for (Index n = 0; n < y_.cols(); ++n) {
      for (Index d = 0; d < y_.rows(); ++d) {
        if (!data_.mask(d, n)) y_(d, n) = mean(d, n);
      }
    }
    residual_ = recompute_residual(y_, state_);
    counts_ = state_.column_counts();
    x_sq_ = state_.X.rowwise().squaredNorm();
  }

  TraceRecord sweep() {
    const auto start = std::chrono::steady_clock::now();
    TraceRecord rec;
    rec.iteration = ++iteration_;
    const Index dims = data_.dims();
    config_.proposal.gamma_rate = hyper_.alpha / static_cast<double>(dims);

    x_sq_ = state_.X.rowwise().squaredNorm();
    for (Index d = 0; d < dims; ++d) {
      sample_z_and_g(d);
      if (config_.births) birth_death_move(d, rec);
    }

    if (state_.active() > 0) {
      const XConditional cond(state_.G, hyper_.psi_inv);
      for (Index n = 0; n < data_.samples(); ++n) {
        sample_x_column(n, cond, y_, state_, residual_, rng_);
      }
    }

    if (config_.impute_missing && data_.missing_count() > 0) {
      impute_missing(y_, data_.mask, hyper_.psi_inv, residual_, rng_);
    }

    if (config_.sample_alpha) {
      const int k_plus = static_cast<int>((counts_.array() > 0).count());
      hyper_.alpha = ibp::sample_alpha(k_plus, static_cast<int>(dims), hyper_.alpha_shape,
                                       hyper_.alpha_rate, rng_);
    }
    if (config_.sample_noise) sample_noise(residual_, hyper_, config_.noise, rng_);
    if (config_.sample_precisions) {
      sample_lambda(state_, counts_, hyper_, rng_);
      if (config_.sample_precision_rate) sample_lambda_rate(hyper_, rng_);
    }

    if (config_.support == SupportPrior::kIbp) remove_dead_features();

    rec.residual_drift = audit_residual();
    rec.k_active = state_.active();
    rec.log_likelihood = log_likelihood(data_, state_, hyper_.psi_inv);
    rec.alpha = hyper_.alpha;
    rec.mean_lambda = mean_precision();
    rec.mean_psi_inv = hyper_.psi_inv.mean();
    rec.wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    return rec;
  }

  // Gibbs update of row d of Z and G.
  void sample_z_and_g(Index d) {
    const int dims = static_cast<int>(data_.dims());
    const double psi_inv = hyper_.psi_inv(d);
    auto e_row = residual_.E.row(d);
    for (Index k = 0; k < state_.active(); ++k) {
      const bool was_on = state_.Z(d, k) != 0;
      const double g_old = state_.G(d, k);
      const int m_minus = counts_(k) - (was_on ? 1 : 0);
      const double prior_precision = hyper_.loading_precision(d, k);

      if (config_.support == SupportPrior::kIbp && m_minus == 0 && !was_on) continue;
      if (g_old != 0.0) e_row.noalias() += g_old * state_.X.row(k);

      ElementPosterior post;
      post.precision = psi_inv * x_sq_(k) + prior_precision;
      post.mean = psi_inv * state_.X.row(k).dot(e_row) / post.precision;

      bool on = true;
      if (config_.support == SupportPrior::kIbp && m_minus > 0) {
        post.log_odds = ibp::conditional_inclusion_log_odds(m_minus, dims) +
                        0.5 * (std::log(prior_precision) - std::log(post.precision)) +
                        0.5 * post.precision * post.mean * post.mean;
        on = rng_.uniform() < logistic(post.log_odds);
      } else if (config_.support == SupportPrior::kFinite) {
        post.log_odds = variants::finite_z_log_odds(m_minus, dims, config_.finite_features,
                                                    hyper_.alpha) +
                        0.5 * (std::log(prior_precision) - std::log(post.precision)) +
                        0.5 * post.precision * post.mean * post.mean;
        on = rng_.uniform() < logistic(post.log_odds);
      }
      // Otherwise: dense support, or a feature owned only by d under the IBP
      // (its on/off state belongs to the birth/death move); only g moves.

      if (on) {
        const double g = post.mean + rng_.normal() / std::sqrt(post.precision);
        state_.G(d, k) = g;
        e_row.noalias() -= g * state_.X.row(k);
      } else {
        state_.G(d, k) = 0.0;
      }
      if (on != was_on) {
        state_.Z(d, k) = on ? 1 : 0;
        counts_(k) += on ? 1 : -1;
      }
    }
  }

  // Independence Metropolis-Hastings move on the block of features active
  // only in dimension d. Current and proposed blocks are scored by the row
  // likelihood with their factor rows integrated out.
  void birth_death_move(Index d, TraceRecord& rec) {
    const double psi_inv = hyper_.psi_inv(d);
    std::vector<Index> owned;
    for (Index k = 0; k < state_.active(); ++k) {
      if (state_.Z(d, k) && counts_(k) == 1) owned.push_back(k);
    }
    Vector base = residual_.E.row(d).transpose();
    Vector current(static_cast<Index>(owned.size()));
    for (std::size_t j = 0; j < owned.size(); ++j) {
      const Index k = owned[j];
      current(static_cast<Index>(j)) = state_.G(d, k);
      base.noalias() += state_.G(d, k) * state_.X.row(k).transpose();
    }

    const KappaDraw draw = propose_kappa(config_.proposal, rng_);
    BirthProposal proposal;
    proposal.loadings.resize(draw.kappa);
    proposal.precisions.resize(draw.kappa);
    for (int j = 0; j < draw.kappa; ++j) {
      const double precision = hyper_.precision_mode == PrecisionMode::kPerFactor
                                   ? rng_.gamma(hyper_.lambda_shape, hyper_.lambda_rate)
                                   : hyper_.lambda_shared;
      proposal.precisions(j) = precision;
      proposal.loadings(j) = rng_.normal() / std::sqrt(precision);
    }

    const double log_ratio =
        birth_acceptance_log_ratio(base, proposal.loadings, psi_inv, config_.proposal) -
        birth_acceptance_log_ratio(base, current, psi_inv, config_.proposal);
    const bool accept = std::log(rng_.uniform()) < log_ratio;
    if (draw.kappa > 0) {
      ++rec.births_proposed;
      if (accept) ++rec.births_accepted;
    }
    if (!accept) return;

    for (const Index k : owned) {
      state_.Z(d, k) = 0;
      state_.G(d, k) = 0.0;
      counts_(k) = 0;
    }
    if (draw.kappa == 0) {
      residual_.E.row(d) = base.transpose();
      return;
    }
    const Index old_k = state_.active();
    execute_birth(d, proposal, base, psi_inv, state_, hyper_, residual_, rng_);
    counts_.conservativeResize(state_.active());
    counts_.tail(draw.kappa).setOnes();
    x_sq_.conservativeResize(state_.active());
    x_sq_.tail(draw.kappa) = state_.X.bottomRows(state_.active() - old_k).rowwise().squaredNorm();
    scatter_new_features(old_k);
  }

  // Replace the complete data matrix (used by joint-distribution tests that
  // regenerate Y between sweeps). The mask is reset to fully observed.
  void replace_observations(const Matrix& y) {
    if (y.rows() != data_.dims() || y.cols() != data_.samples()) {
      throw InvalidState("replacement data has the wrong shape");
    }
    data_ = ObservationMatrix::complete(y);
    y_ = y;
    residual_ = recompute_residual(y_, state_);
  }

  const ObservationMatrix& data() const { return data_; }
  const Matrix& working_data() const { return y_; }
  const FeatureState& state() const { return state_; }
  const HyperParams& hyper() const { return hyper_; }
  const ResidualCache& residual() const { return residual_; }
  const SamplerConfig& config() const { return config_; }
  const Eigen::VectorXi& counts() const { return counts_; }
  int iteration() const { return iteration_; }
  Rng& rng() { return rng_; }

 private:
  void remove_dead_features() {
    std::vector<bool> drop(static_cast<std::size_t>(state_.active()));
    bool any = false;
    for (Index k = 0; k < state_.active(); ++k) {
      drop[static_cast<std::size_t>(k)] = counts_(k) == 0;
      any = any || counts_(k) == 0;
    }
    if (!any) return;
    state_.remove_features(drop);
    Index kept = 0;
    for (Index k = 0; k < static_cast<Index>(drop.size()); ++k) {
      if (drop[static_cast<std::size_t>(k)]) continue;
      counts_(kept) = counts_(k);
      hyper_.lambda(kept) = hyper_.lambda(k);
      if (hyper_.precision_mode == PrecisionMode::kPerElement) {
        hyper_.lambda_element.col(kept) = hyper_.lambda_element.col(k);
      }
      ++kept;
    }
    counts_.conservativeResize(kept);
    hyper_.lambda.conservativeResize(kept);
    if (hyper_.precision_mode == PrecisionMode::kPerElement) {
      hyper_.lambda_element.conservativeResize(Eigen::NoChange, kept);
    }
  }

  // Moves the features appended at positions [old_k, K) to uniformly random
  // column positions, keeping the relative order of the others. Column order
  // fixes the Gibbs scan order, so newborn features must not sit in a
  // distinguished position.
  void scatter_new_features(Index old_k) {
    const Index total = state_.active();
    std::vector<Index> order(static_cast<std::size_t>(old_k));
    for (Index k = 0; k < old_k; ++k) order[static_cast<std::size_t>(k)] = k;
    for (Index k = old_k; k < total; ++k) {
      const auto pos = static_cast<std::ptrdiff_t>(rng_.index(order.size() + 1));
      order.insert(order.begin() + pos, k);
    }
    Eigen::PermutationMatrix<Eigen::Dynamic> perm(total);
    for (Index j = 0; j < total; ++j) perm.indices()(order[static_cast<std::size_t>(j)]) = static_cast<int>(j);
    state_.Z = state_.Z * perm;
    state_.G = state_.G * perm;
    state_.X = perm.transpose() * state_.X;
    counts_ = perm.transpose() * counts_;
    x_sq_ = perm.transpose() * x_sq_;
    hyper_.lambda = perm.transpose() * hyper_.lambda;
    if (hyper_.precision_mode == PrecisionMode::kPerElement) hyper_.lambda_element = hyper_.lambda_element * perm;
  }

  double audit_residual() {
    ResidualCache fresh = recompute_residual(y_, state_);
    const double drift = fresh.E.size() > 0 ? (fresh.E - residual_.E).cwiseAbs().maxCoeff() : 0.0;
    if (!(drift < config_.drift_tolerance)) {
      throw InvalidState("residual cache drifted by " + std::to_string(drift));
    }
    residual_ = std::move(fresh);
    return drift;
  }

  double mean_precision() const {
    if (hyper_.precision_mode == PrecisionMode::kShared) return hyper_.lambda_shared;
    if (hyper_.precision_mode == PrecisionMode::kPerElement) {
      return hyper_.lambda_element.size() > 0 ? hyper_.lambda_element.mean() : std::nan("");
    }
    return hyper_.lambda.size() > 0 ? hyper_.lambda.mean() : std::nan("");
  }

  ObservationMatrix data_;
  Matrix y_;
  SamplerConfig config_;
  FeatureState state_;
  HyperParams hyper_;
  ResidualCache residual_;
  Eigen::VectorXi counts_;
  Vector x_sq_;
  Rng rng_;
  int iteration_ = 0;
};

}  // namespace nsfa
