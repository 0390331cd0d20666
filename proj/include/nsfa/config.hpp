#pragma once

// Run configuration: a flat key=value text file with dotted keys. Every key
// has a default; unknown keys are rejected.

#include <charconv>
#include <limits>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>

#include "nsfa/errors.hpp"
#include "nsfa/eval.hpp"
#include "nsfa/sampler.hpp"
#include "nsfa/variants.hpp"

namespace nsfa {

using KeyValues = std::map<std::string, std::string>;

inline const KeyValues& default_config() {
  static const KeyValues defaults = {
      {"data.path", ""},
      {"data.header", "false"},
      {"data.mask", ""},
      {"data.holdout_fraction", "0.1"},
      {"data.holdout_seed", "1"},
      {"data.truth_g", ""},
      {"data.truth_z", ""},
      {"model.variant", "nsfa"},
      {"model.k", ""},
      {"model.init_k", "0"},
      {"model.noise", "independent"},
      {"model.sample_alpha", "false"},
      {"model.alpha", "1"},
      {"model.shared_lambda", "false"},
      {"model.sample_lambda_rate", "false"},
      {"proposal.pi_spike", "0.1"},
      {"proposal.lambda_mult", "1"},
      {"prior.e", "1"},
      {"prior.f", "1"},
      {"prior.c", "1"},
      {"prior.d", "1"},
      {"prior.c0", "1"},
      {"prior.d0", "1"},
      {"prior.a", "1"},
      {"prior.b", "1"},
      {"prior.a0", "1"},
      {"prior.b0", "1"},
      {"run.iterations", "3000"},
      {"run.burn_in", "2900"},
      {"run.thin", "1"},
      {"run.chains", "1"},
      {"run.seed", "0"},
      {"run.output_dir", "nsfa_out"},
      {"eval.sign_aware", "false"},
      {"eval.aggregation", "log_mean"},
      {"eval.er_samples", "10"},
      {"eval.threshold", "0"},
  };
  return defaults;
}

struct RunConfig {
  std::string data_path;
  bool data_header = false;
  std::string mask_path;
  double holdout_fraction = 0.1;
  std::uint64_t holdout_seed = 1;
  std::string truth_g_path;
  std::string truth_z_path;

  variants::ModelVariant variant;
  int init_k = 0;
  double alpha = 1.0;
  bool sample_lambda_rate = false;
  BirthProposalParams proposal;
  HyperParams priors;

  int iterations = 3000;
  int burn_in = 2900;
  int thin = 1;
  int chains = 1;
  std::uint64_t seed = 0;
  std::string output_dir = "nsfa_out";

  eval::SignMode sign_mode = eval::SignMode::kVerbatim;
  eval::PredictiveAggregation aggregation = eval::PredictiveAggregation::kLogMean;
  int er_samples = 10;
  double threshold = 0.0;

  KeyValues raw;  // resolved key/value view, defaults included

  void validate() const {
    if (!(iterations > burn_in)) throw ConfigError("run.iterations must exceed run.burn_in");
    if (burn_in < 0) throw ConfigError("run.burn_in must be >= 0");
    if (thin < 1) throw ConfigError("run.thin must be >= 1");
    if (chains < 1) throw ConfigError("run.chains must be >= 1");
    if (er_samples < 1) throw ConfigError("eval.er_samples must be >= 1");
    if (threshold < 0.0) throw ConfigError("eval.threshold must be >= 0");
    if (!(holdout_fraction >= 0.0 && holdout_fraction < 1.0)) {
      throw ConfigError("data.holdout_fraction must lie in [0, 1)");
    }
    if (init_k < 0) throw ConfigError("model.init_k must be >= 0");
    variant.validate();
    proposal.validate();
    if (proposal.pi_spike >= 1.0) throw ConfigError("proposal.pi_spike must be < 1");
  }
};

namespace config_detail {

inline std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

inline double to_double(const KeyValues& kv, const std::string& key) {
  const std::string& s = kv.at(key);
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    if (s == "inf") return std::numeric_limits<double>::infinity();
    throw ConfigError(key + ": expected a number, got '" + s + "'");
  }
  return v;
}

inline long long to_int(const KeyValues& kv, const std::string& key) {
  const std::string& s = kv.at(key);
  long long v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw ConfigError(key + ": expected an integer, got '" + s + "'");
  }
  return v;
}

inline bool to_bool(const KeyValues& kv, const std::string& key) {
  const std::string& s = kv.at(key);
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw ConfigError(key + ": expected true or false, got '" + s + "'");
}

inline NoiseMode to_noise(const std::string& s) {
  if (s == "isotropic") return NoiseMode::kIsotropic;
  if (s == "independent") return NoiseMode::kIndependent;
  if (s == "soft_coupled") return NoiseMode::kSoftCoupled;
  throw ConfigError("model.noise: expected isotropic, independent or soft_coupled, got '" + s + "'");
}

}  // namespace config_detail

// Parses "key = value" lines; '#' starts a comment.
inline KeyValues parse_key_values(std::istream& in) {
  KeyValues kv;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = config_detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("expected key=value", line_no);
    const std::string key = config_detail::trim(line.substr(0, eq));
    if (key.empty()) throw ParseError("empty key", line_no);
    kv[key] = config_detail::trim(line.substr(eq + 1));
  }
  return kv;
}

inline KeyValues load_key_values(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  return parse_key_values(in);
}

// Overlays `overrides` on the defaults and builds the typed configuration.
inline RunConfig resolve_config(const KeyValues& overrides) {
  using namespace config_detail;
  KeyValues kv = default_config();
  for (const auto& [key, value] : overrides) {
    if (!kv.count(key)) throw ConfigError("unknown config key '" + key + "'");
    kv[key] = value;
  }

  RunConfig cfg;
  cfg.raw = kv;
  cfg.data_path = kv["data.path"];
  cfg.data_header = to_bool(kv, "data.header");
  cfg.mask_path = kv["data.mask"];
  cfg.holdout_fraction = to_double(kv, "data.holdout_fraction");
  cfg.holdout_seed = static_cast<std::uint64_t>(to_int(kv, "data.holdout_seed"));
  cfg.truth_g_path = kv["data.truth_g"];
  cfg.truth_z_path = kv["data.truth_z"];

  cfg.variant.kind = variants::parse_variant_kind(kv["model.variant"]);
  if (!kv["model.k"].empty()) cfg.variant.k_fixed = static_cast<int>(to_int(kv, "model.k"));
  cfg.variant.noise_mode = to_noise(kv["model.noise"]);
  cfg.variant.sample_alpha = to_bool(kv, "model.sample_alpha");
  cfg.variant.shared_lambda = to_bool(kv, "model.shared_lambda");
  cfg.init_k = static_cast<int>(to_int(kv, "model.init_k"));
  cfg.alpha = to_double(kv, "model.alpha");
  cfg.sample_lambda_rate = to_bool(kv, "model.sample_lambda_rate");

  cfg.proposal.pi_spike = to_double(kv, "proposal.pi_spike");
  cfg.proposal.lambda_mult = to_double(kv, "proposal.lambda_mult");

  cfg.priors.alpha = cfg.alpha;
  cfg.priors.alpha_shape = to_double(kv, "prior.e");
  cfg.priors.alpha_rate = to_double(kv, "prior.f");
  cfg.priors.lambda_shape = to_double(kv, "prior.c");
  cfg.priors.lambda_rate = to_double(kv, "prior.d");
  cfg.priors.lambda_rate_shape = to_double(kv, "prior.c0");
  cfg.priors.lambda_rate_rate = to_double(kv, "prior.d0");
  cfg.priors.noise_shape = to_double(kv, "prior.a");
  cfg.priors.noise_rate = to_double(kv, "prior.b");
  cfg.priors.noise_rate_shape = to_double(kv, "prior.a0");
  cfg.priors.noise_rate_rate = to_double(kv, "prior.b0");

  cfg.iterations = static_cast<int>(to_int(kv, "run.iterations"));
  cfg.burn_in = static_cast<int>(to_int(kv, "run.burn_in"));
  cfg.thin = static_cast<int>(to_int(kv, "run.thin"));
  cfg.chains = static_cast<int>(to_int(kv, "run.chains"));
  cfg.seed = static_cast<std::uint64_t>(to_int(kv, "run.seed"));
  cfg.output_dir = kv["run.output_dir"];

  cfg.sign_mode = to_bool(kv, "eval.sign_aware") ? eval::SignMode::kSignAware : eval::SignMode::kVerbatim;
  const std::string& agg = kv["eval.aggregation"];
  if (agg == "log_mean") {
    cfg.aggregation = eval::PredictiveAggregation::kLogMean;
  } else if (agg == "mean_log") {
    cfg.aggregation = eval::PredictiveAggregation::kMeanLog;
  } else {
    throw ConfigError("eval.aggregation: expected log_mean or mean_log, got '" + agg + "'");
  }
  cfg.er_samples = static_cast<int>(to_int(kv, "eval.er_samples"));
  cfg.threshold = to_double(kv, "eval.threshold");

  cfg.validate();
  return cfg;
}

inline std::string to_text(const KeyValues& kv) {
  std::ostringstream out;
  for (const auto& [key, value] : kv) out << key << '=' << value << '\n';
  return out.str();
}

}  // namespace nsfa
