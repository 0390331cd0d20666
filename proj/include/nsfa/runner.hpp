#pragma once

// End-to-end experiment driver behind the command-line tool.
//
// Output layout of a run:
//   <out>/config.txt           resolved configuration (all keys)
//   <out>/mask.csv             training mask (0 = held out)
//   <out>/metrics.csv          one row of summary metrics per chain
//   <out>/manifest.json        config, seed, versions, every file with its SHA-256
//   <out>/chain_<c>/trace.csv  per-iteration diagnostics (deterministic)
//   <out>/chain_<c>/timing.csv per-iteration wall-clock milliseconds
//   <out>/chain_<c>/hyper.csv  scalar hyperparameters of each retained sample
//   <out>/chain_<c>/samples/iter_<i>_{G,X,Z,psi_inv,lambda}.csv
//   <out>/chain_<c>/k_histogram.csv

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "nsfa/config.hpp"
#include "nsfa/eval.hpp"
#include "nsfa/io.hpp"
#include "nsfa/sampler.hpp"
#include "nsfa/variants.hpp"
#include "json.hpp"

namespace nsfa::runner {

inline constexpr const char* kVersion = "0.1.0";

namespace fs = std::filesystem;

inline std::string fmt(double v) { return io::detail::format_double(v); }

inline std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read for hashing: " + path.string());
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  char buf[1 << 15];
  while (in) {
    in.read(buf, sizeof(buf));
    if (in.gcount() > 0) EVP_DigestUpdate(ctx, buf, static_cast<std::size_t>(in.gcount()));
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, digest, &len);
  EVP_MD_CTX_free(ctx);
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) {
    hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  }
  return hex.str();
}

inline std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

inline void write_trace_header(std::ostream& out) {
  out << "iteration,k_active,log_likelihood,alpha,mean_lambda,mean_psi_inv,births_proposed,"
         "births_accepted\n";
}

inline void write_trace_row(std::ostream& out, const TraceRecord& r) {
  out << r.iteration << ',' << r.k_active << ',' << fmt(r.log_likelihood) << ',' << fmt(r.alpha)
      << ',' << fmt(r.mean_lambda) << ',' << fmt(r.mean_psi_inv) << ',' << r.births_proposed << ','
      << r.births_accepted << '\n';
}

inline std::string sample_stem(int iteration) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "iter_%06d", iteration);
  return buf;
}

struct ChainMetrics {
  int chain = 0;
  std::optional<double> test_log_likelihood;
  std::optional<double> reconstruction_error;
  std::optional<eval::PrecisionRecall> support;
  eval::KHistogram k_histogram;
};

struct Truth {
  std::optional<Matrix> g;
  std::optional<BinaryMatrix> z;
};

// Metrics for one chain from its retained samples (in iteration order) and
// its K trace.
inline ChainMetrics compute_chain_metrics(const RunConfig& cfg, const Matrix& y_full,
                                          const Mask& train_mask,
                                          const std::vector<eval::PosteriorSample>& samples,
                                          const std::vector<Index>& k_trace, const Truth& truth,
                                          int chain) {
  ChainMetrics m;
  m.chain = chain;
  m.k_histogram = eval::posterior_k_histogram(k_trace, cfg.burn_in);
  if (samples.empty()) return m;
  if ((train_mask == false).any()) {
    m.test_log_likelihood = eval::test_log_likelihood(y_full, train_mask, samples, cfg.aggregation);
  }
  const std::size_t tail = std::min<std::size_t>(samples.size(), static_cast<std::size_t>(cfg.er_samples));
  if (truth.g) {
    double er = 0.0;
    for (std::size_t i = samples.size() - tail; i < samples.size(); ++i) {
      er += eval::reconstruction_error(*truth.g, samples[i].g, cfg.sign_mode);
    }
    m.reconstruction_error = er / static_cast<double>(tail);
  }
  if (truth.z) {
    eval::PrecisionRecall avg{0.0, 0.0};
    for (std::size_t i = samples.size() - tail; i < samples.size(); ++i) {
      const eval::PrecisionRecall pr =
          truth.g ? eval::support_precision_recall(*truth.z, *truth.g, samples[i].g, cfg.threshold, cfg.sign_mode)
                  : eval::support_precision_recall(*truth.z, samples[i].g, cfg.threshold);
      avg.precision += pr.precision / static_cast<double>(tail);
      avg.recall += pr.recall / static_cast<double>(tail);
    }
    m.support = avg;
  }
  return m;
}

inline void write_k_histogram(const fs::path& path, const eval::KHistogram& h) {
  auto out = open_out(path);
  out << "k,count\n";
  for (const auto& [k, c] : h.counts) out << k << ',' << c << '\n';
}

inline void write_metrics(const fs::path& path, const std::vector<ChainMetrics>& all) {
  auto out = open_out(path);
  out << "chain,test_log_likelihood,reconstruction_error,precision,recall,k_mean,k_sd\n";
  auto opt = [](const std::optional<double>& v) { return v ? fmt(*v) : std::string("NA"); };
  for (const auto& m : all) {
    out << m.chain << ',' << opt(m.test_log_likelihood) << ',' << opt(m.reconstruction_error) << ','
        << (m.support ? fmt(m.support->precision) : "NA") << ','
        << (m.support ? fmt(m.support->recall) : "NA") << ',' << fmt(m.k_histogram.mean) << ','
        << fmt(m.k_histogram.sd) << '\n';
  }
}

struct PreparedData {
  ObservationMatrix full;      // as loaded; mask marks NA entries
  ObservationMatrix training;  // values of `full`, mask with held-out entries removed
  Truth truth;
};

inline PreparedData prepare_data(const RunConfig& cfg) {
  if (cfg.data_path.empty()) throw ConfigError("data.path is required");
  PreparedData p;
  p.full = io::load_matrix(cfg.data_path, cfg.data_header);
  p.full.validate();
  p.training = p.full;
  if (!cfg.mask_path.empty()) {
    const Mask mask = io::load_mask(cfg.mask_path);
    if (mask.rows() != p.full.dims() || mask.cols() != p.full.samples()) {
      throw ConfigError("data.mask shape does not match data.path");
    }
    p.training.mask = p.full.mask && mask;
  } else if (cfg.holdout_fraction > 0.0) {
    p.training.mask = eval::make_holdout_split(p.full.mask, cfg.holdout_fraction, cfg.holdout_seed).mask;
  }
  if (!cfg.truth_g_path.empty()) {
    const ObservationMatrix g = io::load_matrix(cfg.truth_g_path);
    if (g.values.rows() != p.full.dims()) throw ConfigError("data.truth_g must have D rows");
    p.truth.g = g.values;
  }
  if (!cfg.truth_z_path.empty()) {
    p.truth.z = io::load_binary(cfg.truth_z_path);
    if (p.truth.z->rows() != p.full.dims()) throw ConfigError("data.truth_z must have D rows");
  }
  return p;
}

// Entries held out for evaluation: observed in the file but not in training.
inline Mask evaluation_mask(const PreparedData& p) { return !(p.full.mask && !p.training.mask); }

inline variants::BuildOptions build_options(const RunConfig& cfg, int chain) {
  variants::BuildOptions opt;
  opt.priors = cfg.priors;
  opt.proposal = cfg.proposal;
  opt.init_features = cfg.init_k;
  opt.sample_precision_rate = cfg.sample_lambda_rate;
  opt.seed = cfg.seed;
  opt.stream = 2 * static_cast<std::uint64_t>(chain);
  return opt;
}

inline ChainMetrics run_chain(const RunConfig& cfg, const PreparedData& data, int chain,
                              const fs::path& dir) {
  fs::create_directories(dir / "samples");
  Sampler sampler = variants::build_variant(cfg.variant, data.training, build_options(cfg, chain));
  auto trace = open_out(dir / "trace.csv");
  auto timing = open_out(dir / "timing.csv");
  auto hyper = open_out(dir / "hyper.csv");
  write_trace_header(trace);
  timing << "iteration,k_active,wall_ms\n";
  hyper << "iteration,k_active,alpha,lambda_rate,noise_rate,mean_lambda,mean_psi_inv\n";

  std::vector<eval::PosteriorSample> samples;
  std::vector<Index> k_trace;
  for (int it = 1; it <= cfg.iterations; ++it) {
    const TraceRecord rec = sampler.sweep();
    write_trace_row(trace, rec);
    timing << rec.iteration << ',' << rec.k_active << ',' << fmt(rec.wall_ms) << '\n';
    k_trace.push_back(rec.k_active);
    if (it > cfg.burn_in && (it - cfg.burn_in) % cfg.thin == 0) {
      const auto& st = sampler.state();
      const auto& hp = sampler.hyper();
      const std::string stem = sample_stem(it);
      io::save_matrix((dir / "samples" / (stem + "_G.csv")).string(), st.G);
      io::save_matrix((dir / "samples" / (stem + "_X.csv")).string(), st.X);
      io::save_binary((dir / "samples" / (stem + "_Z.csv")).string(), st.Z);
      io::save_matrix((dir / "samples" / (stem + "_psi_inv.csv")).string(), hp.psi_inv);
      io::save_matrix((dir / "samples" / (stem + "_lambda.csv")).string(), hp.lambda);
      hyper << it << ',' << st.active() << ',' << fmt(hp.alpha) << ',' << fmt(hp.lambda_rate) << ','
            << fmt(hp.noise_rate) << ',' << fmt(rec.mean_lambda) << ',' << fmt(rec.mean_psi_inv) << '\n';
      samples.push_back({st.G, st.X, hp.psi_inv});
    }
  }
  ChainMetrics m = compute_chain_metrics(cfg, data.full.values, evaluation_mask(data), samples,
                                         k_trace, data.truth, chain);
  write_k_histogram(dir / "k_histogram.csv", m.k_histogram);
  return m;
}

inline nlohmann::json versions_json() {
  nlohmann::json v;
  v["nsfa"] = kVersion;
  v["eigen"] = std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
               std::to_string(EIGEN_MINOR_VERSION);
  v["compiler"] = __VERSION__;
  v["cxx_standard"] = __cplusplus;
  return v;
}

// Rewrites manifest.json listing every other file under `out` with its hash.
inline void write_manifest(const RunConfig& cfg, const fs::path& out) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(out)) {
    if (entry.is_regular_file() && entry.path().filename() != "manifest.json") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  nlohmann::json manifest;
  manifest["config"] = cfg.raw;
  manifest["seed"] = cfg.seed;
  manifest["versions"] = versions_json();
  nlohmann::json listed = nlohmann::json::array();
  for (const auto& f : files) {
    listed.push_back({{"path", fs::relative(f, out).generic_string()},
                      {"sha256", sha256_file(f)},
                      {"bytes", fs::file_size(f)}});
  }
  manifest["files"] = listed;
  auto stream = open_out(out / "manifest.json");
  stream << manifest.dump(2) << '\n';
}

// Runs every chain (concurrently, one thread each) and writes all artifacts.
inline std::vector<ChainMetrics> run(const RunConfig& cfg) {
  cfg.validate();
  const PreparedData data = prepare_data(cfg);
  const fs::path out(cfg.output_dir);
  fs::create_directories(out);
  {
    auto stream = open_out(out / "config.txt");
    stream << to_text(cfg.raw);
  }
  io::save_mask((out / "mask.csv").string(), data.training.mask);

  std::vector<ChainMetrics> metrics(static_cast<std::size_t>(cfg.chains));
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(cfg.chains));
  std::vector<std::thread> threads;
  for (int c = 0; c < cfg.chains; ++c) {
    threads.emplace_back([&, c] {
      try {
        metrics[static_cast<std::size_t>(c)] = run_chain(cfg, data, c, out / ("chain_" + std::to_string(c)));
      } catch (...) {
        errors[static_cast<std::size_t>(c)] = std::current_exception();
      }
    });
  }
  for (auto& t : threads) t.join();
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  write_metrics(out / "metrics.csv", metrics);
  write_manifest(cfg, out);
  return metrics;
}

inline std::vector<std::vector<std::string>> read_csv_rows(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::vector<std::vector<std::string>> rows;
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    rows.push_back(std::move(fields));
  }
  return rows;
}

// Recomputes metrics.csv and the K histograms of an existing run directory
// from its saved samples.
inline std::vector<ChainMetrics> recompute_metrics(const fs::path& run_dir) {
  RunConfig cfg = resolve_config(load_key_values((run_dir / "config.txt").string()));
  PreparedData data = prepare_data(cfg);
  data.training.mask = data.full.mask && io::load_mask((run_dir / "mask.csv").string());
  std::vector<ChainMetrics> all;
  for (int c = 0; c < cfg.chains; ++c) {
    const fs::path dir = run_dir / ("chain_" + std::to_string(c));
    std::vector<Index> k_trace;
    for (const auto& row : read_csv_rows(dir / "trace.csv")) k_trace.push_back(std::stol(row.at(1)));
    std::vector<eval::PosteriorSample> samples;
    for (const auto& row : read_csv_rows(dir / "hyper.csv")) {
      const int it = std::stoi(row.at(0));
      const Index k = std::stol(row.at(1));
      const std::string stem = (dir / "samples" / sample_stem(it)).string();
      eval::PosteriorSample s;
      s.psi_inv = io::load_matrix(stem + "_psi_inv.csv").values.col(0);
      if (k > 0) {
        s.g = io::load_matrix(stem + "_G.csv").values;
        s.x = io::load_matrix(stem + "_X.csv").values;
      } else {
        s.g = Matrix(data.full.dims(), 0);
        s.x = Matrix(0, data.full.samples());
      }
      samples.push_back(std::move(s));
    }
    ChainMetrics m = compute_chain_metrics(cfg, data.full.values, evaluation_mask(data), samples,
                                           k_trace, data.truth, c);
    write_k_histogram(dir / "k_histogram.csv", m.k_histogram);
    all.push_back(std::move(m));
  }
  write_metrics(run_dir / "metrics.csv", all);
  write_manifest(cfg, run_dir);
  return all;
}

struct TimingRow {
  int chain = 0;
  int iteration = 0;
  Index k_active = 0;
  double ms = 0.0;
};

struct TimingSummary {
  double mean_ms = 0.0;
  double sd_ms = 0.0;
  double mean_ms_per_feature = 0.0;
  double sd_ms_per_feature = 0.0;
  int iterations = 0;
};

inline std::pair<double, double> mean_sd(const std::vector<double>& v) {
  if (v.empty()) return {std::nan(""), std::nan("")};
  double sum = 0.0;
  for (double x : v) sum += x;
  const double mean = sum / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  const double sd = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
  return {mean, sd};
}

// Per-iteration cost and cost per active feature (iterations with K = 0 are
// excluded from the per-feature figures).
inline TimingSummary emit_timing_report(const std::vector<TimingRow>& rows, std::ostream* csv = nullptr) {
  if (csv) *csv << "chain,iteration,k_active,ms,ms_per_feature\n";
  std::vector<double> ms, per_feature;
  for (const auto& r : rows) {
    ms.push_back(r.ms);
    const double pf = r.k_active > 0 ? r.ms / static_cast<double>(r.k_active) : std::nan("");
    if (r.k_active > 0) per_feature.push_back(pf);
    if (csv) {
      *csv << r.chain << ',' << r.iteration << ',' << r.k_active << ',' << fmt(r.ms) << ','
           << (r.k_active > 0 ? fmt(pf) : std::string("NA")) << '\n';
    }
  }
  TimingSummary s;
  s.iterations = static_cast<int>(rows.size());
  std::tie(s.mean_ms, s.sd_ms) = mean_sd(ms);
  std::tie(s.mean_ms_per_feature, s.sd_ms_per_feature) = mean_sd(per_feature);
  return s;
}

inline std::vector<TimingRow> load_timing(const fs::path& run_dir) {
  std::vector<TimingRow> rows;
  for (int c = 0;; ++c) {
    const fs::path file = run_dir / ("chain_" + std::to_string(c)) / "timing.csv";
    if (!fs::exists(file)) break;
    for (const auto& f : read_csv_rows(file)) {
      rows.push_back({c, std::stoi(f.at(0)), std::stol(f.at(1)), std::stod(f.at(2))});
    }
  }
  if (rows.empty()) throw std::runtime_error("no timing.csv files under " + run_dir.string());
  return rows;
}

// Writes timing_report.csv and timing_summary.csv into the run directory.
inline TimingSummary write_timing_report(const fs::path& run_dir) {
  const auto rows = load_timing(run_dir);
  auto report = open_out(run_dir / "timing_report.csv");
  const TimingSummary s = emit_timing_report(rows, &report);
  auto summary = open_out(run_dir / "timing_summary.csv");
  summary << "iterations,mean_ms,sd_ms,mean_ms_per_feature,sd_ms_per_feature\n"
          << s.iterations << ',' << fmt(s.mean_ms) << ',' << fmt(s.sd_ms) << ','
          << fmt(s.mean_ms_per_feature) << ',' << fmt(s.sd_ms_per_feature) << '\n';
  return s;
}

}  // namespace nsfa::runner
