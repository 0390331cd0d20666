// nsfa command-line tool.
//
//   nsfa run      [--config FILE] [--key=value ...]
//   nsfa simulate --out DIR [--z FILE | --dims D --factors K --density P] ...
//   nsfa ibp-draw --out DIR [--dims D --alpha A --draws M --seed S]
//   nsfa metrics  --run-dir DIR
//   nsfa timing   --run-dir DIR

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "nsfa/nsfa.hpp"

namespace fs = std::filesystem;

namespace {

// Collects "--key=value" and "--key value" pairs left over after CLI11 parsing.
nsfa::KeyValues parse_overrides(const std::vector<std::string>& extras) {
  nsfa::KeyValues kv;
  for (std::size_t i = 0; i < extras.size(); ++i) {
    std::string arg = extras[i];
    if (arg.rfind("--", 0) != 0) throw nsfa::ConfigError("unexpected argument '" + arg + "'");
    arg = arg.substr(2);
    const auto eq = arg.find('=');
    if (eq != std::string::npos) {
      kv[arg.substr(0, eq)] = arg.substr(eq + 1);
    } else if (i + 1 < extras.size() && extras[i + 1].rfind("--", 0) != 0) {
      kv[arg] = extras[++i];
    } else {
      throw nsfa::ConfigError("missing value for --" + arg);
    }
  }
  return kv;
}

int cmd_run(const std::string& config_path, const std::vector<std::string>& extras) {
  nsfa::KeyValues kv;
  if (!config_path.empty()) kv = nsfa::load_key_values(config_path);
  for (const auto& [k, v] : parse_overrides(extras)) kv[k] = v;
  const nsfa::RunConfig cfg = nsfa::resolve_config(kv);
  const auto metrics = nsfa::runner::run(cfg);
  for (const auto& m : metrics) {
    std::cout << "chain " << m.chain << ": mean K " << m.k_histogram.mean << " (sd " << m.k_histogram.sd << ")";
    if (m.test_log_likelihood) std::cout << ", test log-likelihood " << *m.test_log_likelihood;
    if (m.reconstruction_error) std::cout << ", E_r " << *m.reconstruction_error;
    std::cout << '\n';
  }
  std::cout << "wrote " << cfg.output_dir << '\n';
  return 0;
}

struct SimulateArgs {
  std::string out;
  std::string z_path;
  int dims = 100;
  int factors = 16;
  double density = 0.1;
  int min_per_column = 3;
  int samples = 100;
  double snr = 10.0;
  std::uint64_t seed = 0;
};

int cmd_simulate(const SimulateArgs& a) {
  nsfa::eval::SyntheticSpec spec;
  spec.samples = a.samples;
  spec.snr = a.snr;
  spec.seed = a.seed;
  if (!a.z_path.empty()) {
    spec.z_true = nsfa::io::load_binary(a.z_path);
  } else {
    nsfa::Rng rng(a.seed, 1);
    spec.z_true = nsfa::eval::random_connectivity(a.dims, a.factors, a.density, a.min_per_column, rng);
  }
  const auto data = nsfa::eval::generate_synthetic(spec);
  const fs::path out(a.out);
  fs::create_directories(out);
  nsfa::io::save_matrix((out / "Y.csv").string(), data.y);
  nsfa::io::save_matrix((out / "G.csv").string(), data.g_true);
  nsfa::io::save_matrix((out / "X.csv").string(), data.x_true);
  nsfa::io::save_binary((out / "Z.csv").string(), spec.z_true);
  std::ofstream info(out / "noise.txt");
  info << "noise_variance=" << nsfa::io::detail::format_double(data.noise_variance) << '\n';
  std::cout << "wrote " << out.string() << " (D=" << spec.z_true.rows() << ", K=" << spec.z_true.cols()
            << ", N=" << spec.samples << ")\n";
  return 0;
}

int cmd_ibp_draw(const std::string& out_dir, int dims, double alpha, int draws, std::uint64_t seed) {
  if (dims < 1 || draws < 1) throw nsfa::ConfigError("--dims and --draws must be >= 1");
  if (!(alpha > 0.0)) throw nsfa::ConfigError("--alpha must be > 0");
  const fs::path out(out_dir);
  fs::create_directories(out);
  nsfa::Rng rng(seed);
  std::ofstream summary(out / "summary.csv");
  summary << "draw,k_plus,total_ones\n";
  for (int i = 0; i < draws; ++i) {
    const auto draw = nsfa::ibp::sample_ibp(dims, alpha, rng);
    const nsfa::BinaryMatrix lof = nsfa::ibp::left_ordered_form(draw.Z);
    nsfa::io::save_binary((out / ("draw_" + std::to_string(i) + ".csv")).string(), lof);
    summary << i << ',' << lof.cols() << ',' << lof.cast<int>().sum() << '\n';
  }
  std::cout << "wrote " << draws << " draws to " << out.string() << '\n';
  return 0;
}

int cmd_metrics(const std::string& run_dir) {
  for (const auto& m : nsfa::runner::recompute_metrics(run_dir)) {
    std::cout << "chain " << m.chain << ": mean K " << m.k_histogram.mean << '\n';
  }
  return 0;
}

int cmd_timing(const std::string& run_dir) {
  const auto s = nsfa::runner::write_timing_report(run_dir);
  std::cout << "iterations " << s.iterations << ", ms/iteration " << s.mean_ms << " +- " << s.sd_ms
            << ", ms/feature " << s.mean_ms_per_feature << " +- " << s.sd_ms_per_feature << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Nonparametric sparse factor analysis"};
  app.require_subcommand(1);

  std::string config_path;
  auto* run = app.add_subcommand("run", "run the sampler and write all artifacts");
  run->add_option("--config", config_path, "key=value config file");
  run->allow_extras();

  SimulateArgs sim;
  auto* simulate = app.add_subcommand("simulate", "generate a synthetic dataset");
  simulate->add_option("--out", sim.out, "output directory")->required();
  simulate->add_option("--z", sim.z_path, "binary connectivity matrix (CSV)");
  simulate->add_option("--dims", sim.dims, "D when no --z is given");
  simulate->add_option("--factors", sim.factors, "K when no --z is given");
  simulate->add_option("--density", sim.density, "connectivity density when no --z is given");
  simulate->add_option("--min-per-column", sim.min_per_column, "minimum ones per column");
  simulate->add_option("--samples", sim.samples, "N");
  simulate->add_option("--snr", sim.snr, "signal-to-noise power ratio");
  simulate->add_option("--seed", sim.seed, "seed");

  std::string ibp_out;
  int ibp_dims = 50, ibp_draws = 1;
  double ibp_alpha = 10.0;
  std::uint64_t ibp_seed = 0;
  auto* ibp_draw = app.add_subcommand("ibp-draw", "draw binary matrices from the IBP prior");
  ibp_draw->add_option("--out", ibp_out, "output directory")->required();
  ibp_draw->add_option("--dims", ibp_dims, "rows (customers)");
  ibp_draw->add_option("--alpha", ibp_alpha, "concentration");
  ibp_draw->add_option("--draws", ibp_draws, "number of draws");
  ibp_draw->add_option("--seed", ibp_seed, "seed");

  std::string metrics_dir;
  auto* metrics = app.add_subcommand("metrics", "recompute metrics from saved samples");
  metrics->add_option("--run-dir", metrics_dir, "output directory of a previous run")->required();

  std::string timing_dir;
  auto* timing = app.add_subcommand("timing", "per-iteration and per-feature timing report");
  timing->add_option("--run-dir", timing_dir, "output directory of a previous run")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*run) return cmd_run(config_path, run->remaining());
    if (*simulate) return cmd_simulate(sim);
    if (*ibp_draw) return cmd_ibp_draw(ibp_out, ibp_dims, ibp_alpha, ibp_draws, ibp_seed);
    if (*metrics) return cmd_metrics(metrics_dir);
    if (*timing) return cmd_timing(timing_dir);
  } catch (const nsfa::ParseError& e) {
    std::cerr << "nsfa: parse error (line " << e.line() << "): " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "nsfa: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
