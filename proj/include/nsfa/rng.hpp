#pragma once

#include <cstdint>
#include <random>

namespace nsfa {

// Seeded generator owned by a single chain. All draws go through the member
// distributions so that a (seed, stream) pair fully determines the sequence.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed),
                      static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream),
                      static_cast<std::uint32_t>(stream >> 32)};
    engine_.seed(seq);
  }

  // Independent child generator, e.g. one per chain or per column stream.
  Rng split(std::uint64_t stream) {
    const std::uint64_t child_seed = engine_();
    return Rng(child_seed, stream);
  }

  // Uniform on the open interval (0, 1).
  double uniform() {
    double u;
    do {
      u = std::generate_canonical<double, 64>(engine_);
    } while (u <= 0.0);
    return u;
  }

  double normal() { return normal_(engine_); }
  double normal(double mean, double sd) { return mean + sd * normal_(engine_); }

  // Gamma variate with the inverse-scale (rate) parameterization.
  double gamma(double shape, double rate) {
    std::gamma_distribution<double> dist(shape, 1.0 / rate);
    return dist(engine_);
  }

  int poisson(double mean) {
    if (!(mean > 0.0)) return 0;
    std::poisson_distribution<int> dist(mean);
    return dist(engine_);
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Uniform integer in [0, n).
  std::size_t index(std::size_t n) {
    std::uniform_int_distribution<std::size_t> dist(0, n - 1);
    return dist(engine_);
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace nsfa
