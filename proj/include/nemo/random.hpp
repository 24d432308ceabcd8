#pragma once

#include <cstdint>
#include <random>
#include <string>

#include <Eigen/Core>

namespace nemo {

/// Seedable randomness stream. The full state (engine and cached normal
/// deviate) round-trips through `serialize`/`deserialize`, which is what the
/// sampler checkpoints rely on.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 1);

  /// Stream derived from a master seed and a list of tags (replicate index,
  /// purpose, ...). Distinct tag lists give statistically independent streams.
  static Rng derived(std::uint64_t master_seed, std::initializer_list<std::uint64_t> tags);

  double normal() { return normal_(engine_); }
  double normal(double mean, double sd) { return mean + sd * normal_(engine_); }
  Eigen::VectorXd normal_vector(Eigen::Index n);
  /// Uniform on [0, 1).
  double uniform() { return uniform_(engine_); }
  /// Gamma with shape/rate parameterization.
  double gamma(double shape, double rate);
  double exponential(double rate);
  bool bernoulli(double p) { return uniform() < p; }
  std::uint64_t next_u64() { return engine_(); }
  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n);

  std::string serialize() const;
  static Rng deserialize(const std::string& text);

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

}  // namespace nemo
