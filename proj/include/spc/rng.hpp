#pragma once

#include <cstdint>
#include <random>

#include <Eigen/Core>

namespace spc {

/// Identifies one reproducible random sequence. Equal (seed, stream) pairs
/// always produce identical draws; distinct stream ids give statistically
/// independent sequences for parallel work.
struct RngStream {
  std::uint64_t seed = 0;
  std::uint64_t stream = 0;
};

/// Deterministic sampler built on mt19937_64 with a SplitMix64-mixed seed.
///
/// Generation methods are fixed so that a (seed, stream) pair reproduces the
/// same sequence on every run:
///   - uniform():  (x >> 11) * 2^-53, in [0, 1)
///   - normal():   Box-Muller on a pair of uniforms, second value cached
///   - poisson():  product-of-uniforms inversion below mean 30, transformed
///                 rejection (Hormann PTRS) above
class Rng {
 public:
  explicit Rng(RngStream stream);
  Rng(std::uint64_t seed, std::uint64_t stream = 0) : Rng(RngStream{seed, stream}) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform double in [0, 1).
  double uniform();

  /// Standard normal draw.
  double normal();

  /// Poisson draw with the given mean. Zero mean short-circuits to zero
  /// without consuming engine state. Negative mean throws std::domain_error.
  std::int64_t poisson(double mean);

  /// Uniform integer in [0, bound), bound >= 1. Fixed-point multiply, no
  /// rejection loop, deterministic.
  std::uint64_t uniform_index(std::uint64_t bound);

  Eigen::VectorXd normal_vector(Eigen::Index n);
  /// Column-major fill order.
  Eigen::MatrixXd normal_matrix(Eigen::Index rows, Eigen::Index cols);
  Eigen::MatrixXd uniform_matrix(Eigen::Index rows, Eigen::Index cols);

 private:
  std::mt19937_64 engine_;
  double cached_normal_ = 0.0;
  bool has_cached_normal_ = false;

  std::int64_t poisson_by_inversion(double mean);
  std::int64_t poisson_by_rejection(double mean);
};

}  // namespace spc
