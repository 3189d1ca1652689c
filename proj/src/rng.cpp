#include "spc/rng.hpp"

#include <cmath>
#include <stdexcept>

namespace spc {

namespace {

// SplitMix64 finalizer; spreads (seed, stream) over the full 64-bit space so
// adjacent stream ids do not produce correlated engine states.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

constexpr double kTwoPi = 6.283185307179586476925286766559;

}  // namespace

Rng::Rng(RngStream stream) : engine_(mix_seed(stream.seed, stream.stream)) {}

double Rng::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double Rng::normal() {
  if (has_cached_normal_) {
    has_cached_normal_ = false;
    return cached_normal_;
  }
  // u1 in (0, 1] so the log is finite.
  const double u1 = static_cast<double>((engine_() >> 11) + 1) * 0x1.0p-53;
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = kTwoPi * u2;
  cached_normal_ = radius * std::sin(angle);
  has_cached_normal_ = true;
  return radius * std::cos(angle);
}

std::uint64_t Rng::uniform_index(std::uint64_t bound) {
  if (bound == 0) throw std::invalid_argument("uniform_index: bound must be positive");
  const unsigned __int128 product =
      static_cast<unsigned __int128>(engine_()) * static_cast<unsigned __int128>(bound);
  return static_cast<std::uint64_t>(product >> 64);
}

std::int64_t Rng::poisson(double mean) {
  if (mean < 0.0 || !std::isfinite(mean))
    throw std::domain_error("poisson: rate must be finite and nonnegative");
  if (mean == 0.0) return 0;
  return mean < 30.0 ? poisson_by_inversion(mean) : poisson_by_rejection(mean);
}

// Product-of-uniforms inversion (exact, O(mean) uniforms per draw).
std::int64_t Rng::poisson_by_inversion(double mean) {
  const double limit = std::exp(-mean);
  std::int64_t count = 0;
  double product = 1.0;
  do {
    ++count;
    product *= uniform();
  } while (product > limit);
  return count - 1;
}

// Transformed rejection with squeeze (Hormann's PTRS); O(1) uniforms per
// draw for any large mean.
std::int64_t Rng::poisson_by_rejection(double mean) {
  const double sqrt_mean = std::sqrt(mean);
  const double log_mean = std::log(mean);
  const double b = 0.931 + 2.53 * sqrt_mean;
  const double a = -0.059 + 0.02483 * b;
  const double inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
  const double v_r = 0.9277 - 3.6224 / (b - 2.0);

  for (;;) {
    const double u = uniform() - 0.5;
    const double v = uniform();
    const double us = 0.5 - std::abs(u);
    const auto k = static_cast<std::int64_t>(std::floor((2.0 * a / us + b) * u + mean + 0.43));
    if (us >= 0.07 && v <= v_r) return k;
    if (k < 0 || (us < 0.013 && v > us)) continue;
    const double log_accept = std::log(v) + std::log(inv_alpha) - std::log(a / (us * us) + b);
    if (log_accept <= -mean + static_cast<double>(k) * log_mean - std::lgamma(static_cast<double>(k) + 1.0))
      return k;
  }
}

Eigen::VectorXd Rng::normal_vector(Eigen::Index n) {
  Eigen::VectorXd out(n);
  for (Eigen::Index i = 0; i < n; ++i) out[i] = normal();
  return out;
}

Eigen::MatrixXd Rng::normal_matrix(Eigen::Index rows, Eigen::Index cols) {
  Eigen::MatrixXd out(rows, cols);
  double* data = out.data();
  const Eigen::Index total = rows * cols;
  for (Eigen::Index i = 0; i < total; ++i) data[i] = normal();
  return out;
}

Eigen::MatrixXd Rng::uniform_matrix(Eigen::Index rows, Eigen::Index cols) {
  Eigen::MatrixXd out(rows, cols);
  double* data = out.data();
  const Eigen::Index total = rows * cols;
  for (Eigen::Index i = 0; i < total; ++i) data[i] = uniform();
  return out;
}

}  // namespace spc
