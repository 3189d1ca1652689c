#pragma once

#include <Eigen/Core>

#include "spc/masks.hpp"
#include "spc/rng.hpp"

namespace spc {

/// Detector noise acting on photon counts. Gaussian sigma is in counts and
/// signal-independent; Poisson variance equals the expected count.
struct NoiseModel {
  enum class Kind { Noiseless, Gaussian, Poisson };

  Kind kind = Kind::Noiseless;
  double sigma = 0.0;

  static NoiseModel noiseless() { return {Kind::Noiseless, 0.0}; }
  static NoiseModel gaussian(double sigma);
  static NoiseModel poisson() { return {Kind::Poisson, 0.0}; }

  bool is_noiseless() const { return kind == Kind::Noiseless; }
  bool is_gaussian() const { return kind == Kind::Gaussian; }
  bool is_poisson() const { return kind == Kind::Poisson; }
};

const char* to_string(NoiseModel::Kind kind);

/// Rates below this floor still propagate a finite derivative through the
/// surrogate: the 1/sqrt(rate) factor is evaluated at the floor instead.
inline constexpr double kSurrogateRateFloor = 1e-8;

/// Independent normal counts, mean rates[k], variance sigma^2.
Eigen::VectorXd sample_counts_gaussian(const Eigen::VectorXd& rates, double sigma, Rng& rng);

/// Independent Poisson counts (returned as integer-valued doubles). A
/// negative rate throws std::domain_error — signed rates mean the caller
/// skipped the dual-rail split.
Eigen::VectorXd sample_counts_poisson(const Eigen::VectorXd& rates, Rng& rng);

/// Signed counts per mask: Poisson(lambda * positive x) minus an independent
/// Poisson(lambda * negative x), i.e. Skellam-distributed.
Eigen::VectorXd sample_counts_dual_rail(const DualRailPair& pair, const Eigen::VectorXd& x,
                                        double lambda, Rng& rng);

/// Counts / lambda; expectation equals the noiseless projection.
Eigen::VectorXd normalize_counts(const Eigen::VectorXd& counts, double lambda);

/// Differentiable stand-in for Poisson counting: count-scale mean `rates`,
/// count-scale standard deviation sqrt(rates), normalized by lambda.
///
///   y_k    = rates_k / lambda + sqrt(rates_k) * eps_k / lambda
///   gain_k = 1 + eps_k / (2 sqrt(max(rates_k, floor)))
///
/// so that d y_k / d M_kj = x_j * gain_k when rates = lambda * (M x).
struct SurrogateSample {
  Eigen::VectorXd y;
  Eigen::VectorXd gain;
};
SurrogateSample surrogate_poisson(const Eigen::VectorXd& rates, double lambda,
                                  const Eigen::VectorXd& eps);

/// Matrix-batch forms used by the training loops; same math as above.
Eigen::MatrixXd surrogate_poisson_counts(const Eigen::MatrixXd& rates, const Eigen::MatrixXd& eps);
Eigen::MatrixXd surrogate_poisson_gain(const Eigen::MatrixXd& rates, const Eigen::MatrixXd& eps);

}  // namespace spc
