#pragma once

#include <Eigen/Dense>

#include "spc/masks.hpp"
#include "spc/noise.hpp"

namespace spc {

/// Closed-form reconstruction error for a (basis, noise) pair, used as the
/// oracle against Monte Carlo sweeps. The Hadamard forms assume the
/// one-detector dual-rail photon accounting (lambda = total / (2 N^2));
/// running a different rail mode will disagree loudly.
struct TheoryPrediction {
  Eigen::VectorXd per_pixel_variance;  // length 1 when the form is scalar
  double trace = 0.0;
  MaskFamily basis = MaskFamily::Raster;
  NoiseModel noise;
  RailMode assumed_rail_mode = RailMode::SinglePositive;
};

/// sigma^2 N^4 / total^2, per pixel.
double predict_raster_gaussian(Eigen::Index pixel_count, double sigma, double total_photons);

/// 8 sigma^2 N^3 / total^2, per pixel; requires N a power of two.
double predict_hadamard_gaussian(Eigen::Index pixel_count, double sigma, double total_photons);

/// (N^2 / total) * x, elementwise.
Eigen::VectorXd predict_raster_poisson(const Eigen::VectorXd& x, double total_photons);

/// (2 N sum(x)) / total, per pixel; the trace is exactly twice the raster one.
double predict_hadamard_poisson(const Eigen::VectorXd& x, double total_photons);

TheoryPrediction predict(MaskFamily basis, const NoiseModel& noise, Eigen::Index pixel_count,
                         double total_photons, const Eigen::VectorXd& x);

/// Debugging helper: reconstruction covariance M^-1 diag(count_variance) M^-T
/// normalized by lambda^2, for an arbitrary square mask. Not one of the
/// validated closed forms.
Eigen::MatrixXd propagate_covariance(const Eigen::MatrixXd& masks,
                                     const Eigen::VectorXd& count_variance, double lambda);

}  // namespace spc
