#include "spc/theory.hpp"

#include <stdexcept>

namespace spc {

namespace {

void require_positive(double value, const char* what) {
  if (!(value > 0.0)) throw std::invalid_argument(std::string("theory: ") + what + " must be positive");
}

bool is_power_of_two(Eigen::Index n) { return n >= 1 && (n & (n - 1)) == 0; }

}  // namespace

double predict_raster_gaussian(Eigen::Index pixel_count, double sigma, double total_photons) {
  if (pixel_count < 1) throw std::invalid_argument("theory: pixel count must be positive");
  require_positive(sigma, "sigma");
  require_positive(total_photons, "photon total");
  const auto n = static_cast<double>(pixel_count);
  return sigma * sigma * n * n * n * n / (total_photons * total_photons);
}

double predict_hadamard_gaussian(Eigen::Index pixel_count, double sigma, double total_photons) {
  if (!is_power_of_two(pixel_count))
    throw std::invalid_argument("theory: Hadamard prediction needs a power-of-two pixel count");
  require_positive(sigma, "sigma");
  require_positive(total_photons, "photon total");
  const auto n = static_cast<double>(pixel_count);
  return 8.0 * sigma * sigma * n * n * n / (total_photons * total_photons);
}

Eigen::VectorXd predict_raster_poisson(const Eigen::VectorXd& x, double total_photons) {
  require_positive(total_photons, "photon total");
  if (x.size() > 0 && (x.minCoeff() < 0.0 || x.maxCoeff() > 1.0))
    throw std::invalid_argument("theory: scene entries must lie in [0, 1]");
  const auto n = static_cast<double>(x.size());
  return (n * n / total_photons) * x;
}

double predict_hadamard_poisson(const Eigen::VectorXd& x, double total_photons) {
  if (!is_power_of_two(x.size()))
    throw std::invalid_argument("theory: Hadamard prediction needs a power-of-two pixel count");
  require_positive(total_photons, "photon total");
  if (x.minCoeff() < 0.0 || x.maxCoeff() > 1.0)
    throw std::invalid_argument("theory: scene entries must lie in [0, 1]");
  const auto n = static_cast<double>(x.size());
  return 2.0 * n * x.sum() / total_photons;
}

TheoryPrediction predict(MaskFamily basis, const NoiseModel& noise, Eigen::Index pixel_count,
                         double total_photons, const Eigen::VectorXd& x) {
  TheoryPrediction prediction;
  prediction.basis = basis;
  prediction.noise = noise;
  const auto n = static_cast<double>(pixel_count);
  if (basis == MaskFamily::Raster && noise.is_gaussian()) {
    prediction.per_pixel_variance =
        Eigen::VectorXd::Constant(1, predict_raster_gaussian(pixel_count, noise.sigma, total_photons));
    prediction.trace = prediction.per_pixel_variance[0] * n;
  } else if (basis == MaskFamily::Hadamard && noise.is_gaussian()) {
    prediction.per_pixel_variance =
        Eigen::VectorXd::Constant(1, predict_hadamard_gaussian(pixel_count, noise.sigma, total_photons));
    prediction.trace = prediction.per_pixel_variance[0] * n;
    prediction.assumed_rail_mode = RailMode::DualOneSensor;
  } else if (basis == MaskFamily::Raster && noise.is_poisson()) {
    prediction.per_pixel_variance = predict_raster_poisson(x, total_photons);
    prediction.trace = prediction.per_pixel_variance.sum();
  } else if (basis == MaskFamily::Hadamard && noise.is_poisson()) {
    prediction.per_pixel_variance =
        Eigen::VectorXd::Constant(1, predict_hadamard_poisson(x, total_photons));
    prediction.trace = prediction.per_pixel_variance[0] * n;
    prediction.assumed_rail_mode = RailMode::DualOneSensor;
  } else {
    throw std::invalid_argument("theory: no closed form for this (basis, noise) pair");
  }
  return prediction;
}

Eigen::MatrixXd propagate_covariance(const Eigen::MatrixXd& masks,
                                     const Eigen::VectorXd& count_variance, double lambda) {
  if (masks.rows() != masks.cols()) throw std::invalid_argument("propagate_covariance: masks must be square");
  if (count_variance.size() != masks.rows())
    throw std::invalid_argument("propagate_covariance: variance length mismatch");
  require_positive(lambda, "lambda");
  const Eigen::MatrixXd inverse = masks.partialPivLu().inverse();
  return inverse * count_variance.asDiagonal() * inverse.transpose() / (lambda * lambda);
}

}  // namespace spc
