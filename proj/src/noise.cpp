#include "spc/noise.hpp"

#include <stdexcept>
#include <string>

namespace spc {

NoiseModel NoiseModel::gaussian(double sigma) {
  if (!(sigma > 0.0)) throw std::invalid_argument("gaussian noise: sigma must be positive");
  return {Kind::Gaussian, sigma};
}

const char* to_string(NoiseModel::Kind kind) {
  switch (kind) {
    case NoiseModel::Kind::Noiseless: return "noiseless";
    case NoiseModel::Kind::Gaussian: return "gaussian";
    case NoiseModel::Kind::Poisson: return "poisson";
  }
  return "unknown";
}

Eigen::VectorXd sample_counts_gaussian(const Eigen::VectorXd& rates, double sigma, Rng& rng) {
  if (!(sigma > 0.0)) throw std::invalid_argument("sample_counts_gaussian: sigma must be positive");
  Eigen::VectorXd counts(rates.size());
  for (Eigen::Index k = 0; k < rates.size(); ++k) counts[k] = rates[k] + sigma * rng.normal();
  return counts;
}

Eigen::VectorXd sample_counts_poisson(const Eigen::VectorXd& rates, Rng& rng) {
  Eigen::VectorXd counts(rates.size());
  for (Eigen::Index k = 0; k < rates.size(); ++k) {
    if (rates[k] < 0.0)
      throw std::domain_error("sample_counts_poisson: negative rate at index " + std::to_string(k) +
                              " (mask needs a dual-rail split)");
    counts[k] = static_cast<double>(rng.poisson(rates[k]));
  }
  return counts;
}

Eigen::VectorXd sample_counts_dual_rail(const DualRailPair& pair, const Eigen::VectorXd& x,
                                        double lambda, Rng& rng) {
  if (pair.positive.cols() != x.size())
    throw std::invalid_argument("sample_counts_dual_rail: scene dimension mismatch");
  const Eigen::VectorXd positive = sample_counts_poisson(lambda * (pair.positive * x), rng);
  const Eigen::VectorXd negative = sample_counts_poisson(lambda * (pair.negative * x), rng);
  return positive - negative;
}

Eigen::VectorXd normalize_counts(const Eigen::VectorXd& counts, double lambda) {
  if (!(lambda > 0.0)) throw std::invalid_argument("normalize_counts: lambda must be positive");
  return counts / lambda;
}

SurrogateSample surrogate_poisson(const Eigen::VectorXd& rates, double lambda,
                                  const Eigen::VectorXd& eps) {
  if (rates.size() != eps.size())
    throw std::invalid_argument("surrogate_poisson: rates/eps size mismatch");
  if (!(lambda > 0.0)) throw std::invalid_argument("surrogate_poisson: lambda must be positive");
  SurrogateSample sample;
  sample.y = (rates.array() + rates.array().sqrt() * eps.array()).matrix() / lambda;
  sample.gain =
      (1.0 + eps.array() / (2.0 * rates.array().max(kSurrogateRateFloor).sqrt())).matrix();
  return sample;
}

Eigen::MatrixXd surrogate_poisson_counts(const Eigen::MatrixXd& rates, const Eigen::MatrixXd& eps) {
  return (rates.array() + rates.array().sqrt() * eps.array()).matrix();
}

Eigen::MatrixXd surrogate_poisson_gain(const Eigen::MatrixXd& rates, const Eigen::MatrixXd& eps) {
  return (1.0 + eps.array() / (2.0 * rates.array().max(kSurrogateRateFloor).sqrt())).matrix();
}

}  // namespace spc
