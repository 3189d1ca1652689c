#include "spc/masks.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>

namespace spc {

namespace {

bool is_power_of_two(Eigen::Index n) { return n >= 1 && (n & (n - 1)) == 0; }

void require_positive_dimension(Eigen::Index n, const char* what) {
  if (n < 1) throw std::invalid_argument(std::string(what) + ": pixel count must be at least 1");
}

MaskSet identity_masks(Eigen::Index n, MaskFamily family, double exposure_scale) {
  MaskSet masks;
  masks.matrix = Eigen::MatrixXd::Identity(n, n);
  masks.family = family;
  masks.row_max = Eigen::VectorXd::Ones(n);
  masks.exposure_scale = exposure_scale;
  return masks;
}

}  // namespace

const char* to_string(MaskFamily family) {
  switch (family) {
    case MaskFamily::Raster: return "raster";
    case MaskFamily::Impulse: return "impulse";
    case MaskFamily::Hadamard: return "hadamard";
    case MaskFamily::BinaryRandom: return "binary-random";
    case MaskFamily::TruncatedHadamard: return "truncated-hadamard";
    case MaskFamily::Pca: return "pca";
    case MaskFamily::Learned: return "learned";
  }
  return "unknown";
}

const char* to_string(RailMode mode) {
  switch (mode) {
    case RailMode::SinglePositive: return "single";
    case RailMode::DualTwoSensors: return "dual-two-sensors";
    case RailMode::DualOneSensor: return "dual-one-sensor";
  }
  return "unknown";
}

MaskFamily mask_family_from_string(std::string_view name) {
  if (name == "raster") return MaskFamily::Raster;
  if (name == "impulse") return MaskFamily::Impulse;
  if (name == "hadamard") return MaskFamily::Hadamard;
  if (name == "binary-random") return MaskFamily::BinaryRandom;
  if (name == "truncated-hadamard") return MaskFamily::TruncatedHadamard;
  if (name == "pca") return MaskFamily::Pca;
  if (name == "learned") return MaskFamily::Learned;
  throw std::invalid_argument("unknown mask family '" + std::string(name) + "'");
}

RailMode rail_mode_from_string(std::string_view name) {
  if (name == "single") return RailMode::SinglePositive;
  if (name == "dual-two-sensors" || name == "dual2") return RailMode::DualTwoSensors;
  if (name == "dual-one-sensor" || name == "dual1") return RailMode::DualOneSensor;
  throw std::invalid_argument("unknown rail mode '" + std::string(name) + "'");
}

PhotonBudget::PhotonBudget(double flux_photons_per_second, double exposure_seconds)
    : flux(flux_photons_per_second), exposure(exposure_seconds) {
  if (!(flux > 0.0) || !(exposure > 0.0))
    throw std::invalid_argument("photon budget: flux and exposure must be strictly positive");
}

MaskSet raster(Eigen::Index pixel_count) {
  require_positive_dimension(pixel_count, "raster");
  return identity_masks(pixel_count, MaskFamily::Raster, 1.0);
}

MaskSet impulse(Eigen::Index pixel_count) {
  require_positive_dimension(pixel_count, "impulse");
  // A parallel sensor array: same identity pattern, each pixel integrating
  // pixel_count times the raster dwell.
  return identity_masks(pixel_count, MaskFamily::Impulse, static_cast<double>(pixel_count));
}

Eigen::MatrixXi sylvester_hadamard(Eigen::Index n) {
  if (!is_power_of_two(n))
    throw std::invalid_argument("hadamard: size " + std::to_string(n) + " is not a power of two");
  Eigen::MatrixXi h(1, 1);
  h(0, 0) = 1;
  for (Eigen::Index size = 1; size < n; size *= 2) {
    Eigen::MatrixXi next(2 * size, 2 * size);
    next.topLeftCorner(size, size) = h;
    next.topRightCorner(size, size) = h;
    next.bottomLeftCorner(size, size) = h;
    next.bottomRightCorner(size, size) = -h;
    h.swap(next);
  }
  return h;
}

Eigen::MatrixXi sequency_hadamard(Eigen::Index n) {
  const Eigen::MatrixXi natural = sylvester_hadamard(n);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    return sign_change_count(natural.row(a)) < sign_change_count(natural.row(b));
  });
  Eigen::MatrixXi ordered(n, n);
  for (Eigen::Index i = 0; i < n; ++i) ordered.row(i) = natural.row(order[static_cast<std::size_t>(i)]);
  return ordered;
}

MaskSet hadamard(Eigen::Index pixel_count) {
  MaskSet masks = truncated_hadamard(pixel_count, pixel_count);
  masks.family = MaskFamily::Hadamard;
  return masks;
}

MaskSet truncated_hadamard(Eigen::Index pixel_count, Eigen::Index mask_count) {
  if (!is_power_of_two(pixel_count))
    throw std::invalid_argument("truncated_hadamard: size " + std::to_string(pixel_count) +
                                " is not a power of two");
  if (mask_count < 1 || mask_count > pixel_count)
    throw std::invalid_argument("truncated_hadamard: mask count " + std::to_string(mask_count) +
                                " outside [1, " + std::to_string(pixel_count) + "]");
  MaskSet masks;
  masks.matrix = sequency_hadamard(pixel_count).topRows(mask_count).cast<double>();
  masks.family = MaskFamily::TruncatedHadamard;
  masks.row_max = Eigen::VectorXd::Ones(mask_count);
  return masks;
}

MaskSet binary_random(Eigen::Index pixel_count, Eigen::Index mask_count, std::uint64_t seed,
                      double open_probability) {
  require_positive_dimension(pixel_count, "binary_random");
  require_positive_dimension(mask_count, "binary_random");
  if (!(open_probability > 0.0 && open_probability < 1.0))
    throw std::invalid_argument("binary_random: open probability must lie strictly inside (0, 1)");

  Rng rng(seed, 0);
  MaskSet masks;
  masks.matrix.resize(mask_count, pixel_count);
  for (Eigen::Index k = 0; k < mask_count; ++k) {
    do {
      for (Eigen::Index j = 0; j < pixel_count; ++j)
        masks.matrix(k, j) = rng.uniform() < open_probability ? 1.0 : 0.0;
    } while (masks.matrix.row(k).maxCoeff() == 0.0);  // an all-closed mask measures nothing
  }
  masks.family = MaskFamily::BinaryRandom;
  masks.row_max = Eigen::VectorXd::Ones(mask_count);
  return masks;
}

PcaMasks pca_masks(const LabeledDataset& data, Eigen::Index mask_count) {
  const Eigen::Index sample_count = data.size();
  const Eigen::Index dimension = data.dimension();
  if (mask_count < 1 || mask_count > dimension)
    throw std::invalid_argument("pca_masks: mask count outside [1, dimension]");
  if (sample_count < mask_count)
    throw std::invalid_argument("pca_masks: need at least as many samples as masks");

  PcaMasks result;
  result.mean = data.samples.colwise().mean();
  Eigen::MatrixXd centered = data.samples.rowwise() - result.mean.transpose();
  const double denom = sample_count > 1 ? static_cast<double>(sample_count - 1) : 1.0;
  const Eigen::MatrixXd covariance = centered.transpose() * centered / denom;

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(covariance);
  if (solver.info() != Eigen::Success) throw std::runtime_error("pca_masks: eigendecomposition failed");

  // Eigen returns ascending eigenvalues; walk from the top.
  const Eigen::VectorXd& values = solver.eigenvalues();
  const double tolerance = std::max(values.cwiseAbs().maxCoeff(), 0.0) *
                           static_cast<double>(dimension) * std::numeric_limits<double>::epsilon();
  Eigen::Index available = 0;
  while (available < mask_count && values[dimension - 1 - available] > tolerance) ++available;
  result.rank_deficient = available < mask_count;
  if (available == 0)
    throw std::runtime_error("pca_masks: covariance has no positive spectrum (constant data?)");

  result.eigenvalues.resize(available);
  MaskSet masks;
  masks.matrix.resize(available, dimension);
  for (Eigen::Index k = 0; k < available; ++k) {
    const Eigen::Index source = dimension - 1 - k;
    result.eigenvalues[k] = values[source];
    Eigen::VectorXd component = solver.eigenvectors().col(source);
    // Eigenvector sign is arbitrary; fix it so results are reproducible.
    Eigen::Index peak = 0;
    component.cwiseAbs().maxCoeff(&peak);
    if (component[peak] < 0.0) component = -component;
    masks.matrix.row(k) = component.transpose();
  }
  masks.family = MaskFamily::Pca;
  result.masks = normalize_masks(std::move(masks));
  return result;
}

MaskSet normalize_masks(MaskSet masks) {
  const Eigen::Index m = masks.mask_count();
  masks.row_max.resize(m);
  for (Eigen::Index k = 0; k < m; ++k) {
    const double peak = masks.matrix.row(k).cwiseAbs().maxCoeff();
    if (peak == 0.0)
      throw std::domain_error("normalize_masks: row " + std::to_string(k) + " is all zeros");
    masks.row_max[k] = peak;
    masks.matrix.row(k) /= peak;
  }
  return masks;
}

DualRailPair dual_rail_split(const Eigen::MatrixXd& matrix) {
  return {matrix.cwiseMax(0.0), (-matrix).cwiseMax(0.0)};
}

double photon_distribution_factor(const MaskSet& masks, const PhotonBudget& budget, RailMode mode) {
  return photon_distribution_factor(masks.matrix, masks.exposure_scale, budget, mode);
}

double photon_distribution_factor(const Eigen::MatrixXd& matrix, double exposure_scale,
                                  const PhotonBudget& budget, RailMode mode) {
  const double row_max_sum = matrix.cwiseAbs().rowwise().maxCoeff().sum();
  if (!(row_max_sum > 0.0))
    throw std::domain_error("photon_distribution_factor: degenerate mask set (zero row maxima)");
  const double rail_slots = mode == RailMode::DualOneSensor ? 2.0 : 1.0;
  const double denominator = static_cast<double>(matrix.cols()) * row_max_sum * rail_slots;
  return budget.total() * exposure_scale / denominator;
}

RailMode default_rail_mode(const MaskSet& masks) {
  return (masks.matrix.array() < 0.0).any() ? RailMode::DualOneSensor : RailMode::SinglePositive;
}

}  // namespace spc
