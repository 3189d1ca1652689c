#pragma once

#include <cstdint>
#include <string_view>

#include <Eigen/Dense>

#include "spc/data.hpp"
#include "spc/rng.hpp"

namespace spc {

enum class MaskFamily { Raster, Impulse, Hadamard, BinaryRandom, TruncatedHadamard, Pca, Learned };

/// How signed masks reach the detector. SinglePositive rejects negative
/// entries; the dual modes split each mask into its positive and negative
/// parts, measured either by two detectors at once or by one detector in
/// alternation.
enum class RailMode { SinglePositive, DualTwoSensors, DualOneSensor };

const char* to_string(MaskFamily family);
const char* to_string(RailMode mode);
MaskFamily mask_family_from_string(std::string_view name);
RailMode rail_mode_from_string(std::string_view name);

/// Source flux [photons/s] integrated over a total exposure [s].
struct PhotonBudget {
  double flux = 0.0;
  double exposure = 0.0;

  PhotonBudget(double flux_photons_per_second, double exposure_seconds);
  static PhotonBudget total_photons(double total) { return {total, 1.0}; }

  double total() const { return flux * exposure; }
};

/// A family of sensing masks. Rows are individual masks; after generation or
/// normalize_masks every row has unit max-abs and row_max carries the scale
/// that was divided out. exposure_scale multiplies the effective photon
/// budget (Impulse sets it to the pixel count, everything else to 1).
struct MaskSet {
  Eigen::MatrixXd matrix;   // mask_count x pixel_count
  MaskFamily family = MaskFamily::Learned;
  Eigen::VectorXd row_max;  // v_k, max-abs of each row before rescaling
  double exposure_scale = 1.0;

  Eigen::Index mask_count() const { return matrix.rows(); }
  Eigen::Index pixel_count() const { return matrix.cols(); }
};

/// Elementwise positive/negative parts with disjoint support;
/// positive - negative reproduces the source exactly.
struct DualRailPair {
  Eigen::MatrixXd positive;
  Eigen::MatrixXd negative;
};

/// Principal-component masks plus what the downstream classifier needs: the
/// training mean (for input centering) and the eigenvalue spectrum.
struct PcaMasks {
  MaskSet masks;
  Eigen::VectorXd mean;
  Eigen::VectorXd eigenvalues;  // descending, one per returned component
  bool rank_deficient = false;
};

MaskSet raster(Eigen::Index pixel_count);
MaskSet impulse(Eigen::Index pixel_count);
MaskSet hadamard(Eigen::Index pixel_count);
MaskSet truncated_hadamard(Eigen::Index pixel_count, Eigen::Index mask_count);
MaskSet binary_random(Eigen::Index pixel_count, Eigen::Index mask_count, std::uint64_t seed,
                      double open_probability = 0.5);
PcaMasks pca_masks(const LabeledDataset& data, Eigen::Index mask_count);

/// Sylvester construction in natural order; entries are exactly +-1.
Eigen::MatrixXi sylvester_hadamard(Eigen::Index n);
/// Rows reordered so sign-change counts run 0 .. n-1.
Eigen::MatrixXi sequency_hadamard(Eigen::Index n);

template <typename Derived>
Eigen::Index sign_change_count(const Eigen::MatrixBase<Derived>& row) {
  Eigen::Index changes = 0;
  for (Eigen::Index j = 1; j < row.size(); ++j)
    if ((row[j] > 0) != (row[j - 1] > 0)) ++changes;
  return changes;
}

/// Rescales every row to unit max-abs, recording the divided-out scale in
/// row_max. Throws std::domain_error on an all-zero row.
MaskSet normalize_masks(MaskSet masks);

DualRailPair dual_rail_split(const Eigen::MatrixXd& matrix);

/// Photons delivered per unit mask transmittance. With per-row dwell
/// proportional to the row's max-abs value v_k, the factor
///
///   lambda = total * exposure_scale / (pixel_count * sum_k v_k)
///
/// guarantees the detected photon count can never exceed the budget for any
/// scene in [0,1]^N. DualOneSensor halves lambda: the lone detector spends
/// one dwell slot per rail for every mask.
double photon_distribution_factor(const MaskSet& masks, const PhotonBudget& budget, RailMode mode);

/// Same factor for a bare matrix (used by the trainable scanner, whose masks
/// are not wrapped in a MaskSet).
double photon_distribution_factor(const Eigen::MatrixXd& matrix, double exposure_scale,
                                  const PhotonBudget& budget, RailMode mode);

/// SinglePositive for nonnegative mask sets, DualOneSensor otherwise.
RailMode default_rail_mode(const MaskSet& masks);

}  // namespace spc
