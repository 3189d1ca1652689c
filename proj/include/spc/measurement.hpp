#pragma once

#include <filesystem>
#include <vector>

#include <Eigen/Dense>

#include "spc/masks.hpp"
#include "spc/noise.hpp"
#include "spc/rng.hpp"

namespace spc {

/// A scene held as a unit-range vector; side is the edge length when the
/// scene is a square image, 0 otherwise.
struct SceneVector {
  Eigen::VectorXd values;
  Eigen::Index side = 0;

  static SceneVector from_vector(Eigen::VectorXd x);
  Eigen::Index size() const { return values.size(); }
};

/// Normalized noisy counts together with the photon factor and noise source
/// that produced them.
struct Measurement {
  Eigen::VectorXd y_tilde;
  double lambda = 0.0;
  RailMode rail_mode = RailMode::SinglePositive;
  NoiseModel noise;
};

/// End-to-end forward model: photon factor, optional dual-rail split, count
/// sampling under the noise model, recombination, and normalization by
/// lambda. Noiseless input returns exactly the linear projection.
Measurement measure(const Eigen::VectorXd& x, const MaskSet& masks, const PhotonBudget& budget,
                    const NoiseModel& noise, RailMode rail_mode, Rng& rng);
Measurement measure(const SceneVector& scene, const MaskSet& masks, const PhotonBudget& budget,
                    const NoiseModel& noise, RailMode rail_mode, Rng& rng);

/// Inverts a square mask set: the Hadamard family uses the exact transpose/N
/// inverse, everything else pivoted LU. Throws std::runtime_error with a
/// condition estimate when the matrix is numerically singular.
Eigen::VectorXd reconstruct_fullrank(const Measurement& measurement, const MaskSet& masks);

struct MseEntry {
  double photons = 0.0;
  double mse_mean = 0.0;    // per-pixel: |x_hat - x|^2 / N averaged over trials
  double mse_stderr = 0.0;
  int trials = 0;
};

/// Monte Carlo measure-then-reconstruct sweep over photon budgets. Trials map
/// to RngStream ids (base.stream + budget_index * trials + trial), so results
/// are seed-stable for any thread count.
std::vector<MseEntry> empirical_mse(const MaskSet& masks, const Eigen::VectorXd& x,
                                    const std::vector<double>& budgets, int trials,
                                    const NoiseModel& noise, RailMode rail_mode, RngStream base,
                                    int threads = 1);

/// Columns: family, noise, rail_mode, total_photons, trial_count, mse_mean, mse_stderr.
void write_mse_csv(const std::filesystem::path& path, const MaskSet& masks, const NoiseModel& noise,
                   RailMode rail_mode, const std::vector<MseEntry>& entries);

}  // namespace spc
