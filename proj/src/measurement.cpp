#include "spc/measurement.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <thread>

namespace spc {

SceneVector SceneVector::from_vector(Eigen::VectorXd x) {
  if (x.size() < 1) throw std::invalid_argument("scene: must have at least one pixel");
  if (x.minCoeff() < 0.0 || x.maxCoeff() > 1.0)
    throw std::invalid_argument("scene: entries must lie in [0, 1]");
  SceneVector scene;
  scene.values = std::move(x);
  const auto root = static_cast<Eigen::Index>(std::llround(std::sqrt(static_cast<double>(scene.values.size()))));
  scene.side = root * root == scene.values.size() ? root : 0;
  return scene;
}

Measurement measure(const SceneVector& scene, const MaskSet& masks, const PhotonBudget& budget,
                    const NoiseModel& noise, RailMode rail_mode, Rng& rng) {
  return measure(scene.values, masks, budget, noise, rail_mode, rng);
}

Measurement measure(const Eigen::VectorXd& x, const MaskSet& masks, const PhotonBudget& budget,
                    const NoiseModel& noise, RailMode rail_mode, Rng& rng) {
  if (x.size() != masks.pixel_count())
    throw std::invalid_argument("measure: scene dimension " + std::to_string(x.size()) +
                                " != mask pixel count " + std::to_string(masks.pixel_count()));
  const bool has_negative = (masks.matrix.array() < 0.0).any();
  if (has_negative && rail_mode == RailMode::SinglePositive)
    throw std::invalid_argument("measure: signed masks require a dual rail mode");

  Measurement measurement;
  measurement.rail_mode = rail_mode;
  measurement.noise = noise;
  measurement.lambda = photon_distribution_factor(masks, budget, rail_mode);

  if (noise.is_noiseless()) {
    measurement.y_tilde = masks.matrix * x;
    return measurement;
  }

  const double lambda = measurement.lambda;
  Eigen::VectorXd counts;
  if (rail_mode == RailMode::SinglePositive) {
    const Eigen::VectorXd rates = lambda * (masks.matrix * x);
    counts = noise.is_poisson() ? sample_counts_poisson(rates, rng)
                                : sample_counts_gaussian(rates, noise.sigma, rng);
  } else {
    const DualRailPair pair = dual_rail_split(masks.matrix);
    if (noise.is_poisson()) {
      counts = sample_counts_dual_rail(pair, x, lambda, rng);
    } else {
      // Each rail is read out independently, so the difference carries twice
      // the Gaussian count variance.
      const Eigen::VectorXd positive =
          sample_counts_gaussian(lambda * (pair.positive * x), noise.sigma, rng);
      const Eigen::VectorXd negative =
          sample_counts_gaussian(lambda * (pair.negative * x), noise.sigma, rng);
      counts = positive - negative;
    }
  }
  measurement.y_tilde = normalize_counts(counts, lambda);
  return measurement;
}

Eigen::VectorXd reconstruct_fullrank(const Measurement& measurement, const MaskSet& masks) {
  if (masks.mask_count() != masks.pixel_count())
    throw std::invalid_argument("reconstruct_fullrank: mask set must be square");
  if (measurement.y_tilde.size() != masks.mask_count())
    throw std::invalid_argument("reconstruct_fullrank: measurement length mismatch");

  if (masks.family == MaskFamily::Hadamard)
    return masks.matrix.transpose() * measurement.y_tilde / static_cast<double>(masks.pixel_count());

  const Eigen::PartialPivLU<Eigen::MatrixXd> lu(masks.matrix);
  const double rcond = lu.rcond();
  if (!(rcond > 16.0 * std::numeric_limits<double>::epsilon())) {
    char message[128];
    std::snprintf(message, sizeof message,
                  "reconstruct_fullrank: mask matrix is numerically singular (condition ~ %.3g)",
                  rcond > 0.0 ? 1.0 / rcond : std::numeric_limits<double>::infinity());
    throw std::runtime_error(message);
  }
  return lu.solve(measurement.y_tilde);
}

std::vector<MseEntry> empirical_mse(const MaskSet& masks, const Eigen::VectorXd& x,
                                    const std::vector<double>& budgets, int trials,
                                    const NoiseModel& noise, RailMode rail_mode, RngStream base,
                                    int threads) {
  if (trials < 2) throw std::invalid_argument("empirical_mse: need at least 2 trials");
  const auto n = static_cast<double>(masks.pixel_count());

  std::vector<MseEntry> entries;
  entries.reserve(budgets.size());
  for (std::size_t b = 0; b < budgets.size(); ++b) {
    const PhotonBudget budget = PhotonBudget::total_photons(budgets[b]);
    std::vector<double> per_trial(static_cast<std::size_t>(trials));

    auto run_range = [&](int begin, int end) {
      for (int t = begin; t < end; ++t) {
        Rng rng(RngStream{base.seed, base.stream + b * static_cast<std::size_t>(trials) +
                                         static_cast<std::size_t>(t)});
        const Measurement measurement = measure(x, masks, budget, noise, rail_mode, rng);
        const Eigen::VectorXd estimate = reconstruct_fullrank(measurement, masks);
        per_trial[static_cast<std::size_t>(t)] = (estimate - x).squaredNorm() / n;
      }
    };

    if (threads <= 1) {
      run_range(0, trials);
    } else {
      std::vector<std::thread> pool;
      const int chunk = (trials + threads - 1) / threads;
      for (int w = 0; w < threads; ++w) {
        const int begin = w * chunk;
        const int end = std::min(trials, begin + chunk);
        if (begin < end) pool.emplace_back(run_range, begin, end);
      }
      for (auto& worker : pool) worker.join();
    }

    // Ordered reduction keeps the result independent of the thread count.
    double mean = 0.0;
    for (double value : per_trial) mean += value;
    mean /= static_cast<double>(trials);
    double variance = 0.0;
    for (double value : per_trial) variance += (value - mean) * (value - mean);
    variance /= static_cast<double>(trials - 1);

    MseEntry entry;
    entry.photons = budgets[b];
    entry.mse_mean = mean;
    entry.mse_stderr = std::sqrt(variance / static_cast<double>(trials));
    entry.trials = trials;
    entries.push_back(entry);
  }
  return entries;
}

void write_mse_csv(const std::filesystem::path& path, const MaskSet& masks, const NoiseModel& noise,
                   RailMode rail_mode, const std::vector<MseEntry>& entries) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << "family,noise,rail_mode,total_photons,trial_count,mse_mean,mse_stderr\n";
  char line[256];
  for (const MseEntry& entry : entries) {
    std::snprintf(line, sizeof line, "%s,%s,%s,%.17g,%d,%.17g,%.17g\n", to_string(masks.family),
                  to_string(noise.kind), to_string(rail_mode), entry.photons, entry.trials,
                  entry.mse_mean, entry.mse_stderr);
    out << line;
  }
}

}  // namespace spc
