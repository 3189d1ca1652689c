#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "spc/data.hpp"
#include "spc/nn.hpp"

namespace spc {

struct TrainConfig {
  double learning_rate = 5e-3;
  int batch_size = 128;
  int max_epochs = 200;
  double dropout_rate = 0.2;
  std::uint64_t seed = 0;
  OptimizerKind optimizer = OptimizerKind::Adam;
  int patience = 20;  // epochs without validation improvement before stopping
  bool verbose = false;

  void validate() const;
};

enum class MaskInit { Identity, Hadamard01, Random, Pca };
MaskInit mask_init_from_string(std::string_view name);
const char* to_string(MaskInit init);

/// Initial scanner masks: leading rows of the identity, of the {0,1}
/// Hadamard (sequency order), uniform random transmittances, or principal
/// components of `data`.
Eigen::MatrixXd initial_masks(MaskInit init, Eigen::Index mask_count, Eigen::Index pixel_count,
                              std::uint64_t seed, const LabeledDataset* data = nullptr);

struct EpochStats {
  int epoch = 0;
  double train_loss = 0.0;
  double validation_accuracy = 0.0;
};

struct ClassifierRun {
  SensingNet net;  // best-validation snapshot
  std::vector<EpochStats> curve;
  double best_validation_accuracy = 0.0;
  int best_epoch = 0;
};

/// Trains the dense head on fixed masks. Scanner noise is redrawn for every
/// batch; validation runs the true samplers each epoch and the
/// best-validation weights are returned.
ClassifierRun train_classifier(SensingNet net, const LabeledDataset& train,
                               const LabeledDataset& validation, const TrainConfig& config);

/// Joint mask + head training; the photon factor is refreshed from the
/// current masks every step and excluded from the gradients.
ClassifierRun train_onn(SensingNet net, const LabeledDataset& train,
                        const LabeledDataset& validation, const TrainConfig& config);

/// Mask-convergence protocol: a square scanner feeding a bias-free linear
/// decoder, trained to reproduce uniform-random patterns that are regenerated
/// `rounds` times, under a fixed total photon budget.
struct ReconstructorProtocol {
  Eigen::Index pixel_count = 64;
  int patterns_per_round = 2048;
  int rounds = 10;
  int epochs_per_round = 12;
  double total_photons = 100.0;
  NoiseModel noise = NoiseModel::poisson();
  RailMode rail_mode = RailMode::DualOneSensor;
  MaskInit init = MaskInit::Identity;
  // Learning-rate multiplier applied after each round; < 1 anneals the very
  // noisy low-photon gradient so the loss actually settles.
  double lr_decay_per_round = 1.0;
};

struct ReconstructorRun {
  Eigen::MatrixXd masks;
  SensingNet net;                          // scanner + decoder as trained
  std::vector<double> loss_trace;          // mean batch loss per epoch
  std::vector<Eigen::MatrixXd> snapshots;  // masks at the end of each round
};

ReconstructorRun train_reconstructor(const ReconstructorProtocol& protocol, const TrainConfig& config);

/// Fraction of argmax-correct predictions, true samplers, fixed stream.
double evaluate_accuracy(const SensingNet& net, const LabeledDataset& set, RngStream stream);

/// Mask-shape diagnostics for the convergence experiment.
double mean_abs_offdiagonal(const Eigen::MatrixXd& masks);
double offdiagonal_to_diagonal_ratio(const Eigen::MatrixXd& masks);

struct GradientCheckEntry {
  std::string parameter;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradientCheckReport {
  double max_rel_error = 0.0;
  bool pass = false;
  std::vector<GradientCheckEntry> worst;  // most-offending parameters, sorted
};

/// Central-difference check of every parameter (masks + head) at fixed noise
/// draws, dropout pattern, and photon factor. Only intended for small nets
/// (pixel count <= 16).
GradientCheckReport gradient_check(const SensingNet& net, const Eigen::MatrixXd& batch,
                                   const std::vector<int>& labels, double tolerance,
                                   std::uint64_t seed);

/// Checkpoint container: magic "SPCN", version, layer dims, little-endian
/// f64 weights; config and metric history go to a JSON sidecar at
/// path + ".json".
void save_checkpoint(const std::filesystem::path& path, const SensingNet& net,
                     const nlohmann::json& sidecar);
SensingNet load_checkpoint(const std::filesystem::path& path);

}  // namespace spc
