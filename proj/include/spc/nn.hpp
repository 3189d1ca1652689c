#pragma once

#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "spc/masks.hpp"
#include "spc/noise.hpp"
#include "spc/rng.hpp"

namespace spc {

enum class Objective { CrossEntropy, MeanSquaredError };
enum class OptimizerKind { Adam, Sgd };

struct DenseLayer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;    // empty for bias-free layers

  bool has_bias() const { return bias.size() > 0; }
};

/// Trainable scanner masks joined to a dense head. The scanner turns a batch
/// of scenes into normalized photon measurements under the configured noise
/// model; the head is either the 40/128 classifier or a single linear
/// reconstruction layer.
///
/// The photon factor is recomputed from the current masks on every forward
/// pass and is held constant in backpropagation.
struct SensingNet {
  Eigen::MatrixXd scanner_masks;  // mask_count x pixel_count, unconstrained
  NoiseModel noise;
  PhotonBudget budget{1.0, 1.0};
  RailMode rail_mode = RailMode::DualOneSensor;
  double exposure_scale = 1.0;

  std::vector<DenseLayer> layers;  // all but the last are hidden (dropout + relu)
  Objective objective = Objective::CrossEntropy;
  double dropout_rate = 0.2;
  Eigen::VectorXd training_mean;  // image-space mean; empty disables centering

  Eigen::Index pixel_count() const { return scanner_masks.cols(); }
  Eigen::Index mask_count() const { return scanner_masks.rows(); }
  Eigen::Index output_count() const { return layers.back().weight.rows(); }
  Eigen::Index hidden_count() const { return static_cast<Eigen::Index>(layers.size()) - 1; }

  double lambda() const {
    return photon_distribution_factor(scanner_masks, exposure_scale, budget, rail_mode);
  }

  /// Measurement-space offset subtracted from the head input: masks * mean.
  Eigen::VectorXd center_offset() const;

  static SensingNet classifier(Eigen::MatrixXd masks, Eigen::Index class_count, NoiseModel noise,
                               PhotonBudget budget, RailMode rail_mode, std::uint64_t init_seed,
                               const std::vector<Eigen::Index>& hidden = {40, 128});
  static SensingNet reconstructor(Eigen::MatrixXd masks, NoiseModel noise, PhotonBudget budget,
                                  RailMode rail_mode);
};

/// Randomness consumed by one differentiable pass, kept separate so the same
/// draws can be replayed against finite differences.
struct NoiseDraws {
  Eigen::MatrixXd eps_pos;                    // batch x masks
  Eigen::MatrixXd eps_neg;                    // Poisson surrogate only
  std::vector<Eigen::MatrixXd> dropout_keep;  // 0/1 per hidden layer, training only
};

NoiseDraws draw_noise(const SensingNet& net, Eigen::Index batch_size, bool training, Rng& rng);

struct ForwardCache {
  double lambda = 0.0;
  bool training = false;
  double dropout_scale = 1.0;           // 1/(1-p) when dropout was applied
  Eigen::MatrixXd input;                // batch x pixels
  Eigen::MatrixXd y;                    // batch x masks, normalized measurement
  Eigen::MatrixXd gain_pos, gain_neg;   // surrogate gain factors (Poisson training)
  Eigen::MatrixXd head_input;           // y minus centering offset
  std::vector<Eigen::MatrixXd> act;     // per hidden layer, after dropout + relu
  Eigen::MatrixXd output;               // logits or reconstruction
};

/// Differentiable pass. Training uses the reparameterized noise from
/// `draws` (Gaussian directly, Poisson via the matched-variance surrogate)
/// and applies dropout; evaluation-style calls skip both. `lambda_override`
/// pins the photon factor, e.g. while finite-differencing mask entries.
ForwardCache forward(const SensingNet& net, const Eigen::MatrixXd& batch, const NoiseDraws& draws,
                     bool training, std::optional<double> lambda_override = {});

/// Non-differentiable pass with the true samplers (exact Poisson counts /
/// Gaussian counts); dropout off.
Eigen::MatrixXd evaluate_outputs(const SensingNet& net, const Eigen::MatrixXd& batch, Rng& rng);

double loss_value(const SensingNet& net, const ForwardCache& cache, const std::vector<int>& labels);
double loss_value(const SensingNet& net, const ForwardCache& cache, const Eigen::MatrixXd& targets);

struct Gradients {
  Eigen::MatrixXd scanner_masks;
  std::vector<DenseLayer> layers;
};

Gradients backward(const SensingNet& net, const ForwardCache& cache, const std::vector<int>& labels);
Gradients backward(const SensingNet& net, const ForwardCache& cache, const Eigen::MatrixXd& targets);

/// Adam (0.9 / 0.999) or plain SGD over the head and, optionally, the masks.
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double learning_rate);

  void step(SensingNet& net, const Gradients& grads, bool update_masks);
  void set_learning_rate(double learning_rate) { learning_rate_ = learning_rate; }

 private:
  struct Moments {
    Eigen::ArrayXXd first, second;
  };

  void adam_update(Eigen::Ref<Eigen::MatrixXd> value, const Eigen::MatrixXd& grad, Moments& moments);

  OptimizerKind kind_;
  double learning_rate_;
  long step_count_ = 0;
  Moments mask_moments_;
  std::vector<Moments> weight_moments_;
  std::vector<Moments> bias_moments_;
  bool initialized_ = false;
};

}  // namespace spc
