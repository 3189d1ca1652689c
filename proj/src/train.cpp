#include "spc/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "spc/binary_io.hpp"
#include "spc/masks.hpp"

namespace spc {

namespace {

// Distinct stream-id bases so the shuffle, batch-noise, evaluation, and
// initialization sequences never collide.
constexpr std::uint64_t kShuffleStream = 1'000'000;
constexpr std::uint64_t kBatchStream = 2'000'000;
constexpr std::uint64_t kEvalStream = 3'000'000;

std::vector<Eigen::Index> shuffled_indices(Eigen::Index n, Rng& rng) {
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  for (Eigen::Index i = n - 1; i > 0; --i)
    std::swap(order[static_cast<std::size_t>(i)],
              order[rng.uniform_index(static_cast<std::uint64_t>(i) + 1)]);
  return order;
}

double cross_entropy_with_grad(const Eigen::MatrixXd& logits, const std::vector<int>& labels,
                               Eigen::MatrixXd* grad) {
  const Eigen::Index batch = logits.rows();
  if (grad != nullptr) grad->resize(batch, logits.cols());
  double total = 0.0;
  for (Eigen::Index b = 0; b < batch; ++b) {
    const double peak = logits.row(b).maxCoeff();
    const Eigen::ArrayXd shifted = (logits.row(b).array() - peak).exp();
    const double sum = shifted.sum();
    total += std::log(sum) + peak - logits(b, labels[static_cast<std::size_t>(b)]);
    if (grad != nullptr) {
      grad->row(b) = (shifted / sum).matrix().transpose();
      (*grad)(b, labels[static_cast<std::size_t>(b)]) -= 1.0;
    }
  }
  if (grad != nullptr) *grad /= static_cast<double>(batch);
  return total / static_cast<double>(batch);
}

// Head-only pass over precomputed measurements; avoids re-running the scanner
// projection when the masks are frozen.
struct HeadCache {
  Eigen::MatrixXd input;
  std::vector<Eigen::MatrixXd> act;
  Eigen::MatrixXd output;
  double dropout_scale = 1.0;
};

HeadCache head_forward(const SensingNet& net, Eigen::MatrixXd head_input,
                       const std::vector<Eigen::MatrixXd>* dropout_keep) {
  HeadCache cache;
  cache.input = std::move(head_input);
  cache.dropout_scale = dropout_keep != nullptr ? 1.0 / (1.0 - net.dropout_rate) : 1.0;
  Eigen::MatrixXd activation = cache.input;
  for (Eigen::Index h = 0; h < net.hidden_count(); ++h) {
    const DenseLayer& layer = net.layers[static_cast<std::size_t>(h)];
    Eigen::MatrixXd pre = activation * layer.weight.transpose();
    if (layer.has_bias()) pre.rowwise() += layer.bias.transpose();
    if (dropout_keep != nullptr)
      pre.array() *= (*dropout_keep)[static_cast<std::size_t>(h)].array() * cache.dropout_scale;
    cache.act.push_back(pre.cwiseMax(0.0));
    activation = cache.act.back();
  }
  const DenseLayer& out = net.layers.back();
  cache.output = activation * out.weight.transpose();
  if (out.has_bias()) cache.output.rowwise() += out.bias.transpose();
  return cache;
}

std::vector<DenseLayer> head_backward(const SensingNet& net, const HeadCache& cache,
                                      Eigen::MatrixXd d_output) {
  std::vector<DenseLayer> grads(net.layers.size());
  const Eigen::Index hidden = net.hidden_count();
  const Eigen::MatrixXd& last_activation =
      hidden > 0 ? cache.act.back() : cache.input;
  grads.back().weight = d_output.transpose() * last_activation;
  if (net.layers.back().has_bias()) grads.back().bias = d_output.colwise().sum();
  Eigen::MatrixXd d_activation = d_output * net.layers.back().weight;
  for (Eigen::Index h = hidden - 1; h >= 0; --h) {
    const auto index = static_cast<std::size_t>(h);
    Eigen::MatrixXd d_pre =
        (d_activation.array() * (cache.act[index].array() > 0.0).cast<double>()).matrix() *
        cache.dropout_scale;
    const Eigen::MatrixXd& layer_input = h > 0 ? cache.act[index - 1] : cache.input;
    grads[index].weight = d_pre.transpose() * layer_input;
    if (net.layers[index].has_bias()) grads[index].bias = d_pre.colwise().sum();
    if (h > 0) d_activation = d_pre * net.layers[index].weight;
  }
  return grads;
}

// Per-dataset scanner precomputation for frozen masks.
struct ScannerTable {
  Eigen::MatrixXd mean_y;               // X M^T
  Eigen::MatrixXd rates_pos, rates_neg; // lambda X (M+-)^T, Poisson only
};

ScannerTable precompute_scanner(const SensingNet& net, const Eigen::MatrixXd& samples,
                                double lambda) {
  ScannerTable table;
  table.mean_y = samples * net.scanner_masks.transpose();
  if (net.noise.is_poisson()) {
    table.rates_pos = lambda * (samples * net.scanner_masks.cwiseMax(0.0).transpose());
    table.rates_neg = lambda * (samples * (-net.scanner_masks).cwiseMax(0.0).transpose());
  }
  return table;
}

Eigen::MatrixXd gather_rows(const Eigen::MatrixXd& source, const std::vector<Eigen::Index>& order,
                            std::size_t begin, std::size_t end) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(end - begin), source.cols());
  for (std::size_t i = begin; i < end; ++i)
    out.row(static_cast<Eigen::Index>(i - begin)) = source.row(order[i]);
  return out;
}

// Surrogate-noised measurement from precomputed tables.
Eigen::MatrixXd noised_measurement(const SensingNet& net, double lambda,
                                   const Eigen::MatrixXd& mean_y, const Eigen::MatrixXd& rates_pos,
                                   const Eigen::MatrixXd& rates_neg, Rng& rng) {
  if (net.noise.is_noiseless()) return mean_y;
  if (net.noise.is_gaussian()) {
    const double rail_factor = net.rail_mode == RailMode::SinglePositive ? 1.0 : std::sqrt(2.0);
    return mean_y +
           (rail_factor * net.noise.sigma / lambda) * rng.normal_matrix(mean_y.rows(), mean_y.cols());
  }
  const Eigen::MatrixXd eps_pos = rng.normal_matrix(mean_y.rows(), mean_y.cols());
  const Eigen::MatrixXd eps_neg = rng.normal_matrix(mean_y.rows(), mean_y.cols());
  return mean_y + (rates_pos.array().sqrt() * eps_pos.array() -
                   rates_neg.array().sqrt() * eps_neg.array())
                      .matrix() /
                      lambda;
}

// True-sampler measurement from precomputed tables.
Eigen::MatrixXd sampled_measurement(const SensingNet& net, double lambda,
                                    const Eigen::MatrixXd& mean_y, const Eigen::MatrixXd& rates_pos,
                                    const Eigen::MatrixXd& rates_neg, Rng& rng) {
  if (net.noise.is_noiseless()) return mean_y;
  if (net.noise.is_gaussian()) {
    const double rail_factor = net.rail_mode == RailMode::SinglePositive ? 1.0 : std::sqrt(2.0);
    return mean_y +
           (rail_factor * net.noise.sigma / lambda) * rng.normal_matrix(mean_y.rows(), mean_y.cols());
  }
  Eigen::MatrixXd y(mean_y.rows(), mean_y.cols());
  for (Eigen::Index b = 0; b < y.rows(); ++b)
    for (Eigen::Index k = 0; k < y.cols(); ++k)
      y(b, k) =
          static_cast<double>(rng.poisson(rates_pos(b, k)) - rng.poisson(rates_neg(b, k))) / lambda;
  return y;
}

double head_accuracy(const SensingNet& net, const Eigen::MatrixXd& head_input,
                     const std::vector<int>& labels) {
  const HeadCache cache = head_forward(net, head_input, nullptr);
  Eigen::Index correct = 0;
  for (Eigen::Index b = 0; b < cache.output.rows(); ++b) {
    Eigen::Index pick = 0;
    cache.output.row(b).maxCoeff(&pick);
    if (static_cast<int>(pick) == labels[static_cast<std::size_t>(b)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(cache.output.rows());
}

}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw std::invalid_argument("train config: learning rate must be positive");
  if (batch_size < 1) throw std::invalid_argument("train config: batch size must be positive");
  if (max_epochs < 1) throw std::invalid_argument("train config: epochs must be positive");
  if (dropout_rate < 0.0 || dropout_rate >= 1.0)
    throw std::invalid_argument("train config: dropout must lie in [0, 1)");
  if (patience < 1) throw std::invalid_argument("train config: patience must be positive");
}

MaskInit mask_init_from_string(std::string_view name) {
  if (name == "identity") return MaskInit::Identity;
  if (name == "hadamard01") return MaskInit::Hadamard01;
  if (name == "random") return MaskInit::Random;
  if (name == "pca") return MaskInit::Pca;
  throw std::invalid_argument("unknown mask init '" + std::string(name) + "'");
}

const char* to_string(MaskInit init) {
  switch (init) {
    case MaskInit::Identity: return "identity";
    case MaskInit::Hadamard01: return "hadamard01";
    case MaskInit::Random: return "random";
    case MaskInit::Pca: return "pca";
  }
  return "unknown";
}

Eigen::MatrixXd initial_masks(MaskInit init, Eigen::Index mask_count, Eigen::Index pixel_count,
                              std::uint64_t seed, const LabeledDataset* data) {
  if (mask_count < 1 || mask_count > pixel_count)
    throw std::invalid_argument("initial_masks: mask count outside [1, pixel count]");
  switch (init) {
    case MaskInit::Identity:
      return Eigen::MatrixXd::Identity(mask_count, pixel_count);
    case MaskInit::Hadamard01: {
      const Eigen::MatrixXd h = sequency_hadamard(pixel_count).topRows(mask_count).cast<double>();
      return (h.array() + 1.0) / 2.0;  // {0,1} version
    }
    case MaskInit::Random: {
      Rng rng(seed, 17);
      return rng.uniform_matrix(mask_count, pixel_count);
    }
    case MaskInit::Pca: {
      if (data == nullptr) throw std::invalid_argument("initial_masks: pca init needs a dataset");
      return pca_masks(*data, mask_count).masks.matrix;
    }
  }
  throw std::invalid_argument("initial_masks: unknown init");
}

ClassifierRun train_classifier(SensingNet net, const LabeledDataset& train,
                               const LabeledDataset& validation, const TrainConfig& config) {
  config.validate();
  if (net.objective != Objective::CrossEntropy)
    throw std::invalid_argument("train_classifier: needs a cross-entropy net");
  net.dropout_rate = config.dropout_rate;
  if (net.training_mean.size() == 0) net.training_mean = train.samples.colwise().mean();

  const double lambda = net.lambda();
  const Eigen::VectorXd center = net.center_offset();
  const ScannerTable train_table = precompute_scanner(net, train.samples, lambda);
  const ScannerTable val_table = precompute_scanner(net, validation.samples, lambda);

  Optimizer optimizer(config.optimizer, config.learning_rate);
  ClassifierRun run;
  run.net = net;
  run.best_validation_accuracy = -1.0;
  int epochs_since_best = 0;

  const auto sample_count = static_cast<std::size_t>(train.size());
  Gradients grads;

  for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
    Rng shuffle_rng(config.seed, kShuffleStream + static_cast<std::uint64_t>(epoch));
    const std::vector<Eigen::Index> order = shuffled_indices(train.size(), shuffle_rng);

    double epoch_loss = 0.0;
    int batch_count = 0;
    for (std::size_t begin = 0; begin < sample_count; begin += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(sample_count, begin + static_cast<std::size_t>(config.batch_size));
      const Eigen::MatrixXd mean_y = gather_rows(train_table.mean_y, order, begin, end);
      Eigen::MatrixXd rates_pos, rates_neg;
      if (net.noise.is_poisson()) {
        rates_pos = gather_rows(train_table.rates_pos, order, begin, end);
        rates_neg = gather_rows(train_table.rates_neg, order, begin, end);
      }
      std::vector<int> labels(end - begin);
      for (std::size_t i = begin; i < end; ++i)
        labels[i - begin] = train.labels[static_cast<std::size_t>(order[i])];

      Rng rng(config.seed, kBatchStream + static_cast<std::uint64_t>(epoch) * 100'000 +
                               static_cast<std::uint64_t>(batch_count));
      Eigen::MatrixXd y = noised_measurement(net, lambda, mean_y, rates_pos, rates_neg, rng);
      y.rowwise() -= center.transpose();

      std::vector<Eigen::MatrixXd> dropout_keep;
      std::vector<Eigen::MatrixXd>* keep_ptr = nullptr;
      if (net.dropout_rate > 0.0) {
        for (Eigen::Index h = 0; h < net.hidden_count(); ++h) {
          Eigen::MatrixXd keep(y.rows(), net.layers[static_cast<std::size_t>(h)].weight.rows());
          for (Eigen::Index r = 0; r < keep.rows(); ++r)
            for (Eigen::Index c = 0; c < keep.cols(); ++c)
              keep(r, c) = rng.uniform() >= net.dropout_rate ? 1.0 : 0.0;
          dropout_keep.push_back(std::move(keep));
        }
        keep_ptr = &dropout_keep;
      }

      const HeadCache cache = head_forward(net, std::move(y), keep_ptr);
      Eigen::MatrixXd d_output;
      epoch_loss += cross_entropy_with_grad(cache.output, labels, &d_output);
      ++batch_count;

      grads.layers = head_backward(net, cache, std::move(d_output));
      optimizer.step(net, grads, false);
    }

    Rng eval_rng(config.seed, kEvalStream + static_cast<std::uint64_t>(epoch));
    Eigen::MatrixXd val_y = sampled_measurement(net, lambda, val_table.mean_y, val_table.rates_pos,
                                                val_table.rates_neg, eval_rng);
    val_y.rowwise() -= center.transpose();
    const double accuracy = head_accuracy(net, val_y, validation.labels);

    run.curve.push_back({epoch, epoch_loss / std::max(batch_count, 1), accuracy});
    if (config.verbose)
      std::fprintf(stderr, "epoch %3d  loss %.4f  val %.4f\n", epoch,
                   run.curve.back().train_loss, accuracy);

    if (accuracy > run.best_validation_accuracy) {
      run.best_validation_accuracy = accuracy;
      run.best_epoch = epoch;
      run.net = net;
      epochs_since_best = 0;
    } else if (++epochs_since_best > config.patience) {
      break;
    }
  }
  return run;
}

ClassifierRun train_onn(SensingNet net, const LabeledDataset& train,
                        const LabeledDataset& validation, const TrainConfig& config) {
  config.validate();
  if (net.objective != Objective::CrossEntropy)
    throw std::invalid_argument("train_onn: needs a cross-entropy net");
  net.dropout_rate = config.dropout_rate;
  if (net.training_mean.size() == 0) net.training_mean = train.samples.colwise().mean();

  Optimizer optimizer(config.optimizer, config.learning_rate);
  ClassifierRun run;
  run.net = net;
  run.best_validation_accuracy = -1.0;
  int epochs_since_best = 0;

  const auto sample_count = static_cast<std::size_t>(train.size());

  for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
    Rng shuffle_rng(config.seed, kShuffleStream + static_cast<std::uint64_t>(epoch));
    const std::vector<Eigen::Index> order = shuffled_indices(train.size(), shuffle_rng);

    double epoch_loss = 0.0;
    int batch_count = 0;
    for (std::size_t begin = 0; begin < sample_count; begin += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(sample_count, begin + static_cast<std::size_t>(config.batch_size));
      const Eigen::MatrixXd batch = gather_rows(train.samples, order, begin, end);
      std::vector<int> labels(end - begin);
      for (std::size_t i = begin; i < end; ++i)
        labels[i - begin] = train.labels[static_cast<std::size_t>(order[i])];

      Rng rng(config.seed, kBatchStream + static_cast<std::uint64_t>(epoch) * 100'000 +
                               static_cast<std::uint64_t>(batch_count));
      const NoiseDraws draws = draw_noise(net, batch.rows(), true, rng);
      const ForwardCache cache = forward(net, batch, draws, true);  // lambda refreshed here
      epoch_loss += loss_value(net, cache, labels);
      ++batch_count;
      const Gradients grads = backward(net, cache, labels);
      optimizer.step(net, grads, true);
    }

    const double accuracy =
        evaluate_accuracy(net, validation, {config.seed, kEvalStream + static_cast<std::uint64_t>(epoch)});
    run.curve.push_back({epoch, epoch_loss / std::max(batch_count, 1), accuracy});
    if (config.verbose)
      std::fprintf(stderr, "epoch %3d  loss %.4f  val %.4f\n", epoch,
                   run.curve.back().train_loss, accuracy);

    if (accuracy > run.best_validation_accuracy) {
      run.best_validation_accuracy = accuracy;
      run.best_epoch = epoch;
      run.net = net;
      epochs_since_best = 0;
    } else if (++epochs_since_best > config.patience) {
      break;
    }
  }
  return run;
}

ReconstructorRun train_reconstructor(const ReconstructorProtocol& protocol, const TrainConfig& config) {
  config.validate();
  const Eigen::Index n = protocol.pixel_count;
  Eigen::MatrixXd masks = initial_masks(protocol.init, n, n, config.seed);
  SensingNet net = SensingNet::reconstructor(std::move(masks), protocol.noise,
                                             PhotonBudget::total_photons(protocol.total_photons),
                                             protocol.rail_mode);

  Optimizer optimizer(config.optimizer, config.learning_rate);
  ReconstructorRun run;

  for (int round = 0; round < protocol.rounds; ++round) {
    optimizer.set_learning_rate(config.learning_rate *
                                std::pow(protocol.lr_decay_per_round, static_cast<double>(round)));
    const std::uint64_t round_seed =
        config.seed ^ (0x9E3779B97F4A7C15ULL * (static_cast<std::uint64_t>(round) + 1));
    const Eigen::MatrixXd patterns = random_patterns(protocol.patterns_per_round, n, round_seed);
    const auto sample_count = static_cast<std::size_t>(patterns.rows());

    for (int epoch = 0; epoch < protocol.epochs_per_round; ++epoch) {
      const auto global_epoch = static_cast<std::uint64_t>(round * protocol.epochs_per_round + epoch);
      Rng shuffle_rng(config.seed, kShuffleStream + global_epoch);
      const std::vector<Eigen::Index> order = shuffled_indices(patterns.rows(), shuffle_rng);

      double epoch_loss = 0.0;
      int batch_count = 0;
      for (std::size_t begin = 0; begin < sample_count;
           begin += static_cast<std::size_t>(config.batch_size)) {
        const std::size_t end = std::min(sample_count, begin + static_cast<std::size_t>(config.batch_size));
        const Eigen::MatrixXd batch = gather_rows(patterns, order, begin, end);

        Rng rng(config.seed, kBatchStream + global_epoch * 100'000 +
                                 static_cast<std::uint64_t>(batch_count));
        const NoiseDraws draws = draw_noise(net, batch.rows(), true, rng);
        const ForwardCache cache = forward(net, batch, draws, true);
        epoch_loss += loss_value(net, cache, batch);
        ++batch_count;
        const Gradients grads = backward(net, cache, batch);
        optimizer.step(net, grads, true);
      }
      run.loss_trace.push_back(epoch_loss / std::max(batch_count, 1));
      if (config.verbose)
        std::fprintf(stderr, "round %d epoch %3d  loss %.6f\n", round, epoch, run.loss_trace.back());
    }
    // The global mask scale is a flat direction (the photon factor cancels
    // it), so the optimizer can let it wander. Retract it at the round
    // boundary; scaling the decoder inversely leaves the model's outputs
    // untouched.
    const double scale = net.scanner_masks.cwiseAbs().rowwise().maxCoeff().mean();
    if (scale > 0.0) {
      net.scanner_masks /= scale;
      net.layers[0].weight *= scale;
    }
    run.snapshots.push_back(net.scanner_masks);
  }
  run.masks = net.scanner_masks;
  run.net = std::move(net);
  return run;
}

double evaluate_accuracy(const SensingNet& net, const LabeledDataset& set, RngStream stream) {
  Rng rng(stream);
  constexpr Eigen::Index kChunk = 512;
  Eigen::Index correct = 0;
  for (Eigen::Index begin = 0; begin < set.size(); begin += kChunk) {
    const Eigen::Index end = std::min(set.size(), begin + kChunk);
    const Eigen::MatrixXd outputs =
        evaluate_outputs(net, set.samples.middleRows(begin, end - begin), rng);
    for (Eigen::Index b = 0; b < outputs.rows(); ++b) {
      Eigen::Index pick = 0;
      outputs.row(b).maxCoeff(&pick);
      if (static_cast<int>(pick) == set.labels[static_cast<std::size_t>(begin + b)]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(set.size());
}

double mean_abs_offdiagonal(const Eigen::MatrixXd& masks) {
  const Eigen::Index diag = std::min(masks.rows(), masks.cols());
  const double total = masks.cwiseAbs().sum();
  double diagonal = 0.0;
  for (Eigen::Index k = 0; k < diag; ++k) diagonal += std::abs(masks(k, k));
  const auto off_count = static_cast<double>(masks.size() - diag);
  return off_count > 0 ? (total - diagonal) / off_count : 0.0;
}

double offdiagonal_to_diagonal_ratio(const Eigen::MatrixXd& masks) {
  const Eigen::Index diag = std::min(masks.rows(), masks.cols());
  double diagonal = 0.0;
  for (Eigen::Index k = 0; k < diag; ++k) diagonal += std::abs(masks(k, k));
  diagonal /= static_cast<double>(diag);
  if (diagonal == 0.0) return std::numeric_limits<double>::infinity();
  return mean_abs_offdiagonal(masks) / diagonal;
}

GradientCheckReport gradient_check(const SensingNet& net, const Eigen::MatrixXd& batch,
                                   const std::vector<int>& labels, double tolerance,
                                   std::uint64_t seed) {
  if (net.pixel_count() > 16)
    throw std::invalid_argument("gradient_check: intended for small nets (pixel count <= 16)");

  Rng rng(seed, 0);
  const NoiseDraws draws = draw_noise(net, batch.rows(), true, rng);
  const double lambda0 = net.lambda();
  const bool classify = net.objective == Objective::CrossEntropy;

  const ForwardCache cache = forward(net, batch, draws, true, lambda0);
  const Gradients analytic =
      classify ? backward(net, cache, labels) : backward(net, cache, batch);

  SensingNet work = net;
  const auto loss_at = [&]() {
    const ForwardCache c = forward(work, batch, draws, true, lambda0);
    return classify ? loss_value(work, c, labels) : loss_value(work, c, batch);
  };

  GradientCheckReport report;
  const auto check_entry = [&](double& value, double analytic_grad, std::string name) {
    const double saved = value;
    const double h = 1e-4 * std::max(1.0, std::abs(saved));
    // Five-point stencil: the O(h^4) truncation and the cancellation noise
    // both stay below the tightest (1e-6) tolerance.
    value = saved + 2.0 * h;
    const double loss_p2 = loss_at();
    value = saved + h;
    const double loss_p1 = loss_at();
    value = saved - h;
    const double loss_m1 = loss_at();
    value = saved - 2.0 * h;
    const double loss_m2 = loss_at();
    value = saved;
    const double numeric = (-loss_p2 + 8.0 * loss_p1 - 8.0 * loss_m1 + loss_m2) / (12.0 * h);
    // The 1e-6 floor keeps stencil cancellation noise (~1e-12 absolute) from
    // registering on parameters whose true gradient is exactly zero.
    const double rel =
        std::abs(analytic_grad - numeric) / std::max({std::abs(analytic_grad), std::abs(numeric), 1e-6});
    if (rel > report.max_rel_error) report.max_rel_error = rel;
    if (rel > tolerance) report.worst.push_back({std::move(name), analytic_grad, numeric, rel});
  };

  for (Eigen::Index r = 0; r < work.scanner_masks.rows(); ++r)
    for (Eigen::Index c = 0; c < work.scanner_masks.cols(); ++c)
      check_entry(work.scanner_masks(r, c), analytic.scanner_masks(r, c),
                  "masks(" + std::to_string(r) + "," + std::to_string(c) + ")");
  for (std::size_t l = 0; l < work.layers.size(); ++l) {
    for (Eigen::Index r = 0; r < work.layers[l].weight.rows(); ++r)
      for (Eigen::Index c = 0; c < work.layers[l].weight.cols(); ++c)
        check_entry(work.layers[l].weight(r, c), analytic.layers[l].weight(r, c),
                    "layer" + std::to_string(l) + ".weight(" + std::to_string(r) + "," +
                        std::to_string(c) + ")");
    for (Eigen::Index r = 0; r < work.layers[l].bias.size(); ++r)
      check_entry(work.layers[l].bias(r), analytic.layers[l].bias(r),
                  "layer" + std::to_string(l) + ".bias(" + std::to_string(r) + ")");
  }

  std::sort(report.worst.begin(), report.worst.end(),
            [](const GradientCheckEntry& a, const GradientCheckEntry& b) {
              return a.rel_error > b.rel_error;
            });
  if (report.worst.size() > 8) report.worst.resize(8);
  report.pass = report.max_rel_error < tolerance;
  return report;
}

namespace {

constexpr char kCheckpointMagic[4] = {'S', 'P', 'C', 'N'};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const SensingNet& net,
                     const nlohmann::json& sidecar) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(kCheckpointMagic, 4);
  write_u32_le(out, 1);  // version
  write_u32_le(out, net.objective == Objective::CrossEntropy ? 0 : 1);
  write_u32_le(out, static_cast<std::uint32_t>(net.noise.kind));
  write_f64_le(out, net.noise.sigma);
  write_f64_le(out, net.budget.flux);
  write_f64_le(out, net.budget.exposure);
  write_u32_le(out, static_cast<std::uint32_t>(net.rail_mode));
  write_f64_le(out, net.exposure_scale);
  write_f64_le(out, net.dropout_rate);
  write_u32_le(out, static_cast<std::uint32_t>(net.mask_count()));
  write_u32_le(out, static_cast<std::uint32_t>(net.pixel_count()));
  write_u32_le(out, net.training_mean.size() > 0 ? 1 : 0);
  write_u32_le(out, static_cast<std::uint32_t>(net.layers.size()));
  for (const DenseLayer& layer : net.layers) {
    write_u32_le(out, static_cast<std::uint32_t>(layer.weight.rows()));
    write_u32_le(out, static_cast<std::uint32_t>(layer.weight.cols()));
    write_u32_le(out, layer.has_bias() ? 1 : 0);
  }
  for (Eigen::Index r = 0; r < net.scanner_masks.rows(); ++r)
    for (Eigen::Index c = 0; c < net.scanner_masks.cols(); ++c)
      write_f64_le(out, net.scanner_masks(r, c));
  for (Eigen::Index i = 0; i < net.training_mean.size(); ++i) write_f64_le(out, net.training_mean[i]);
  for (const DenseLayer& layer : net.layers) {
    for (Eigen::Index r = 0; r < layer.weight.rows(); ++r)
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) write_f64_le(out, layer.weight(r, c));
    for (Eigen::Index r = 0; r < layer.bias.size(); ++r) write_f64_le(out, layer.bias(r));
  }

  std::ofstream side(path.string() + ".json");
  if (!side) throw std::runtime_error("cannot open " + path.string() + ".json for writing");
  side << sidecar.dump(2) << '\n';
}

SensingNet load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kCheckpointMagic, 4) != 0)
    throw std::runtime_error("checkpoint parse error: " + path.string() + ": bad magic");
  const std::uint32_t version = read_u32_le(in);
  if (version != 1)
    throw std::runtime_error("checkpoint parse error: unsupported version " + std::to_string(version));

  SensingNet net;
  net.objective = read_u32_le(in) == 0 ? Objective::CrossEntropy : Objective::MeanSquaredError;
  const auto noise_kind = static_cast<NoiseModel::Kind>(read_u32_le(in));
  const double sigma = read_f64_le(in);
  net.noise = noise_kind == NoiseModel::Kind::Gaussian ? NoiseModel::gaussian(sigma)
                                                       : NoiseModel{noise_kind, 0.0};
  const double flux = read_f64_le(in);
  const double exposure = read_f64_le(in);
  net.budget = PhotonBudget(flux, exposure);
  net.rail_mode = static_cast<RailMode>(read_u32_le(in));
  net.exposure_scale = read_f64_le(in);
  net.dropout_rate = read_f64_le(in);
  const std::uint32_t mask_count = read_u32_le(in);
  const std::uint32_t pixel_count = read_u32_le(in);
  const bool has_mean = read_u32_le(in) != 0;
  const std::uint32_t layer_count = read_u32_le(in);

  struct Dims {
    std::uint32_t out, in;
    bool bias;
  };
  std::vector<Dims> dims;
  for (std::uint32_t l = 0; l < layer_count; ++l) {
    Dims d{};
    d.out = read_u32_le(in);
    d.in = read_u32_le(in);
    d.bias = read_u32_le(in) != 0;
    dims.push_back(d);
  }

  net.scanner_masks.resize(mask_count, pixel_count);
  for (std::uint32_t r = 0; r < mask_count; ++r)
    for (std::uint32_t c = 0; c < pixel_count; ++c) net.scanner_masks(r, c) = read_f64_le(in);
  if (has_mean) {
    net.training_mean.resize(pixel_count);
    for (std::uint32_t i = 0; i < pixel_count; ++i) net.training_mean[i] = read_f64_le(in);
  }
  for (const Dims& d : dims) {
    DenseLayer layer;
    layer.weight.resize(d.out, d.in);
    for (std::uint32_t r = 0; r < d.out; ++r)
      for (std::uint32_t c = 0; c < d.in; ++c) layer.weight(r, c) = read_f64_le(in);
    if (d.bias) {
      layer.bias.resize(d.out);
      for (std::uint32_t r = 0; r < d.out; ++r) layer.bias(r) = read_f64_le(in);
    }
    net.layers.push_back(std::move(layer));
  }
  if (!in) throw std::runtime_error("checkpoint parse error: " + path.string() + ": truncated payload");
  return net;
}

}  // namespace spc
