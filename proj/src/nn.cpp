#include "spc/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace spc {

namespace {

DenseLayer glorot_layer(Eigen::Index out, Eigen::Index in, Rng& rng, bool with_bias = true) {
  DenseLayer layer;
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  layer.weight.resize(out, in);
  for (Eigen::Index r = 0; r < out; ++r)
    for (Eigen::Index c = 0; c < in; ++c) layer.weight(r, c) = (2.0 * rng.uniform() - 1.0) * limit;
  if (with_bias) layer.bias = Eigen::VectorXd::Zero(out);
  return layer;
}

Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd out(logits.rows(), logits.cols());
  for (Eigen::Index b = 0; b < logits.rows(); ++b) {
    const double peak = logits.row(b).maxCoeff();
    out.row(b) = (logits.row(b).array() - peak).exp();
    out.row(b) /= out.row(b).sum();
  }
  return out;
}

}  // namespace

Eigen::VectorXd SensingNet::center_offset() const {
  if (training_mean.size() == 0) return Eigen::VectorXd::Zero(mask_count());
  return scanner_masks * training_mean;
}

SensingNet SensingNet::classifier(Eigen::MatrixXd masks, Eigen::Index class_count, NoiseModel noise,
                                  PhotonBudget budget, RailMode rail_mode, std::uint64_t init_seed,
                                  const std::vector<Eigen::Index>& hidden) {
  SensingNet net;
  net.scanner_masks = std::move(masks);
  net.noise = noise;
  net.budget = budget;
  net.rail_mode = rail_mode;
  net.objective = Objective::CrossEntropy;

  Rng rng(init_seed, 0);
  Eigen::Index in = net.mask_count();
  for (Eigen::Index width : hidden) {
    net.layers.push_back(glorot_layer(width, in, rng));
    in = width;
  }
  net.layers.push_back(glorot_layer(class_count, in, rng));
  return net;
}

SensingNet SensingNet::reconstructor(Eigen::MatrixXd masks, NoiseModel noise, PhotonBudget budget,
                                     RailMode rail_mode) {
  if (masks.rows() != masks.cols())
    throw std::invalid_argument("reconstructor: needs a square mask set (m == N)");
  SensingNet net;
  net.scanner_masks = std::move(masks);
  net.noise = noise;
  net.budget = budget;
  net.rail_mode = rail_mode;
  net.objective = Objective::MeanSquaredError;
  net.dropout_rate = 0.0;
  DenseLayer head;
  head.weight = Eigen::MatrixXd::Identity(net.mask_count(), net.mask_count());
  head.bias = Eigen::VectorXd::Zero(net.mask_count());
  net.layers.push_back(std::move(head));
  return net;
}

NoiseDraws draw_noise(const SensingNet& net, Eigen::Index batch_size, bool training, Rng& rng) {
  NoiseDraws draws;
  if (!net.noise.is_noiseless()) {
    draws.eps_pos = rng.normal_matrix(batch_size, net.mask_count());
    if (net.noise.is_poisson()) draws.eps_neg = rng.normal_matrix(batch_size, net.mask_count());
  }
  if (training && net.dropout_rate > 0.0) {
    for (Eigen::Index h = 0; h < net.hidden_count(); ++h) {
      Eigen::MatrixXd keep(batch_size, net.layers[static_cast<std::size_t>(h)].weight.rows());
      for (Eigen::Index r = 0; r < keep.rows(); ++r)
        for (Eigen::Index c = 0; c < keep.cols(); ++c)
          keep(r, c) = rng.uniform() >= net.dropout_rate ? 1.0 : 0.0;
      draws.dropout_keep.push_back(std::move(keep));
    }
  }
  return draws;
}

ForwardCache forward(const SensingNet& net, const Eigen::MatrixXd& batch, const NoiseDraws& draws,
                     bool training, std::optional<double> lambda_override) {
  if (batch.cols() != net.pixel_count())
    throw std::invalid_argument("forward: batch dimension " + std::to_string(batch.cols()) +
                                " != pixel count " + std::to_string(net.pixel_count()));

  ForwardCache cache;
  cache.training = training;
  cache.input = batch;
  cache.lambda = lambda_override ? *lambda_override : net.lambda();

  // Scanner: linear projection plus reparameterized noise. Poisson always
  // runs through the two rails; a nonnegative mask simply has an empty
  // negative rail.
  cache.y = batch * net.scanner_masks.transpose();
  if (net.noise.is_gaussian()) {
    const double rail_factor = net.rail_mode == RailMode::SinglePositive ? 1.0 : std::sqrt(2.0);
    cache.y += (rail_factor * net.noise.sigma / cache.lambda) * draws.eps_pos;
  } else if (net.noise.is_poisson()) {
    const Eigen::MatrixXd rates_pos =
        cache.lambda * (batch * net.scanner_masks.cwiseMax(0.0).transpose());
    const Eigen::MatrixXd rates_neg =
        cache.lambda * (batch * (-net.scanner_masks).cwiseMax(0.0).transpose());
    cache.y += (rates_pos.array().sqrt() * draws.eps_pos.array() -
                rates_neg.array().sqrt() * draws.eps_neg.array())
                   .matrix() /
               cache.lambda;
    cache.gain_pos = surrogate_poisson_gain(rates_pos, draws.eps_pos);
    cache.gain_neg = surrogate_poisson_gain(rates_neg, draws.eps_neg);
  }

  // Head: centering, hidden layers (linear -> dropout -> relu), linear output.
  cache.head_input = cache.y;
  if (net.training_mean.size() > 0)
    cache.head_input.rowwise() -= net.center_offset().transpose();

  const bool use_dropout = training && !draws.dropout_keep.empty();
  cache.dropout_scale = use_dropout ? 1.0 / (1.0 - net.dropout_rate) : 1.0;
  Eigen::MatrixXd activation = cache.head_input;
  for (Eigen::Index h = 0; h < net.hidden_count(); ++h) {
    const DenseLayer& layer = net.layers[static_cast<std::size_t>(h)];
    Eigen::MatrixXd pre = activation * layer.weight.transpose();
    if (layer.has_bias()) pre.rowwise() += layer.bias.transpose();
    if (use_dropout)
      pre.array() *= draws.dropout_keep[static_cast<std::size_t>(h)].array() * cache.dropout_scale;
    cache.act.push_back(pre.cwiseMax(0.0));
    activation = cache.act.back();
  }

  const DenseLayer& out = net.layers.back();
  cache.output = activation * out.weight.transpose();
  if (out.has_bias()) cache.output.rowwise() += out.bias.transpose();
  return cache;
}

Eigen::MatrixXd evaluate_outputs(const SensingNet& net, const Eigen::MatrixXd& batch, Rng& rng) {
  const Eigen::Index batch_size = batch.rows();
  const double lambda = net.lambda();

  Eigen::MatrixXd y = batch * net.scanner_masks.transpose();
  if (net.noise.is_gaussian()) {
    const double rail_factor = net.rail_mode == RailMode::SinglePositive ? 1.0 : std::sqrt(2.0);
    y += (rail_factor * net.noise.sigma / lambda) * rng.normal_matrix(batch_size, net.mask_count());
  } else if (net.noise.is_poisson()) {
    const Eigen::MatrixXd rates_pos =
        lambda * (batch * net.scanner_masks.cwiseMax(0.0).transpose());
    const Eigen::MatrixXd rates_neg =
        lambda * (batch * (-net.scanner_masks).cwiseMax(0.0).transpose());
    for (Eigen::Index b = 0; b < batch_size; ++b)
      for (Eigen::Index k = 0; k < y.cols(); ++k)
        y(b, k) = static_cast<double>(rng.poisson(rates_pos(b, k)) - rng.poisson(rates_neg(b, k))) /
                  lambda;
  }

  Eigen::MatrixXd activation = y;
  if (net.training_mean.size() > 0) activation.rowwise() -= net.center_offset().transpose();
  for (Eigen::Index h = 0; h < net.hidden_count(); ++h) {
    const DenseLayer& layer = net.layers[static_cast<std::size_t>(h)];
    Eigen::MatrixXd pre = activation * layer.weight.transpose();
    if (layer.has_bias()) pre.rowwise() += layer.bias.transpose();
    activation = pre.cwiseMax(0.0);
  }
  const DenseLayer& out = net.layers.back();
  Eigen::MatrixXd output = activation * out.weight.transpose();
  if (out.has_bias()) output.rowwise() += out.bias.transpose();
  return output;
}

double loss_value(const SensingNet& net, const ForwardCache& cache, const std::vector<int>& labels) {
  if (net.objective != Objective::CrossEntropy)
    throw std::invalid_argument("loss_value: labels supplied to a regression net");
  if (cache.output.rows() != static_cast<Eigen::Index>(labels.size()))
    throw std::invalid_argument("loss_value: label count mismatch");
  double total = 0.0;
  for (Eigen::Index b = 0; b < cache.output.rows(); ++b) {
    const double peak = cache.output.row(b).maxCoeff();
    const double log_sum = std::log((cache.output.row(b).array() - peak).exp().sum()) + peak;
    total += log_sum - cache.output(b, labels[static_cast<std::size_t>(b)]);
  }
  return total / static_cast<double>(cache.output.rows());
}

double loss_value(const SensingNet& net, const ForwardCache& cache, const Eigen::MatrixXd& targets) {
  if (net.objective != Objective::MeanSquaredError)
    throw std::invalid_argument("loss_value: targets supplied to a classification net");
  return (cache.output - targets).squaredNorm() / static_cast<double>(cache.output.size());
}

namespace {

Gradients backward_from_output_grad(const SensingNet& net, const ForwardCache& cache,
                                    Eigen::MatrixXd d_output) {
  Gradients grads;
  grads.layers.resize(net.layers.size());

  const Eigen::Index hidden = net.hidden_count();
  const Eigen::MatrixXd& last_activation = hidden > 0 ? cache.act.back() : cache.head_input;
  grads.layers.back().weight = d_output.transpose() * last_activation;
  if (net.layers.back().has_bias()) grads.layers.back().bias = d_output.colwise().sum();
  Eigen::MatrixXd d_activation = d_output * net.layers.back().weight;

  // Hidden layers in reverse. Units killed by dropout are also flattened by
  // the relu derivative, so only the keep-scale survives here.
  for (Eigen::Index h = hidden - 1; h >= 0; --h) {
    const auto index = static_cast<std::size_t>(h);
    Eigen::MatrixXd d_pre =
        (d_activation.array() * (cache.act[index].array() > 0.0).cast<double>()).matrix() *
        cache.dropout_scale;
    const Eigen::MatrixXd& layer_input = h > 0 ? cache.act[index - 1] : cache.head_input;
    grads.layers[index].weight = d_pre.transpose() * layer_input;
    if (net.layers[index].has_bias()) grads.layers[index].bias = d_pre.colwise().sum();
    d_activation = d_pre * net.layers[index].weight;
  }

  // d_activation now holds the gradient at the centered measurement.
  grads.scanner_masks = d_activation.transpose() * cache.input;
  if (net.noise.is_poisson() && cache.gain_pos.size() > 0) {
    // Surrogate noise terms: rate paths keyed by the sign of each entry.
    const Eigen::MatrixXd noise_pos =
        (d_activation.array() * (cache.gain_pos.array() - 1.0)).matrix().transpose() * cache.input;
    const Eigen::MatrixXd noise_neg =
        (d_activation.array() * (cache.gain_neg.array() - 1.0)).matrix().transpose() * cache.input;
    grads.scanner_masks.array() +=
        (net.scanner_masks.array() > 0.0).cast<double>() * noise_pos.array() +
        (net.scanner_masks.array() < 0.0).cast<double>() * noise_neg.array();
  }
  if (net.training_mean.size() > 0)
    grads.scanner_masks.noalias() -=
        d_activation.colwise().sum().transpose() * net.training_mean.transpose();
  return grads;
}

}  // namespace

Gradients backward(const SensingNet& net, const ForwardCache& cache, const std::vector<int>& labels) {
  Eigen::MatrixXd d_output = softmax_rows(cache.output);
  for (Eigen::Index b = 0; b < d_output.rows(); ++b)
    d_output(b, labels[static_cast<std::size_t>(b)]) -= 1.0;
  d_output /= static_cast<double>(d_output.rows());
  return backward_from_output_grad(net, cache, std::move(d_output));
}

Gradients backward(const SensingNet& net, const ForwardCache& cache, const Eigen::MatrixXd& targets) {
  Eigen::MatrixXd d_output = 2.0 * (cache.output - targets) / static_cast<double>(cache.output.size());
  return backward_from_output_grad(net, cache, std::move(d_output));
}

Optimizer::Optimizer(OptimizerKind kind, double learning_rate)
    : kind_(kind), learning_rate_(learning_rate) {}

void Optimizer::adam_update(Eigen::Ref<Eigen::MatrixXd> value, const Eigen::MatrixXd& grad,
                            Moments& moments) {
  constexpr double beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8;
  if (moments.first.size() == 0) {
    moments.first = Eigen::ArrayXXd::Zero(grad.rows(), grad.cols());
    moments.second = Eigen::ArrayXXd::Zero(grad.rows(), grad.cols());
  }
  moments.first = beta1 * moments.first + (1.0 - beta1) * grad.array();
  moments.second = beta2 * moments.second + (1.0 - beta2) * grad.array().square();
  const double correction1 = 1.0 - std::pow(beta1, static_cast<double>(step_count_));
  const double correction2 = 1.0 - std::pow(beta2, static_cast<double>(step_count_));
  value.array() -= learning_rate_ * (moments.first / correction1) /
                   ((moments.second / correction2).sqrt() + epsilon);
}

void Optimizer::step(SensingNet& net, const Gradients& grads, bool update_masks) {
  if (!initialized_) {
    weight_moments_.resize(net.layers.size());
    bias_moments_.resize(net.layers.size());
    initialized_ = true;
  }
  ++step_count_;

  if (kind_ == OptimizerKind::Sgd) {
    if (update_masks) net.scanner_masks -= learning_rate_ * grads.scanner_masks;
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
      net.layers[l].weight -= learning_rate_ * grads.layers[l].weight;
      if (net.layers[l].has_bias()) net.layers[l].bias -= learning_rate_ * grads.layers[l].bias;
    }
    return;
  }

  if (update_masks) adam_update(net.scanner_masks, grads.scanner_masks, mask_moments_);
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    adam_update(net.layers[l].weight, grads.layers[l].weight, weight_moments_[l]);
    if (net.layers[l].has_bias()) {
      adam_update(net.layers[l].bias, grads.layers[l].bias, bias_moments_[l]);
    }
  }
}

}  // namespace spc
