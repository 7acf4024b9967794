#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "usnrt/error.hpp"
#include "usnrt/random.hpp"

namespace usnrt {

// Samples are rows; each row is contiguous so batches gather cheaply.
using SampleMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

namespace nn {

enum class Activation : std::uint8_t { Tanh = 0, ReLU = 1, Linear = 2, Softplus = 3 };

// Added to every sigma-network output so the Gaussian NLL never sees sigma = 0.
inline constexpr double kSigmaFloor = 1e-6;

inline const char* activation_name(Activation a) {
  switch (a) {
    case Activation::Tanh: return "tanh";
    case Activation::ReLU: return "relu";
    case Activation::Linear: return "linear";
    case Activation::Softplus: return "softplus";
  }
  return "?";
}

inline double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::fabs(z))); }

inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

inline double activate(Activation a, double z) {
  switch (a) {
    case Activation::Tanh: return std::tanh(z);
    case Activation::ReLU: return z > 0.0 ? z : 0.0;
    case Activation::Linear: return z;
    case Activation::Softplus: return softplus(z);
  }
  return z;
}

// Derivative expressed through the pre-activation z and the activation value y.
inline double activation_derivative(Activation a, double z, double y) {
  switch (a) {
    case Activation::Tanh: return 1.0 - y * y;
    case Activation::ReLU: return z > 0.0 ? 1.0 : 0.0;
    case Activation::Linear: return 1.0;
    case Activation::Softplus: return sigmoid(z);
  }
  return 1.0;
}

/// Fully connected feed-forward network. weights[l] maps layer l to layer l+1
/// and has shape (layer_sizes[l+1], layer_sizes[l]).
struct Mlp {
  std::vector<std::size_t> layer_sizes;
  Activation hidden_activation = Activation::Tanh;
  Activation output_activation = Activation::Linear;
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> biases;
  std::uint64_t seed = 0;

  std::size_t input_dim() const { return layer_sizes.front(); }
  std::size_t output_dim() const { return layer_sizes.back(); }
  std::size_t layer_count() const { return weights.size(); }
  Activation activation_of(std::size_t layer) const {
    return layer + 1 == weights.size() ? output_activation : hidden_activation;
  }
  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l < weights.size(); ++l) n += weights[l].size() + biases[l].size();
    return n;
  }
  bool operator==(const Mlp& o) const {
    if (layer_sizes != o.layer_sizes || hidden_activation != o.hidden_activation ||
        output_activation != o.output_activation || seed != o.seed)
      return false;
    for (std::size_t l = 0; l < weights.size(); ++l)
      if (weights[l] != o.weights[l] || biases[l] != o.biases[l]) return false;
    return true;
  }
};

inline void validate_layer_sizes(const std::vector<std::size_t>& sizes) {
  if (sizes.size() < 2) throw InvalidInput("Mlp needs at least an input and an output layer");
  for (std::size_t s : sizes)
    if (s == 0) throw InvalidInput("Mlp layer sizes must be positive");
}

/// Network with all weights and biases zero.
inline Mlp make_zero_mlp(std::vector<std::size_t> sizes, Activation hidden, Activation output) {
  validate_layer_sizes(sizes);
  Mlp net;
  net.layer_sizes = std::move(sizes);
  net.hidden_activation = hidden;
  net.output_activation = output;
  for (std::size_t l = 0; l + 1 < net.layer_sizes.size(); ++l) {
    const auto in = static_cast<Eigen::Index>(net.layer_sizes[l]);
    const auto out = static_cast<Eigen::Index>(net.layer_sizes[l + 1]);
    net.weights.emplace_back(Eigen::MatrixXd::Zero(out, in));
    net.biases.emplace_back(Eigen::VectorXd::Zero(out));
  }
  return net;
}

/// Xavier-uniform weights, zero biases.
inline Mlp make_mlp(std::vector<std::size_t> sizes, Activation hidden, Activation output,
                    std::uint64_t seed) {
  Mlp net = make_zero_mlp(std::move(sizes), hidden, output);
  net.seed = seed;
  Rng rng(mix_seed(seed, 0x11));
  for (auto& w : net.weights) {
    const double limit = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
    for (Eigen::Index c = 0; c < w.cols(); ++c)
      for (Eigen::Index r = 0; r < w.rows(); ++r) w(r, c) = limit * (2.0 * uniform01(rng) - 1.0);
  }
  return net;
}

/// Hidden layer sizes scaled from d; e.g. {8, 4} -> [8d, 4d].
inline std::vector<std::size_t> layers_for(std::size_t input_dim,
                                           const std::vector<std::size_t>& hidden,
                                           std::size_t output_dim = 1) {
  std::vector<std::size_t> sizes{input_dim};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(output_dim);
  return sizes;
}

/// Per-layer caches for a batched forward/backward pass. Columns are samples.
struct Workspace {
  std::vector<Eigen::MatrixXd> pre;   // z for layer l+1
  std::vector<Eigen::MatrixXd> post;  // post[0] is the input batch
  Eigen::MatrixXd delta;
  Eigen::MatrixXd delta_prev;
};

inline void forward_cached(const Mlp& net, Workspace& ws) {
  const std::size_t L = net.layer_count();
  ws.pre.resize(L);
  ws.post.resize(L + 1);
  for (std::size_t l = 0; l < L; ++l) {
    ws.pre[l].noalias() = net.weights[l] * ws.post[l];
    ws.pre[l].colwise() += net.biases[l];
    const Activation act = net.activation_of(l);
    if (act == Activation::Linear) {
      ws.post[l + 1] = ws.pre[l];
    } else if (act == Activation::Tanh) {
      ws.post[l + 1] = ws.pre[l].array().tanh().matrix();
    } else {
      ws.post[l + 1] = ws.pre[l].unaryExpr([act](double z) { return activate(act, z); });
    }
  }
}

/// Forward pass on a column batch (input_dim x batch). Returns output_dim x batch.
inline Eigen::MatrixXd forward_batch(const Mlp& net, const Eigen::MatrixXd& inputs) {
  if (static_cast<std::size_t>(inputs.rows()) != net.input_dim())
    throw InvalidInput("forward: input has " + std::to_string(inputs.rows()) +
                       " features, network expects " + std::to_string(net.input_dim()));
  Workspace ws;
  ws.post.resize(net.layer_count() + 1);
  ws.post[0] = inputs;
  forward_cached(net, ws);
  return ws.post.back();
}

inline Eigen::VectorXd forward(const Mlp& net, std::span<const double> x) {
  if (x.size() != net.input_dim())
    throw InvalidInput("forward: input has " + std::to_string(x.size()) +
                       " features, network expects " + std::to_string(net.input_dim()));
  Eigen::MatrixXd in(static_cast<Eigen::Index>(x.size()), 1);
  for (std::size_t i = 0; i < x.size(); ++i) in(static_cast<Eigen::Index>(i), 0) = x[i];
  return forward_batch(net, in).col(0);
}

/// First output of the network for every row of X.
inline Eigen::VectorXd predict_scalar(const Mlp& net, const SampleMatrix& X) {
  if (static_cast<std::size_t>(X.cols()) != net.input_dim())
    throw InvalidInput("predict: input has " + std::to_string(X.cols()) +
                       " features, network expects " + std::to_string(net.input_dim()));
  const Eigen::Index n = X.rows();
  Eigen::VectorXd out(n);
  constexpr Eigen::Index chunk = 1024;
  Workspace ws;
  ws.post.resize(net.layer_count() + 1);
  for (Eigen::Index start = 0; start < n; start += chunk) {
    const Eigen::Index len = std::min(chunk, n - start);
    ws.post[0] = X.middleRows(start, len).transpose();
    forward_cached(net, ws);
    out.segment(start, len) = ws.post.back().row(0).transpose();
  }
  return out;
}

/// sigma(x) = softplus-network output + floor, for every row of X.
inline Eigen::VectorXd predict_sigma(const Mlp& sigma_net, const SampleMatrix& X) {
  return (predict_scalar(sigma_net, X).array() + kSigmaFloor).matrix();
}

struct Gradients {
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> biases;

  static Gradients zeros_like(const Mlp& net) {
    Gradients g;
    for (std::size_t l = 0; l < net.layer_count(); ++l) {
      g.weights.emplace_back(Eigen::MatrixXd::Zero(net.weights[l].rows(), net.weights[l].cols()));
      g.biases.emplace_back(Eigen::VectorXd::Zero(net.biases[l].size()));
    }
    return g;
  }
};

/// Backpropagate dLoss/dOutput (output_dim x batch, in ws.delta) through the
/// cached forward pass, writing parameter gradients into `grad`.
inline void backward(const Mlp& net, Workspace& ws, Gradients& grad) {
  const std::size_t L = net.layer_count();
  for (std::size_t l = L; l-- > 0;) {
    const Activation act = net.activation_of(l);
    if (act == Activation::Tanh) {
      ws.delta.array() *= 1.0 - ws.post[l + 1].array().square();
    } else if (act != Activation::Linear) {
      ws.delta = ws.delta.binaryExpr(ws.pre[l], [act](double d, double z) {
        return d * activation_derivative(act, z, activate(act, z));
      });
    }
    grad.weights[l].noalias() = ws.delta * ws.post[l].transpose();
    grad.biases[l] = ws.delta.rowwise().sum();
    if (l > 0) {
      ws.delta_prev.noalias() = net.weights[l].transpose() * ws.delta;
      std::swap(ws.delta, ws.delta_prev);
    }
  }
}

// ---------------------------------------------------------------------------
// Objectives. Each maps (network output, sample index) to a per-sample loss
// and its derivative with respect to the output; batches average them.

/// Per-sample Gaussian negative log-likelihood without the constant:
/// log(sigma^2)/2 + (y - mu)^2 / (2 sigma^2).
inline double nll_loss(double y, double mu, double sigma) {
  if (!(sigma > 0.0)) throw InvalidInput("nll_loss: sigma must be positive");
  const double r = y - mu;
  return std::log(sigma) + r * r / (2.0 * sigma * sigma);
}

struct MseObjective {
  std::span<const double> target;
  double operator()(double out, std::size_t i, double& grad) const {
    const double r = out - target[i];
    grad = 2.0 * r;
    return r * r;
  }
};

// Trains a sigma network: out is the softplus output, residuals come from a frozen mean.
struct SigmaNllObjective {
  std::span<const double> residual;
  double operator()(double out, std::size_t i, double& grad) const {
    const double s = out + kSigmaFloor;
    const double r2 = residual[i] * residual[i];
    grad = 1.0 / s - r2 / (s * s * s);
    return std::log(s) + r2 / (2.0 * s * s);
  }
};

// Trains a mean network under the NLL with a frozen per-sample sigma.
struct MeanNllObjective {
  std::span<const double> target;
  std::span<const double> sigma;
  double operator()(double out, std::size_t i, double& grad) const {
    const double r = out - target[i];
    const double s2 = sigma[i] * sigma[i];
    grad = r / s2;
    return std::log(sigma[i]) + r * r / (2.0 * s2);
  }
};

/// Mean objective and its gradient over the given rows (full-batch). Used for
/// gradient checks and diagnostics; training uses the same code path per batch.
template <class Objective>
double loss_and_gradient(const Mlp& net, const SampleMatrix& X, std::span<const std::size_t> rows,
                         const Objective& objective, Gradients* grad) {
  Workspace ws;
  ws.post.resize(net.layer_count() + 1);
  ws.post[0].resize(X.cols(), static_cast<Eigen::Index>(rows.size()));
  for (std::size_t j = 0; j < rows.size(); ++j)
    ws.post[0].col(static_cast<Eigen::Index>(j)) = X.row(static_cast<Eigen::Index>(rows[j])).transpose();
  forward_cached(net, ws);
  const double inv_b = 1.0 / static_cast<double>(rows.size());
  ws.delta.resize(1, static_cast<Eigen::Index>(rows.size()));
  double total = 0.0;
  for (std::size_t j = 0; j < rows.size(); ++j) {
    double g = 0.0;
    total += objective(ws.post.back()(0, static_cast<Eigen::Index>(j)), rows[j], g);
    ws.delta(0, static_cast<Eigen::Index>(j)) = g * inv_b;
  }
  if (grad != nullptr) {
    if (grad->weights.size() != net.layer_count()) *grad = Gradients::zeros_like(net);
    backward(net, ws, *grad);
  }
  return total * inv_b;
}

// ---------------------------------------------------------------------------
// Optimizer and training loop.

struct TrainConfig {
  std::size_t batch_size = 64;
  double learning_rate = 0.01;
  std::size_t max_epochs = 1000;
  double validation_fraction = 0.2;
  std::size_t patience = 20;
  std::uint64_t seed = 0;

  void validate() const {
    if (batch_size < 1) throw InvalidInput("batch_size must be >= 1");
    if (!(learning_rate > 0.0)) throw InvalidInput("learning_rate must be positive");
    if (max_epochs < 1) throw InvalidInput("max_epochs must be >= 1");
    if (!(validation_fraction > 0.0 && validation_fraction < 1.0))
      throw InvalidInput("validation_fraction must lie in (0, 1)");
    if (patience < 1) throw InvalidInput("patience must be >= 1");
  }
};

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t step = 0;
  Gradients first_moment;
  Gradients second_moment;

  explicit AdamState(const Mlp& net)
      : first_moment(Gradients::zeros_like(net)), second_moment(Gradients::zeros_like(net)) {}

  void update(Mlp& net, const Gradients& g, double lr) {
    ++step;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
    auto apply = [&](auto& param, auto& m, auto& v, const auto& grad) {
      m = beta1 * m + (1.0 - beta1) * grad;
      v = beta2 * v + (1.0 - beta2) * grad.cwiseAbs2();
      param.array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + epsilon);
    };
    for (std::size_t l = 0; l < net.layer_count(); ++l) {
      apply(net.weights[l], first_moment.weights[l], second_moment.weights[l], g.weights[l]);
      apply(net.biases[l], first_moment.biases[l], second_moment.biases[l], g.biases[l]);
    }
  }
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double validation_loss = 0.0;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_validation_loss = std::numeric_limits<double>::infinity();
};

struct TrainResult {
  Mlp net;
  TrainLog log;
};

/// Deterministic validation split used by every training call: seeded shuffle,
/// first floor(fraction * n) rows (at least one) go to validation.
inline void validation_split(std::size_t n, double fraction, std::uint64_t seed,
                             std::vector<std::size_t>& train_rows,
                             std::vector<std::size_t>& val_rows) {
  std::vector<std::size_t> idx = iota_indices(n);
  Rng rng(mix_seed(seed, 0x5a11));
  shuffle_in_place(idx, rng);
  std::size_t n_val = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n)));
  n_val = std::clamp<std::size_t>(n_val, 1, n - 1);
  val_rows.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_val));
  train_rows.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_val), idx.end());
}

inline void check_finite(const SampleMatrix& X, std::span<const double> y, const char* what) {
  if (!X.allFinite()) throw InvalidInput(std::string(what) + ": non-finite feature value");
  for (double v : y)
    if (!std::isfinite(v)) throw InvalidInput(std::string(what) + ": non-finite label value");
}

/// Mini-batch Adam on a scalar-output objective with early stopping on the
/// validation loss. The returned network holds the best validation weights.
template <class Objective>
TrainResult fit(Mlp net, const SampleMatrix& X, const Objective& objective, const TrainConfig& cfg) {
  cfg.validate();
  const std::size_t n = static_cast<std::size_t>(X.rows());
  if (n < 2) throw InvalidInput("training needs at least 2 samples");
  if (static_cast<std::size_t>(X.cols()) != net.input_dim())
    throw InvalidInput("training data has " + std::to_string(X.cols()) +
                       " features, network expects " + std::to_string(net.input_dim()));
  if (net.output_dim() != 1) throw InvalidInput("training supports scalar-output networks only");

  std::vector<std::size_t> train_rows, val_rows;
  validation_split(n, cfg.validation_fraction, cfg.seed, train_rows, val_rows);

  TrainResult result{net, {}};
  AdamState adam(net);
  Gradients grad = Gradients::zeros_like(net);
  Workspace ws;
  ws.post.resize(net.layer_count() + 1);
  std::size_t since_best = 0;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    Rng rng(mix_seed(cfg.seed, 0xE0000 + epoch));
    shuffle_in_place(train_rows, rng);
    double train_total = 0.0;
    for (std::size_t start = 0; start < train_rows.size(); start += cfg.batch_size) {
      const std::size_t len = std::min(cfg.batch_size, train_rows.size() - start);
      ws.post[0].resize(X.cols(), static_cast<Eigen::Index>(len));
      for (std::size_t j = 0; j < len; ++j)
        ws.post[0].col(static_cast<Eigen::Index>(j)) =
            X.row(static_cast<Eigen::Index>(train_rows[start + j])).transpose();
      forward_cached(net, ws);
      ws.delta.resize(1, static_cast<Eigen::Index>(len));
      const double inv_b = 1.0 / static_cast<double>(len);
      double batch_total = 0.0;
      for (std::size_t j = 0; j < len; ++j) {
        double g = 0.0;
        batch_total += objective(ws.post.back()(0, static_cast<Eigen::Index>(j)), train_rows[start + j], g);
        ws.delta(0, static_cast<Eigen::Index>(j)) = g * inv_b;
      }
      if (!std::isfinite(batch_total))
        throw TrainingError("non-finite training loss at epoch " + std::to_string(epoch));
      train_total += batch_total;
      backward(net, ws, grad);
      adam.update(net, grad, cfg.learning_rate);
    }

    const double val_loss = loss_and_gradient(net, X, val_rows, objective, nullptr);
    if (!std::isfinite(val_loss))
      throw TrainingError("non-finite validation loss at epoch " + std::to_string(epoch));
    result.log.epochs.push_back({epoch, train_total / static_cast<double>(train_rows.size()), val_loss});
    if (val_loss < result.log.best_validation_loss) {
      result.log.best_validation_loss = val_loss;
      result.log.best_epoch = epoch;
      result.net = net;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  return result;
}

inline void check_labels(const SampleMatrix& X, std::span<const double> y, const char* what) {
  if (X.rows() == 0) throw InvalidInput(std::string(what) + ": empty data");
  if (static_cast<std::size_t>(X.rows()) != y.size())
    throw InvalidInput(std::string(what) + ": " + std::to_string(X.rows()) + " rows but " +
                       std::to_string(y.size()) + " labels");
  check_finite(X, y, what);
}

/// Fit a mean network with mean-squared error.
inline TrainResult train_mse(Mlp net, const SampleMatrix& X, std::span<const double> y,
                             const TrainConfig& cfg) {
  check_labels(X, y, "train_mse");
  return fit(std::move(net), X, MseObjective{y}, cfg);
}

/// Fit a sigma network by Gaussian NLL while the mean network stays frozen.
inline TrainResult train_nll_fixed_mean(Mlp sigma_net, const Mlp& mean_net, const SampleMatrix& X,
                                        std::span<const double> y, const TrainConfig& cfg) {
  check_labels(X, y, "train_nll_fixed_mean");
  if (sigma_net.output_activation != Activation::Softplus)
    throw InvalidInput("train_nll_fixed_mean: sigma network must use a Softplus output");
  const Eigen::VectorXd mu = predict_scalar(mean_net, X);
  std::vector<double> residual(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) residual[i] = y[i] - mu(static_cast<Eigen::Index>(i));
  return fit(std::move(sigma_net), X, SigmaNllObjective{residual}, cfg);
}

/// Fit a mean network by Gaussian NLL with a fixed per-sample sigma.
inline TrainResult train_nll_fixed_sigma(Mlp mean_net, const SampleMatrix& X,
                                         std::span<const double> y, std::span<const double> sigma,
                                         const TrainConfig& cfg) {
  check_labels(X, y, "train_nll_fixed_sigma");
  if (sigma.size() != y.size()) throw InvalidInput("train_nll_fixed_sigma: sigma length mismatch");
  for (double s : sigma)
    if (!(s > 0.0)) throw InvalidInput("train_nll_fixed_sigma: sigma must be positive");
  return fit(std::move(mean_net), X, MeanNllObjective{y, sigma}, cfg);
}

}  // namespace nn
}  // namespace usnrt
