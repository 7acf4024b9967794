#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "usnrt/data.hpp"
#include "usnrt/error.hpp"
#include "usnrt/metrics.hpp"
#include "usnrt/nn.hpp"
#include "usnrt/random.hpp"

namespace usnrt::baselines {

struct HnnConfig {
  // Empty means [8d, 4d] for both networks.
  std::vector<std::size_t> hidden;
  std::size_t rounds = 2;
  nn::TrainConfig train;
  std::uint64_t seed = 0;
};

/// Heteroscedastic network: ReLU mean net and Tanh/Softplus sigma net.
struct HnnModel {
  nn::Mlp mean_net;
  nn::Mlp sigma_net;
  data::PreprocessState preprocessing;
};

struct HnnTrainingLog {
  std::vector<nn::TrainLog> phases;  // mean, sigma, mean, sigma, ...
  // Validation NLL of the full model after each (mean, sigma) round.
  std::vector<double> round_validation_nll;
};

/// Alternating NLL training: sigma starts at 1; each round fits the mean with
/// sigma frozen, then sigma with the mean frozen. Every phase validates on
/// the same held-out rows (split seeded by `cfg.train.seed`).
inline HnnModel train_hnn(const SampleMatrix& X, std::span<const double> y, const HnnConfig& cfg, std::size_t d_raw,
                          HnnTrainingLog* log = nullptr) {
  nn::check_labels(X, y, "train_hnn");
  if (cfg.rounds < 1) throw InvalidInput("train_hnn: rounds must be >= 1");
  const std::vector<std::size_t> hidden = cfg.hidden.empty() ? std::vector<std::size_t>{8 * d_raw, 4 * d_raw} : cfg.hidden;
  const auto sizes = nn::layers_for(static_cast<std::size_t>(X.cols()), hidden);
  HnnModel m;
  m.mean_net = nn::make_mlp(sizes, nn::Activation::ReLU, nn::Activation::Linear, mix_seed(cfg.seed, 1));
  m.sigma_net = nn::make_mlp(sizes, nn::Activation::Tanh, nn::Activation::Softplus, mix_seed(cfg.seed, 2));
  nn::TrainConfig tc = cfg.train;
  tc.seed = mix_seed(cfg.seed, 3);

  std::vector<std::size_t> train_rows, val_rows;
  nn::validation_split(static_cast<std::size_t>(X.rows()), tc.validation_fraction, tc.seed, train_rows, val_rows);

  std::vector<double> sigma(y.size(), 1.0);
  for (std::size_t round = 0; round < cfg.rounds; ++round) {
    auto mean = nn::train_nll_fixed_sigma(m.mean_net, X, y, sigma, tc);
    m.mean_net = std::move(mean.net);
    auto sig = nn::train_nll_fixed_mean(m.sigma_net, m.mean_net, X, y, tc);
    m.sigma_net = std::move(sig.net);
    const Eigen::VectorXd s = nn::predict_sigma(m.sigma_net, X);
    for (std::size_t i = 0; i < sigma.size(); ++i) sigma[i] = s(static_cast<Eigen::Index>(i));
    if (log) {
      log->phases.push_back(std::move(mean.log));
      log->phases.push_back(std::move(sig.log));
      const Eigen::VectorXd mu = nn::predict_scalar(m.mean_net, X);
      double total = 0.0;
      for (std::size_t r : val_rows)
        total += nn::nll_loss(y[r], mu(static_cast<Eigen::Index>(r)), sigma[r]);
      log->round_validation_nll.push_back(total / static_cast<double>(val_rows.size()));
    }
  }
  return m;
}

inline HnnModel train_hnn(const data::RawDataset& train, const HnnConfig& cfg, HnnTrainingLog* log = nullptr) {
  auto [state, enc] = data::fit_transform(train);
  HnnModel m = train_hnn(enc.X, enc.y, cfg, state.raw_dim(), log);
  m.preprocessing = std::move(state);
  return m;
}

inline std::vector<metrics::GaussianPrediction> predict_normalized(const HnnModel& m, const SampleMatrix& X) {
  const Eigen::VectorXd mu = nn::predict_scalar(m.mean_net, X);
  const Eigen::VectorXd sd = nn::predict_sigma(m.sigma_net, X);
  std::vector<metrics::GaussianPrediction> out(static_cast<std::size_t>(X.rows()));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = {mu(static_cast<Eigen::Index>(i)), sd(static_cast<Eigen::Index>(i))};
  return out;
}

struct EnsembleModel {
  std::vector<HnnModel> members;
  data::PreprocessState preprocessing;
};

inline constexpr std::size_t kDefaultEnsembleSize = 5;

inline std::uint64_t member_seed(std::uint64_t seed, std::size_t j) { return mix_seed(seed, 0xE5 + j); }

inline EnsembleModel train_ensemble(const SampleMatrix& X, std::span<const double> y, const HnnConfig& cfg,
                                    std::size_t d_raw, std::size_t members = kDefaultEnsembleSize,
                                    std::vector<HnnTrainingLog>* logs = nullptr) {
  if (members < 1) throw InvalidInput("train_ensemble: need at least one member");
  EnsembleModel e;
  if (logs) logs->assign(members, {});
  for (std::size_t j = 0; j < members; ++j) {
    HnnConfig c = cfg;
    c.seed = member_seed(cfg.seed, j);
    e.members.push_back(train_hnn(X, y, c, d_raw, logs ? &(*logs)[j] : nullptr));
  }
  return e;
}

inline EnsembleModel train_ensemble(const data::RawDataset& train, const HnnConfig& cfg,
                                    std::size_t members = kDefaultEnsembleSize,
                                    std::vector<HnnTrainingLog>* logs = nullptr) {
  auto [state, enc] = data::fit_transform(train);
  EnsembleModel e = train_ensemble(enc.X, enc.y, cfg, state.raw_dim(), members, logs);
  for (auto& m : e.members) m.preprocessing = state;
  e.preprocessing = std::move(state);
  return e;
}

/// Gaussian-mixture moment matching: mean of means, and variance equal to the
/// mean member variance plus the spread of member means. Running means keep
/// identical members reproducing the member output exactly.
inline metrics::GaussianPrediction aggregate(std::span<const metrics::GaussianPrediction> members) {
  if (members.empty()) throw InvalidInput("aggregate: no members");
  double mu = 0.0;
  double var = 0.0;
  for (std::size_t j = 0; j < members.size(); ++j) {
    const double w = 1.0 / static_cast<double>(j + 1);
    mu += (members[j].mu - mu) * w;
    var += (members[j].sigma * members[j].sigma - var) * w;
  }
  double spread = 0.0;
  for (std::size_t j = 0; j < members.size(); ++j) {
    const double dm = members[j].mu - mu;
    spread += (dm * dm - spread) / static_cast<double>(j + 1);
  }
  return {mu, std::sqrt(var + spread)};
}

inline std::vector<metrics::GaussianPrediction> ensemble_predict_normalized(const EnsembleModel& e,
                                                                            const SampleMatrix& X) {
  if (e.members.empty()) throw InvalidInput("ensemble_predict: no members");
  std::vector<std::vector<metrics::GaussianPrediction>> per_member;
  for (const auto& m : e.members) per_member.push_back(predict_normalized(m, X));
  std::vector<metrics::GaussianPrediction> out(static_cast<std::size_t>(X.rows()));
  std::vector<metrics::GaussianPrediction> column(e.members.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    for (std::size_t j = 0; j < e.members.size(); ++j) column[j] = per_member[j][i];
    out[i] = aggregate(column);
  }
  return out;
}

}  // namespace usnrt::baselines
