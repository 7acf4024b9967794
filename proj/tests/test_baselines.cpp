#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "usnrt/baselines.hpp"
#include "usnrt/data.hpp"

using namespace usnrt;
using namespace usnrt::baselines;
using metrics::GaussianPrediction;

namespace {

data::SynthSpec linear_homoscedastic(std::size_t n, std::uint64_t seed) {
  data::SynthSpec s;
  s.n = n;
  s.d = 1;
  s.sigma0 = s.sigma1 = {0.3, 0.0, 0};
  s.seed = seed;
  return s;
}

// Least-squares slope of b on a.
double ols_slope(const std::vector<double>& a, const std::vector<double>& b) {
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= static_cast<double>(a.size());
  mb /= static_cast<double>(b.size());
  double sab = 0, saa = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
  }
  return sab / saa;
}

}  // namespace

TEST(Aggregate, IdenticalMembersReproduceMember) {
  const std::vector<GaussianPrediction> same(5, GaussianPrediction{0.37, 1.23});
  const auto a = aggregate(same);
  EXPECT_EQ(a.mu, 0.37);
  EXPECT_EQ(a.sigma, 1.23);
}

TEST(Aggregate, TwoPointMixture) {
  const std::vector<GaussianPrediction> two{{-1.0, 0.0}, {1.0, 0.0}};
  const auto a = aggregate(two);
  EXPECT_EQ(a.mu, 0.0);
  EXPECT_NEAR(a.sigma * a.sigma, 1.0, 1e-15);
}

TEST(Aggregate, VarianceAtLeastMeanMemberVariance) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g;
  std::uniform_real_distribution<double> u(0.01, 3.0);
  for (int t = 0; t < 500; ++t) {
    std::vector<GaussianPrediction> m(1 + t % 7);
    double mean_var = 0, mean_mu = 0, mean_sq = 0;
    for (auto& p : m) {
      p = {g(rng), u(rng)};
      mean_var += p.sigma * p.sigma / static_cast<double>(m.size());
      mean_mu += p.mu / static_cast<double>(m.size());
      mean_sq += (p.sigma * p.sigma + p.mu * p.mu) / static_cast<double>(m.size());
    }
    const auto a = aggregate(m);
    EXPECT_GE(a.sigma * a.sigma, mean_var * (1 - 1e-12));
    EXPECT_NEAR(a.mu, mean_mu, 1e-12);
    EXPECT_NEAR(a.sigma * a.sigma, mean_sq - mean_mu * mean_mu, 1e-9);
  }
  EXPECT_THROW(aggregate(std::vector<GaussianPrediction>{}), InvalidInput);
}

TEST(Hnn, RecoversSlopeAndNoise) {
  const auto syn = data::generate_synthetic(linear_homoscedastic(4000, 1));
  HnnConfig cfg;
  cfg.seed = 7;
  const HnnModel m = train_hnn(syn.data, cfg);
  EXPECT_EQ(m.mean_net.hidden_activation, nn::Activation::ReLU);
  EXPECT_EQ(m.sigma_net.output_activation, nn::Activation::Softplus);
  EXPECT_EQ(m.mean_net.layer_sizes, (std::vector<std::size_t>{1, 8, 4, 1}));

  const auto preds = predict_normalized(m, data::transform(m.preprocessing, syn.data));
  const auto& lab = m.preprocessing.label;
  std::vector<double> mu, x = syn.data.features[0].numeric;
  double mean_sigma = 0;
  for (const auto& p : preds) {
    mu.push_back(m.preprocessing.denormalize_label(p.mu));
    mean_sigma += p.sigma * lab.std / static_cast<double>(preds.size());
  }
  EXPECT_NEAR(ols_slope(x, mu), 1.0, 0.05);
  EXPECT_NEAR(mean_sigma / 0.3, 1.0, 0.15);
}

TEST(Hnn, DeterministicForSeed) {
  const auto syn = data::generate_synthetic(linear_homoscedastic(800, 2));
  HnnConfig cfg;
  cfg.seed = 11;
  cfg.train.max_epochs = 40;
  const HnnModel a = train_hnn(syn.data, cfg), b = train_hnn(syn.data, cfg);
  EXPECT_TRUE(a.mean_net == b.mean_net);
  EXPECT_TRUE(a.sigma_net == b.sigma_net);
  cfg.seed = 12;
  const HnnModel c = train_hnn(syn.data, cfg);
  EXPECT_FALSE(a.mean_net == c.mean_net);
}

TEST(Hnn, RoundValidationNllMostlyNonIncreasing) {
  int monotone = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    data::SynthSpec s;
    s.n = 2000;
    s.d = 2;
    s.f1 = data::MeanShape::Sine;
    s.sigma0 = {0.2, 0.1, 1};
    s.sigma1 = {0.6, 0.0, 0};
    s.seed = 100 + seed;
    const auto syn = data::generate_synthetic(s);
    HnnConfig cfg;
    cfg.seed = seed;
    HnnTrainingLog log;
    train_hnn(syn.data, cfg, &log);
    ASSERT_EQ(log.round_validation_nll.size(), 2u);
    ASSERT_EQ(log.phases.size(), 4u);
    monotone += log.round_validation_nll[1] <= log.round_validation_nll[0];
  }
  EXPECT_GE(monotone, 8);
}

TEST(Hnn, RejectsBadInput) {
  SampleMatrix X = SampleMatrix::Zero(10, 2);
  std::vector<double> y(9, 0.0);
  EXPECT_THROW(train_hnn(X, y, HnnConfig{}, 2), InvalidInput);
  HnnConfig zero_rounds;
  zero_rounds.rounds = 0;
  std::vector<double> y10(10, 0.0);
  EXPECT_THROW(train_hnn(X, y10, zero_rounds, 2), InvalidInput);
}

TEST(Ensemble, MembersDifferAndPredictionsAggregate) {
  const auto syn = data::generate_synthetic(linear_homoscedastic(600, 3));
  HnnConfig cfg;
  cfg.seed = 5;
  cfg.train.max_epochs = 30;
  const EnsembleModel e = train_ensemble(syn.data, cfg);
  ASSERT_EQ(e.members.size(), kDefaultEnsembleSize);
  EXPECT_FALSE(e.members[0].mean_net == e.members[1].mean_net);
  const SampleMatrix X = data::transform(e.preprocessing, syn.data);
  const auto agg = ensemble_predict_normalized(e, X);
  std::vector<std::vector<GaussianPrediction>> per;
  for (const auto& m : e.members) per.push_back(predict_normalized(m, X));
  for (std::size_t i = 0; i < agg.size(); i += 37) {
    std::vector<GaussianPrediction> col;
    for (const auto& p : per) col.push_back(p[i]);
    const auto want = aggregate(col);
    EXPECT_EQ(agg[i].mu, want.mu);
    EXPECT_EQ(agg[i].sigma, want.sigma);
  }
  EXPECT_THROW(train_ensemble(syn.data, cfg, 0), InvalidInput);
}
