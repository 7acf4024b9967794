#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "usnrt/data.hpp"
#include "usnrt/error.hpp"
#include "usnrt/metrics.hpp"
#include "usnrt/nn.hpp"
#include "usnrt/random.hpp"
#include "usnrt/stats.hpp"

namespace usnrt::tree {

inline constexpr std::size_t kMaxCandidatesPerFeature = 256;

struct UsnrtConfig {
  double alpha = 0.01;
  // Explicit leaf-size floor; when unset, max(N_train / n_leaves, 1000).
  std::optional<std::size_t> n_min;
  std::size_t n_leaves = 10;
  // Explicit threshold stride; when unset, chosen per node for <= 256 candidates per feature.
  std::optional<std::size_t> split_stride;
  // Hidden sizes; empty means [8d, 4d] for the splitting net and [4d, 2d] for leaf nets.
  std::vector<std::size_t> split_net_hidden;
  std::vector<std::size_t> leaf_net_hidden;
  // 0 means unlimited. Not part of the stopping rules; used to cap growth in experiments.
  std::size_t max_depth = 0;
  nn::TrainConfig train;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(alpha > 0.0 && alpha < 1.0)) throw InvalidInput("alpha must lie in (0, 1)");
    if (n_min && *n_min < 2) throw InvalidInput("n_min must be >= 2");
    if (n_leaves < 1) throw InvalidInput("n_leaves must be >= 1");
    if (split_stride && *split_stride < 1) throw InvalidInput("split_stride must be >= 1");
    train.validate();
  }

  std::size_t resolve_n_min(std::size_t n_train) const {
    if (n_min) return *n_min;
    return std::max<std::size_t>(n_train / n_leaves, 1000);
  }
  std::vector<std::size_t> resolve_split_hidden(std::size_t d) const {
    return split_net_hidden.empty() ? std::vector<std::size_t>{8 * d, 4 * d} : split_net_hidden;
  }
  std::vector<std::size_t> resolve_leaf_hidden(std::size_t d) const {
    return leaf_net_hidden.empty() ? std::vector<std::size_t>{4 * d, 2 * d} : leaf_net_hidden;
  }
};

struct SplitCandidate {
  std::size_t feature = 0;
  double threshold = 0.0;
  double p_value = 1.0;
  double statistic = 0.0;
  std::size_t left_count = 0;
};

/// Distinct cut positions in a sorted column: position i separates sorted[0..i]
/// from sorted[i+1..], requires sorted[i] < sorted[i+1] and both sides >= n_min.
inline std::vector<std::size_t> feasible_cuts(std::span<const double> sorted_values, std::size_t n_min) {
  std::vector<std::size_t> cuts;
  const std::size_t n = sorted_values.size();
  if (n < 2 * n_min || n_min == 0) return cuts;
  for (std::size_t i = n_min - 1; i + n_min < n; ++i)
    if (sorted_values[i] < sorted_values[i + 1]) cuts.push_back(i);
  return cuts;
}

inline std::size_t auto_stride(std::size_t cut_count) {
  return std::max<std::size_t>(1, (cut_count + kMaxCandidatesPerFeature - 1) / kMaxCandidatesPerFeature);
}

/// Search every column and threshold for the split whose residual groups
/// differ most in spread under Levene's test. All candidates in one node share
/// the same degrees of freedom, so the smallest p-value is the largest |T|;
/// ranking by |T| avoids ties among p-values that underflow to zero. Equal |T|
/// keeps the earlier candidate (smaller feature, then smaller threshold).
inline std::optional<SplitCandidate> find_best_split(const SampleMatrix& X, std::span<const double> residuals,
                                                     std::size_t n_min,
                                                     std::optional<std::size_t> stride = std::nullopt) {
  const std::size_t n = static_cast<std::size_t>(X.rows());
  if (residuals.size() != n) throw InvalidInput("find_best_split: residual count differs from row count");
  if (stride && *stride < 1) throw InvalidInput("find_best_split: stride must be >= 1");
  std::optional<SplitCandidate> best;
  double best_abs_t = -1.0;
  std::vector<std::size_t> order(n);
  std::vector<double> values(n), sorted_res(n);
  for (Eigen::Index k = 0; k < X.cols(); ++k) {
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return X(static_cast<Eigen::Index>(a), k) < X(static_cast<Eigen::Index>(b), k);
    });
    for (std::size_t i = 0; i < n; ++i) {
      values[i] = X(static_cast<Eigen::Index>(order[i]), k);
      sorted_res[i] = residuals[order[i]];
    }
    const std::vector<std::size_t> cuts = feasible_cuts(values, n_min);
    const std::size_t step = stride ? *stride : auto_stride(cuts.size());
    for (std::size_t c = 0; c < cuts.size(); c += step) {
      const std::size_t i = cuts[c];
      stats::LeveneResult lr;
      try {
        lr = stats::levene_test(std::span<const double>(sorted_res.data(), i + 1),
                                std::span<const double>(sorted_res.data() + i + 1, n - i - 1));
      } catch (const DegenerateVariance&) {
        continue;
      }
      const double abs_t = std::fabs(lr.statistic);
      if (abs_t > best_abs_t) {
        best_abs_t = abs_t;
        best = SplitCandidate{static_cast<std::size_t>(k), values[i], lr.p_value, lr.statistic, i + 1};
      }
    }
  }
  return best;
}

struct InternalNode {
  std::size_t feature = 0;
  double threshold = 0.0;
  double p_value = 0.0;
  std::size_t sample_count = 0;
  std::size_t depth = 0;
  std::size_t left = 0;
  std::size_t right = 0;
  nn::Mlp split_net;  // kept for residual inspection of the split
};

struct LeafNode {
  std::size_t region_id = 0;
  std::size_t train_count = 0;
  std::size_t depth = 0;
  double residual_std = 0.0;
  // Best p-value found at this node when a split was searched but rejected.
  std::optional<double> p_best;
  nn::Mlp mean_net;
  nn::Mlp sigma_net;
};

using TreeNode = std::variant<InternalNode, LeafNode>;

/// Fitted tree. Nodes are stored in preorder; node 0 is the root.
struct UsnrtModel {
  std::vector<TreeNode> nodes;
  UsnrtConfig config;
  data::PreprocessState preprocessing;
  std::size_t n_train = 0;
  std::size_t n_min = 0;
  std::size_t depth = 0;
  std::size_t leaf_count = 0;

  /// Index of the leaf node accepting x (encoded, normalized features).
  std::size_t route(std::span<const double> x) const {
    std::size_t i = 0;
    while (const auto* in = std::get_if<InternalNode>(&nodes[i])) i = x[in->feature] <= in->threshold ? in->left : in->right;
    return i;
  }
  std::size_t route_row(const SampleMatrix& X, Eigen::Index r) const {
    std::size_t i = 0;
    while (const auto* in = std::get_if<InternalNode>(&nodes[i]))
      i = X(r, static_cast<Eigen::Index>(in->feature)) <= in->threshold ? in->left : in->right;
    return i;
  }
  const LeafNode& leaf(std::size_t node) const { return std::get<LeafNode>(nodes[node]); }
  std::vector<std::size_t> leaf_nodes() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < nodes.size(); ++i)
      if (std::holds_alternative<LeafNode>(nodes[i])) out.push_back(i);
    return out;
  }
};

struct NodeTrainingLog {
  std::string path;   // "root", "root.L", "root.L.R", ...
  std::string phase;  // "split", "mean" or "sigma"
  nn::TrainLog log;
};

struct BuildReport {
  std::vector<NodeTrainingLog> training;
};

namespace detail {

inline SampleMatrix gather_rows(const SampleMatrix& X, std::span<const std::size_t> rows) {
  SampleMatrix out(static_cast<Eigen::Index>(rows.size()), X.cols());
  for (std::size_t i = 0; i < rows.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) = X.row(static_cast<Eigen::Index>(rows[i]));
  return out;
}

inline std::vector<double> gather(std::span<const double> v, std::span<const std::size_t> rows) {
  std::vector<double> out(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) out[i] = v[rows[i]];
  return out;
}

inline nn::TrainConfig seeded(const nn::TrainConfig& base, std::uint64_t seed) {
  nn::TrainConfig c = base;
  c.seed = seed;
  return c;
}

enum Salt : std::uint64_t { kLeftChild = 1, kRightChild = 2, kSplitNet = 10, kMeanNet = 11, kSigmaNet = 12 };

struct Grower {
  const SampleMatrix& X;
  std::span<const double> y;
  const UsnrtConfig& cfg;
  std::size_t d_raw;
  std::size_t n_min;
  BuildReport* report;
  std::vector<TreeNode> nodes;
  std::vector<std::vector<std::size_t>> leaf_rows;  // parallel to nodes; only filled for leaves
  std::vector<std::uint64_t> node_seed;
  std::vector<std::string> node_path;

  std::size_t grow(std::vector<std::size_t> rows, std::size_t depth, std::uint64_t seed, std::string path) {
    const std::size_t index = nodes.size();
    nodes.emplace_back(LeafNode{});
    leaf_rows.emplace_back();
    node_seed.push_back(seed);
    node_path.push_back(path);

    auto make_leaf = [&](std::optional<double> p_best) {
      LeafNode leaf;
      leaf.train_count = rows.size();
      leaf.depth = depth;
      leaf.p_best = p_best;
      nodes[index] = std::move(leaf);
      leaf_rows[index] = std::move(rows);
      return index;
    };

    if (rows.size() < 2 * n_min) return make_leaf(std::nullopt);
    if (cfg.max_depth != 0 && depth >= cfg.max_depth) return make_leaf(std::nullopt);

    const SampleMatrix Xn = gather_rows(X, rows);
    const std::vector<double> yn = gather(y, rows);
    nn::Mlp init = nn::make_mlp(nn::layers_for(static_cast<std::size_t>(X.cols()), cfg.resolve_split_hidden(d_raw)),
                                nn::Activation::Tanh, nn::Activation::Linear, mix_seed(seed, kSplitNet + 100));
    nn::TrainResult split;
    try {
      split = nn::train_mse(std::move(init), Xn, yn, seeded(cfg.train, mix_seed(seed, kSplitNet)));
    } catch (const std::exception& e) {
      throw TrainingError("node " + path + " (splitting network): " + e.what());
    }
    if (report) report->training.push_back({path, "split", split.log});

    const Eigen::VectorXd fitted = nn::predict_scalar(split.net, Xn);
    std::vector<double> residual(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) residual[i] = yn[i] - fitted(static_cast<Eigen::Index>(i));

    const auto best = find_best_split(Xn, residual, n_min, cfg.split_stride);
    if (!best) return make_leaf(std::nullopt);
    if (best->p_value > cfg.alpha) return make_leaf(best->p_value);

    std::vector<std::size_t> left_rows, right_rows;
    for (std::size_t r : rows)
      (X(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(best->feature)) <= best->threshold ? left_rows : right_rows)
          .push_back(r);

    InternalNode node;
    node.feature = best->feature;
    node.threshold = best->threshold;
    node.p_value = best->p_value;
    node.sample_count = rows.size();
    node.depth = depth;
    node.split_net = std::move(split.net);
    rows.clear();
    rows.shrink_to_fit();
    node.left = grow(std::move(left_rows), depth + 1, mix_seed(seed, kLeftChild), path + ".L");
    node.right = grow(std::move(right_rows), depth + 1, mix_seed(seed, kRightChild), path + ".R");
    nodes[index] = std::move(node);
    return index;
  }

  void train_leaf(std::size_t index) {
    auto& leaf = std::get<LeafNode>(nodes[index]);
    const auto& rows = leaf_rows[index];
    const std::uint64_t seed = node_seed[index];
    const std::string& path = node_path[index];
    const SampleMatrix Xn = gather_rows(X, rows);
    const std::vector<double> yn = gather(y, rows);
    const auto sizes = nn::layers_for(static_cast<std::size_t>(X.cols()), cfg.resolve_leaf_hidden(d_raw));
    try {
      auto mean = nn::train_mse(
          nn::make_mlp(sizes, nn::Activation::Tanh, nn::Activation::Linear, mix_seed(seed, kMeanNet + 100)), Xn,
          yn, seeded(cfg.train, mix_seed(seed, kMeanNet)));
      if (report) report->training.push_back({path, "mean", mean.log});
      auto sigma = nn::train_nll_fixed_mean(
          nn::make_mlp(sizes, nn::Activation::Tanh, nn::Activation::Softplus, mix_seed(seed, kSigmaNet + 100)),
          mean.net, Xn, yn, seeded(cfg.train, mix_seed(seed, kSigmaNet)));
      if (report) report->training.push_back({path, "sigma", sigma.log});
      leaf.mean_net = std::move(mean.net);
      leaf.sigma_net = std::move(sigma.net);
    } catch (const std::exception& e) {
      throw TrainingError("node " + path + " (leaf networks): " + e.what());
    }
    const Eigen::VectorXd mu = nn::predict_scalar(leaf.mean_net, Xn);
    double ss = 0.0;
    for (std::size_t i = 0; i < yn.size(); ++i) ss += (yn[i] - mu(static_cast<Eigen::Index>(i))) * (yn[i] - mu(static_cast<Eigen::Index>(i)));
    leaf.residual_std = std::sqrt(ss / static_cast<double>(yn.size()));
  }
};

}  // namespace detail

inline UsnrtModel assemble(detail::Grower& g, const UsnrtConfig& cfg, std::size_t n_train) {
  UsnrtModel model;
  model.config = cfg;
  model.n_train = n_train;
  model.n_min = g.n_min;
  std::size_t region = 0;
  for (auto& node : g.nodes) {
    if (auto* leaf = std::get_if<LeafNode>(&node)) {
      leaf->region_id = ++region;
      model.depth = std::max(model.depth, leaf->depth);
    }
  }
  model.leaf_count = region;
  model.nodes = std::move(g.nodes);
  return model;
}

/// Grow the partition only (no leaf networks). Leaves carry sample counts but
/// empty networks; useful for inspecting the split structure cheaply.
inline UsnrtModel grow_structure(const SampleMatrix& X, std::span<const double> y, const UsnrtConfig& cfg,
                                 std::size_t d_raw, BuildReport* report = nullptr) {
  cfg.validate();
  nn::check_labels(X, y, "build");
  if (X.rows() < 2) throw InvalidInput("build: need at least 2 rows");
  detail::Grower g{X, y, cfg, d_raw, cfg.resolve_n_min(static_cast<std::size_t>(X.rows())), report, {}, {}, {}, {}};
  g.grow(iota_indices(static_cast<std::size_t>(X.rows())), 0, mix_seed(cfg.seed, 0), "root");
  return assemble(g, cfg, static_cast<std::size_t>(X.rows()));
}

/// Build a USNRT on encoded features X and normalized labels y. `d_raw` is the
/// pre-encoding feature count used to size the networks.
inline UsnrtModel build(const SampleMatrix& X, std::span<const double> y, const UsnrtConfig& cfg, std::size_t d_raw,
                        BuildReport* report = nullptr) {
  cfg.validate();
  nn::check_labels(X, y, "build");
  if (X.rows() < 2) throw InvalidInput("build: need at least 2 rows");
  detail::Grower g{X, y, cfg, d_raw, cfg.resolve_n_min(static_cast<std::size_t>(X.rows())), report, {}, {}, {}, {}};
  g.grow(iota_indices(static_cast<std::size_t>(X.rows())), 0, mix_seed(cfg.seed, 0), "root");
  for (std::size_t i = 0; i < g.nodes.size(); ++i)
    if (std::holds_alternative<LeafNode>(g.nodes[i])) g.train_leaf(i);
  return assemble(g, cfg, static_cast<std::size_t>(X.rows()));
}

/// Fit preprocessing on the raw training rows, then build.
inline UsnrtModel build(const data::RawDataset& train, const UsnrtConfig& cfg, BuildReport* report = nullptr) {
  auto [state, enc] = data::fit_transform(train);
  UsnrtModel model = build(enc.X, enc.y, cfg, state.raw_dim(), report);
  model.preprocessing = std::move(state);
  return model;
}

/// Predictions on the normalized label scale for encoded features.
inline std::vector<metrics::GaussianPrediction> predict_normalized(const UsnrtModel& model, const SampleMatrix& X) {
  if (model.nodes.empty()) throw InvalidInput("predict: empty model");
  const auto* first_leaf = &model.leaf(model.leaf_nodes().front());
  if (static_cast<std::size_t>(X.cols()) != first_leaf->mean_net.input_dim())
    throw InvalidInput("predict: data has " + std::to_string(X.cols()) + " encoded features, model expects " +
                       std::to_string(first_leaf->mean_net.input_dim()));
  const std::size_t n = static_cast<std::size_t>(X.rows());
  std::vector<std::vector<std::size_t>> members(model.nodes.size());
  for (std::size_t i = 0; i < n; ++i) members[model.route_row(X, static_cast<Eigen::Index>(i))].push_back(i);
  std::vector<metrics::GaussianPrediction> out(n);
  for (std::size_t node = 0; node < members.size(); ++node) {
    if (members[node].empty()) continue;
    const LeafNode& leaf = model.leaf(node);
    const SampleMatrix Xl = detail::gather_rows(X, members[node]);
    const Eigen::VectorXd mu = nn::predict_scalar(leaf.mean_net, Xl);
    const Eigen::VectorXd sd = nn::predict_sigma(leaf.sigma_net, Xl);
    for (std::size_t j = 0; j < members[node].size(); ++j)
      out[members[node][j]] = {mu(static_cast<Eigen::Index>(j)), sd(static_cast<Eigen::Index>(j))};
  }
  return out;
}

/// Predictions in original label units for raw rows.
inline std::vector<metrics::GaussianPrediction> predict(const UsnrtModel& model, const data::RawDataset& ds) {
  auto preds = predict_normalized(model, data::transform(model.preprocessing, ds));
  const auto& lab = model.preprocessing.label;
  for (auto& p : preds) {
    p.mu = p.mu * lab.std + lab.mean;
    p.sigma *= lab.std;
  }
  return preds;
}

struct LeafReportRow {
  std::size_t region_id = 0;
  std::size_t count = 0;
  std::optional<double> residual_std;  // absent when no sample reaches the leaf
};

/// Residual standard deviation sqrt(mean (y - f_m(x))^2) per leaf region.
inline std::vector<LeafReportRow> leaf_report(const UsnrtModel& model, const SampleMatrix& X, std::span<const double> y) {
  if (static_cast<std::size_t>(X.rows()) != y.size()) throw InvalidInput("leaf_report: row/label count mismatch");
  const auto preds = predict_normalized(model, X);
  std::vector<double> ss(model.nodes.size(), 0.0);
  std::vector<std::size_t> count(model.nodes.size(), 0);
  for (std::size_t i = 0; i < y.size(); ++i) {
    const std::size_t node = model.route_row(X, static_cast<Eigen::Index>(i));
    const double r = y[i] - preds[i].mu;
    ss[node] += r * r;
    ++count[node];
  }
  std::vector<LeafReportRow> rows;
  for (std::size_t node : model.leaf_nodes()) {
    LeafReportRow row{model.leaf(node).region_id, count[node], std::nullopt};
    if (count[node] > 0) row.residual_std = std::sqrt(ss[node] / static_cast<double>(count[node]));
    rows.push_back(row);
  }
  return rows;
}

}  // namespace usnrt::tree
