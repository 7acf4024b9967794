// usnrt: command-line front end for the uncertainty-splitting regression tree
// and its variance-network baselines.
//
//   usnrt synth     --out DIR [--n N --d D --boundary K --f0 linear --f1 sine --sigma0 0.1 --sigma1 1.0]
//   usnrt train     --data CSV --schema TXT [--model-kind usnrt|hnn|ensemble] [--config JSON]
//   usnrt evaluate  --model BIN --data CSV --schema TXT
//   usnrt predict   --model BIN --data CSV --schema TXT
//   usnrt benchmark --data CSV --schema TXT [--seed N]... [--model-kind K]...
//   usnrt inspect   --model BIN --data CSV --schema TXT [--companion NAME]
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 training failure.

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "usnrt/usnrt.hpp"

namespace {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;
using namespace usnrt;

enum ExitCode : int { kOk = 0, kUsage = 1, kData = 2, kTraining = 3 };

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shortest decimal text that reads back to the same double.
std::string num(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return ec == std::errc{} ? std::string(buf, end) : std::string("?");
}

json json_num(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  return out;
}

void write_json(const fs::path& path, const json& j) { open_out(path) << j.dump(2) << '\n'; }

// ---------------------------------------------------------------------------
// Configuration: JSON file values, then command-line overrides.

struct RunConfig {
  std::string data;
  std::string schema;
  std::string model;
  std::vector<std::string> model_kinds;
  std::vector<std::uint64_t> seeds;
  std::string out;
  double test_fraction = 0.2;
  tree::UsnrtConfig tree;
  baselines::HnnConfig hnn;
  std::size_t ensemble_members = baselines::kDefaultEnsembleSize;

  json to_json() const {
    json j;
    j["data"] = data;
    j["schema"] = schema;
    if (!model.empty()) j["model"] = model;
    j["model_kind"] = model_kinds;
    j["seeds"] = seeds;
    j["out"] = out;
    j["test_fraction"] = test_fraction;
    j["alpha"] = tree.alpha;
    j["n_leaves"] = tree.n_leaves;
    j["n_min"] = tree.n_min ? json(*tree.n_min) : json(nullptr);
    j["stride"] = tree.split_stride ? json(*tree.split_stride) : json(nullptr);
    j["max_depth"] = tree.max_depth;
    j["split_hidden"] = tree.split_net_hidden;
    j["leaf_hidden"] = tree.leaf_net_hidden;
    const auto& t = tree.train;
    j["train"] = {{"batch_size", t.batch_size},
                  {"learning_rate", t.learning_rate},
                  {"max_epochs", t.max_epochs},
                  {"patience", t.patience},
                  {"validation_fraction", t.validation_fraction}};
    j["hnn"] = {{"hidden", hnn.hidden}, {"rounds", hnn.rounds}, {"members", ensemble_members}};
    return j;
  }
};

template <class T>
T get_as(const json& j, const std::string& key) {
  try {
    return j.get<T>();
  } catch (const json::exception&) {
    throw UsageError("config key \"" + key + "\" has the wrong type");
  }
}

void apply_train_json(const json& j, nn::TrainConfig& t) {
  for (const auto& [key, v] : j.items()) {
    if (key == "batch_size") t.batch_size = get_as<std::size_t>(v, key);
    else if (key == "learning_rate") t.learning_rate = get_as<double>(v, key);
    else if (key == "max_epochs") t.max_epochs = get_as<std::size_t>(v, key);
    else if (key == "patience") t.patience = get_as<std::size_t>(v, key);
    else if (key == "validation_fraction") t.validation_fraction = get_as<double>(v, key);
    else throw UsageError("unknown config key \"train." + key + "\"");
  }
}

void apply_config_file(const std::string& path, RunConfig& rc) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config file " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw UsageError("config file " + path + ": " + e.what());
  }
  if (!j.is_object()) throw UsageError("config file " + path + " must hold a JSON object");
  for (const auto& [key, v] : j.items()) {
    if (key == "data") rc.data = get_as<std::string>(v, key);
    else if (key == "schema") rc.schema = get_as<std::string>(v, key);
    else if (key == "model") rc.model = get_as<std::string>(v, key);
    else if (key == "model_kind")
      rc.model_kinds = v.is_array() ? get_as<std::vector<std::string>>(v, key)
                                    : std::vector<std::string>{get_as<std::string>(v, key)};
    else if (key == "seeds") rc.seeds = get_as<std::vector<std::uint64_t>>(v, key);
    else if (key == "out") rc.out = get_as<std::string>(v, key);
    else if (key == "test_fraction") rc.test_fraction = get_as<double>(v, key);
    else if (key == "alpha") rc.tree.alpha = get_as<double>(v, key);
    else if (key == "n_leaves") rc.tree.n_leaves = get_as<std::size_t>(v, key);
    else if (key == "n_min") rc.tree.n_min = v.is_null() ? std::nullopt : std::optional(get_as<std::size_t>(v, key));
    else if (key == "stride")
      rc.tree.split_stride = v.is_null() ? std::nullopt : std::optional(get_as<std::size_t>(v, key));
    else if (key == "max_depth") rc.tree.max_depth = get_as<std::size_t>(v, key);
    else if (key == "split_hidden") rc.tree.split_net_hidden = get_as<std::vector<std::size_t>>(v, key);
    else if (key == "leaf_hidden") rc.tree.leaf_net_hidden = get_as<std::vector<std::size_t>>(v, key);
    else if (key == "train") apply_train_json(v, rc.tree.train);
    else if (key == "hnn") {
      for (const auto& [hk, hv] : v.items()) {
        if (hk == "hidden") rc.hnn.hidden = get_as<std::vector<std::size_t>>(hv, hk);
        else if (hk == "rounds") rc.hnn.rounds = get_as<std::size_t>(hv, hk);
        else if (hk == "members") rc.ensemble_members = get_as<std::size_t>(hv, hk);
        else throw UsageError("unknown config key \"hnn." + hk + "\"");
      }
    } else
      throw UsageError("unknown config key \"" + key + "\"");
  }
}

struct Flags {
  std::string config;
  std::string data, schema, model, out;
  std::vector<std::string> model_kinds;
  std::vector<std::uint64_t> seeds;
  std::optional<double> alpha, test_fraction;
  std::optional<std::size_t> n_min, n_leaves, stride, max_depth, max_epochs, members;
};

void add_common(CLI::App* cmd, Flags& f, bool model_options) {
  cmd->add_option("--config", f.config, "JSON config file; flags override its values")->check(CLI::ExistingFile);
  cmd->add_option("--out", f.out, "Output directory (default: $USNRT_OUT_ROOT/<command>)");
  cmd->add_option("--seed", f.seeds, "Random seed; repeat for several seeds");
  if (!model_options) return;
  cmd->add_option("--model-kind", f.model_kinds, "usnrt, hnn or ensemble; repeatable for benchmark");
  cmd->add_option("--alpha", f.alpha, "Significance level for splitting");
  cmd->add_option("--n-min", f.n_min, "Minimum training samples per leaf");
  cmd->add_option("--n-leaves", f.n_leaves, "Sets n_min = max(N_train / N_leaves, 1000)");
  cmd->add_option("--stride", f.stride, "Threshold stride in the split search");
  cmd->add_option("--max-depth", f.max_depth, "Depth cap (0 = none)");
  cmd->add_option("--max-epochs", f.max_epochs, "Epoch cap for every network");
  cmd->add_option("--members", f.members, "Ensemble size");
}

RunConfig resolve(const Flags& f, const std::string& command) {
  RunConfig rc;
  if (!f.config.empty()) apply_config_file(f.config, rc);
  if (!f.data.empty()) rc.data = f.data;
  if (!f.schema.empty()) rc.schema = f.schema;
  if (!f.model.empty()) rc.model = f.model;
  if (!f.out.empty()) rc.out = f.out;
  if (!f.model_kinds.empty()) rc.model_kinds = f.model_kinds;
  if (!f.seeds.empty()) rc.seeds = f.seeds;
  if (f.alpha) rc.tree.alpha = *f.alpha;
  if (f.test_fraction) rc.test_fraction = *f.test_fraction;
  if (f.n_min) rc.tree.n_min = *f.n_min;
  if (f.n_leaves) rc.tree.n_leaves = *f.n_leaves;
  if (f.stride) rc.tree.split_stride = *f.stride;
  if (f.max_depth) rc.tree.max_depth = *f.max_depth;
  if (f.max_epochs) rc.tree.train.max_epochs = *f.max_epochs;
  if (f.members) rc.ensemble_members = *f.members;
  rc.hnn.train = rc.tree.train;
  const bool bench = command == "benchmark";
  if (rc.model_kinds.empty())
    rc.model_kinds = bench ? std::vector<std::string>{"usnrt", "hnn", "ensemble"} : std::vector<std::string>{"usnrt"};
  if (rc.seeds.empty()) rc.seeds = bench ? std::vector<std::uint64_t>{0, 1, 2, 3, 4} : std::vector<std::uint64_t>{0};
  for (const auto& k : rc.model_kinds) io::parse_model_kind(k);
  if (rc.ensemble_members < 1) throw UsageError("--members must be >= 1");
  rc.tree.validate();
  if (rc.out.empty()) {
    const char* root = std::getenv("USNRT_OUT_ROOT");
    rc.out = (fs::path(root && *root ? root : "usnrt_runs") / command).string();
  }
  return rc;
}

void require(const std::string& value, const char* what) {
  if (value.empty()) throw UsageError(std::string("missing ") + what);
}

fs::path prepare_out(const RunConfig& rc) {
  const fs::path dir(rc.out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create output directory " + dir.string() + ": " + ec.message());
  return dir;
}

data::RawDataset load_dataset(const RunConfig& rc) {
  require(rc.data, "--data");
  require(rc.schema, "--schema");
  return data::load_csv(rc.data, data::load_schema(rc.schema));
}

// ---------------------------------------------------------------------------
// Training.

struct LogWriter {
  std::ofstream out;
  explicit LogWriter(const fs::path& path) : out(open_out(path)) {
    out << "model,node,phase,epoch,train_loss,validation_loss,best_epoch\n";
  }
  void write(const std::string& model, const std::string& node, const std::string& phase, const nn::TrainLog& log) {
    for (const auto& e : log.epochs)
      out << model << ',' << node << ',' << phase << ',' << e.epoch << ',' << num(e.train_loss) << ','
          << num(e.validation_loss) << ',' << log.best_epoch << '\n';
  }
  void write_hnn(const std::string& model, const std::string& node, const baselines::HnnTrainingLog& log) {
    for (std::size_t p = 0; p < log.phases.size(); ++p)
      write(model, node, (p % 2 == 0 ? "mean" : "sigma") + std::to_string(p / 2 + 1), log.phases[p]);
  }
};

struct Trained {
  io::AnyModel model;
  std::optional<tree::BuildReport> tree_report;
  std::vector<baselines::HnnTrainingLog> hnn_logs;
};

Trained train_kind(io::ModelKind kind, const data::RawDataset& train, const RunConfig& rc, std::uint64_t seed) {
  Trained t;
  switch (kind) {
    case io::ModelKind::Usnrt: {
      tree::UsnrtConfig cfg = rc.tree;
      cfg.seed = seed;
      t.tree_report.emplace();
      t.model = tree::build(train, cfg, &*t.tree_report);
      break;
    }
    case io::ModelKind::Hnn: {
      baselines::HnnConfig cfg = rc.hnn;
      cfg.seed = seed;
      t.hnn_logs.resize(1);
      t.model = baselines::train_hnn(train, cfg, &t.hnn_logs[0]);
      break;
    }
    case io::ModelKind::Ensemble: {
      baselines::HnnConfig cfg = rc.hnn;
      cfg.seed = seed;
      t.model = baselines::train_ensemble(train, cfg, rc.ensemble_members, &t.hnn_logs);
      break;
    }
  }
  return t;
}

json tree_summary(const io::AnyModel& any) {
  json j;
  j["model_kind"] = io::kind_name(io::kind_of(any));
  const auto& pre = io::preprocessing_of(any);
  j["features"] = pre.encoded_names();
  j["label"] = pre.label_name;
  if (const auto* m = std::get_if<tree::UsnrtModel>(&any)) {
    j["depth"] = m->depth;
    j["leaf_count"] = m->leaf_count;
    j["n_min"] = m->n_min;
    j["n_train"] = m->n_train;
    json nodes = json::array();
    // Preorder walk to recover paths.
    std::vector<std::pair<std::size_t, std::string>> stack{{0, "root"}};
    std::vector<std::string> paths(m->nodes.size());
    while (!stack.empty()) {
      auto [i, path] = stack.back();
      stack.pop_back();
      paths[i] = path;
      if (const auto* in = std::get_if<tree::InternalNode>(&m->nodes[i])) {
        stack.push_back({in->right, path + ".R"});
        stack.push_back({in->left, path + ".L"});
      }
    }
    for (std::size_t i = 0; i < m->nodes.size(); ++i) {
      json n;
      n["index"] = i;
      n["path"] = paths[i];
      if (const auto* in = std::get_if<tree::InternalNode>(&m->nodes[i])) {
        n["type"] = "split";
        n["depth"] = in->depth;
        n["samples"] = in->sample_count;
        n["feature"] = pre.encoded_names()[in->feature];
        n["threshold"] = json_num(pre.to_original(in->feature, in->threshold));
        n["threshold_normalized"] = json_num(in->threshold);
        n["p_value"] = json_num(in->p_value);
        n["left"] = in->left;
        n["right"] = in->right;
      } else {
        const auto& leaf = m->leaf(i);
        n["type"] = "leaf";
        n["depth"] = leaf.depth;
        n["samples"] = leaf.train_count;
        n["region"] = leaf.region_id;
        n["p_best"] = leaf.p_best ? json_num(*leaf.p_best) : json(nullptr);
        n["residual_std"] = json_num(leaf.residual_std);
      }
      nodes.push_back(n);
    }
    j["nodes"] = nodes;
  } else if (const auto* h = std::get_if<baselines::HnnModel>(&any)) {
    j["mean_layers"] = h->mean_net.layer_sizes;
    j["sigma_layers"] = h->sigma_net.layer_sizes;
  } else {
    const auto& e = std::get<baselines::EnsembleModel>(any);
    j["members"] = e.members.size();
    j["mean_layers"] = e.members.front().mean_net.layer_sizes;
    j["sigma_layers"] = e.members.front().sigma_net.layer_sizes;
  }
  return j;
}

int cmd_train(const RunConfig& rc) {
  if (rc.model_kinds.size() != 1) throw UsageError("train takes exactly one --model-kind");
  if (rc.seeds.size() != 1) throw UsageError("train takes exactly one --seed");
  const auto ds = load_dataset(rc);
  const auto kind = io::parse_model_kind(rc.model_kinds[0]);
  const fs::path dir = prepare_out(rc);
  const Trained t = train_kind(kind, ds, rc, rc.seeds[0]);
  for (const auto& w : io::preprocessing_of(t.model).warnings()) std::cerr << "warning: " << w << '\n';

  io::save(t.model, (dir / "model.bin").string());
  LogWriter log(dir / "train_log.csv");
  const std::string name = rc.model_kinds[0];
  if (t.tree_report)
    for (const auto& n : t.tree_report->training) log.write(name, n.path, n.phase, n.log);
  for (std::size_t j = 0; j < t.hnn_logs.size(); ++j)
    log.write_hnn(name, kind == io::ModelKind::Ensemble ? "member" + std::to_string(j) : "-", t.hnn_logs[j]);
  json summary = tree_summary(t.model);
  write_json(dir / "tree_summary.json", summary);
  write_json(dir / "resolved_config.json", rc.to_json());

  std::cout << "trained " << name << " on " << ds.rows() << " rows";
  if (const auto* m = std::get_if<tree::UsnrtModel>(&t.model))
    std::cout << ": " << m->leaf_count << " leaves, depth " << m->depth << ", n_min " << m->n_min;
  std::cout << "\nwrote " << (dir / "model.bin").string() << '\n';
  return kOk;
}

// ---------------------------------------------------------------------------
// Evaluation and prediction.

struct Scored {
  std::vector<metrics::GaussianPrediction> preds;  // normalized label scale
  std::vector<double> y;                           // normalized labels
};

Scored score(const io::AnyModel& model, const data::RawDataset& ds) {
  const auto& pre = io::preprocessing_of(model);
  const data::EncodedData enc = data::encode(pre, ds);
  return {io::predict_normalized(model, enc.X), enc.y};
}

json metrics_json(const metrics::MetricsReport& r, double nll, double label_std) {
  json j;
  j["ece"] = json_num(r.ece);
  j["tce"] = json_num(r.tce);
  j["sharpness"] = json_num(r.sharpness);
  j["sharpness_original_units"] = json_num(r.sharpness * label_std);
  j["nll"] = json_num(nll);
  j["n_test"] = r.n_test;
  return j;
}

void write_curve(const fs::path& path, const std::vector<metrics::CurvePoint>& curve) {
  auto out = open_out(path);
  out << "expected_probability,error\n";
  for (const auto& p : curve) out << num(p.expected_probability) << ',' << num(p.error) << '\n';
}

int cmd_evaluate(const RunConfig& rc) {
  require(rc.model, "--model");
  const io::AnyModel model = io::load(rc.model);
  const auto ds = load_dataset(rc);
  const fs::path dir = prepare_out(rc);
  const Scored s = score(model, ds);
  const auto report = metrics::evaluate(s.preds, s.y);
  json j{{"model_kind", io::kind_name(io::kind_of(model))}};
  j.update(metrics_json(report, metrics::mean_nll(s.preds, s.y), io::preprocessing_of(model).label.std));
  write_json(dir / "metrics.json", j);
  write_curve(dir / "curve.csv", report.curve);
  std::cout << "ECE " << std::fixed << std::setprecision(3) << report.ece << "  TCE " << report.tce << "  sharpness "
            << report.sharpness << "  (n=" << report.n_test << ")\n";
  return kOk;
}

int cmd_predict(const RunConfig& rc) {
  require(rc.model, "--model");
  const io::AnyModel model = io::load(rc.model);
  const auto ds = load_dataset(rc);
  const fs::path dir = prepare_out(rc);
  const auto& pre = io::preprocessing_of(model);
  const SampleMatrix X = data::transform(pre, ds);
  const auto preds = io::predict_normalized(model, X);
  const auto* tree_model = std::get_if<tree::UsnrtModel>(&model);
  auto out = open_out(dir / "predictions.csv");
  out << "row,mean,sigma" << (tree_model ? ",region" : "") << '\n';
  for (std::size_t i = 0; i < preds.size(); ++i) {
    out << i << ',' << num(pre.denormalize_label(preds[i].mu)) << ',' << num(preds[i].sigma * pre.label.std);
    if (tree_model) out << ',' << tree_model->leaf(tree_model->route_row(X, static_cast<Eigen::Index>(i))).region_id;
    out << '\n';
  }
  std::cout << "wrote " << preds.size() << " predictions to " << (dir / "predictions.csv").string() << '\n';
  return kOk;
}

// ---------------------------------------------------------------------------
// Benchmark: repeated 80/20 splits, every requested model kind per split.

struct BenchRow {
  std::string model;
  std::string seed;
  double ece, tce, sharpness, nll;
  std::size_t n_test;
};

int cmd_benchmark(const RunConfig& rc) {
  const auto ds = load_dataset(rc);
  const fs::path dir = prepare_out(rc);
  std::vector<BenchRow> rows;
  for (const auto& kind_name : rc.model_kinds) {
    const auto kind = io::parse_model_kind(kind_name);
    std::vector<BenchRow> per_seed;
    for (std::uint64_t seed : rc.seeds) {
      const auto [train, test] = data::train_test_split(ds, rc.test_fraction, seed);
      const Trained t = train_kind(kind, train, rc, seed);
      const Scored s = score(t.model, test);
      const auto r = metrics::evaluate(s.preds, s.y);
      per_seed.push_back({kind_name, std::to_string(seed), r.ece, r.tce, r.sharpness, metrics::mean_nll(s.preds, s.y),
                          r.n_test});
      std::cerr << kind_name << " seed " << seed << ": ECE " << num(r.ece) << " TCE " << num(r.tce) << '\n';
    }
    BenchRow mean{kind_name, "mean", 0, 0, 0, 0, per_seed.front().n_test};
    const double k = static_cast<double>(per_seed.size());
    for (const auto& r : per_seed) {
      mean.ece += r.ece / k;
      mean.tce += r.tce / k;
      mean.sharpness += r.sharpness / k;
      mean.nll += r.nll / k;
    }
    rows.insert(rows.end(), per_seed.begin(), per_seed.end());
    rows.push_back(mean);
  }

  auto csv = open_out(dir / "benchmark.csv");
  csv << "model,seed,ece,tce,sharpness,nll,n_test\n";
  for (const auto& r : rows)
    csv << r.model << ',' << r.seed << ',' << num(r.ece) << ',' << num(r.tce) << ',' << num(r.sharpness) << ','
        << num(r.nll) << ',' << r.n_test << '\n';

  std::ostringstream table;
  table << std::left << std::setw(10) << "model" << std::setw(8) << "seed" << std::right << std::setw(10) << "ECE"
        << std::setw(10) << "TCE" << std::setw(12) << "sharpness" << std::setw(10) << "NLL" << '\n';
  table << std::fixed << std::setprecision(3);
  for (const auto& r : rows)
    table << std::left << std::setw(10) << r.model << std::setw(8) << r.seed << std::right << std::setw(10) << r.ece
          << std::setw(10) << r.tce << std::setw(12) << r.sharpness << std::setw(10) << r.nll << '\n';
  open_out(dir / "benchmark.txt") << table.str();
  write_json(dir / "resolved_config.json", rc.to_json());
  std::cout << table.str();
  return kOk;
}

// ---------------------------------------------------------------------------
// Inspect: root-split residual export and per-leaf residual spread.

// Empirical CDF with mid-ranks for ties, mapped into (0, 1).
std::vector<double> quantile_transform(const std::vector<double>& v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> u(v.size());
  const double n = static_cast<double>(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double mid_rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) u[order[k]] = (mid_rank - 0.5) / n;
    i = j + 1;
  }
  return u;
}

double sample_variance(const std::vector<double>& v) {
  if (v.size() < 2) return std::nan("");
  const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double ss = 0;
  for (double x : v) ss += (x - m) * (x - m);
  return ss / static_cast<double>(v.size() - 1);
}

int cmd_inspect(const RunConfig& rc, const std::string& companion) {
  require(rc.model, "--model");
  const io::AnyModel any = io::load(rc.model);
  const auto* model = std::get_if<tree::UsnrtModel>(&any);
  if (!model) throw UsageError("inspect needs a usnrt model, got " + std::string(io::kind_name(io::kind_of(any))));
  const auto ds = load_dataset(rc);
  const fs::path dir = prepare_out(rc);
  const auto& pre = model->preprocessing;
  const data::EncodedData enc = data::encode(pre, ds);
  const auto names = pre.encoded_names();

  {
    auto out = open_out(dir / "leaf_report.csv");
    out << "region,count,residual_std,residual_std_original\n";
    for (const auto& r : tree::leaf_report(*model, enc.X, enc.y)) {
      out << r.region_id << ',' << r.count << ',';
      if (r.residual_std) out << num(*r.residual_std) << ',' << num(*r.residual_std * pre.label.std);
      else out << ',';
      out << '\n';
    }
  }

  json summary;
  const auto* root = std::get_if<tree::InternalNode>(&model->nodes[0]);
  if (!root) {
    summary["splits"] = false;
    write_json(dir / "inspect.json", summary);
    std::cout << "no splits: the model is a single leaf\n";
    return kOk;
  }

  std::optional<std::size_t> comp;
  if (!companion.empty()) {
    const auto it = std::find(names.begin(), names.end(), companion);
    if (it == names.end()) throw UsageError("--companion: no encoded feature named \"" + companion + "\"");
    comp = static_cast<std::size_t>(it - names.begin());
  } else {
    for (std::size_t j = 0; j < names.size() && !comp; ++j)
      if (j != root->feature) comp = j;
  }

  const Eigen::VectorXd fitted = nn::predict_scalar(root->split_net, enc.X);
  const std::size_t n = enc.y.size();
  std::vector<double> sq(n);
  std::vector<double> left, right;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = enc.y[i] - fitted(static_cast<Eigen::Index>(i));
    sq[i] = r * r;
    (enc.X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(root->feature)) <= root->threshold ? left : right)
        .push_back(r);
  }
  const auto depth = quantile_transform(sq);
  auto out = open_out(dir / "root_split.csv");
  out << "split_feature_value,companion_value,squared_residual,depth,side\n";
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    const double x = enc.X(row, static_cast<Eigen::Index>(root->feature));
    out << num(pre.to_original(root->feature, x)) << ',';
    if (comp) out << num(pre.to_original(*comp, enc.X(row, static_cast<Eigen::Index>(*comp))));
    out << ',' << num(sq[i]) << ',' << num(depth[i]) << ',' << (x <= root->threshold ? 'L' : 'R') << '\n';
  }

  const double var_l = sample_variance(left), var_r = sample_variance(right);
  summary["splits"] = true;
  summary["split_feature"] = names[root->feature];
  summary["companion_feature"] = comp ? json(names[*comp]) : json(nullptr);
  summary["threshold"] = json_num(pre.to_original(root->feature, root->threshold));
  summary["p_value"] = json_num(root->p_value);
  summary["left_count"] = left.size();
  summary["right_count"] = right.size();
  summary["left_residual_variance"] = json_num(var_l);
  summary["right_residual_variance"] = json_num(var_r);
  summary["variance_ratio"] = json_num(std::max(var_l, var_r) / std::min(var_l, var_r));
  write_json(dir / "inspect.json", summary);
  std::cout << "root split on " << names[root->feature] << " at " << num(pre.to_original(root->feature, root->threshold))
            << ": residual variance " << num(var_l) << " (left) vs " << num(var_r) << " (right)\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// Synthetic data.

struct SynthFlags {
  std::size_t n = 10000, d = 8, boundary = 0;
  std::string f0 = "linear", f1 = "linear";
  std::vector<double> sigma0{0.1}, sigma1{1.0};
};

data::NoiseScale parse_noise(const std::vector<double>& v, const char* flag) {
  if (v.empty() || v.size() > 3) throw UsageError(std::string(flag) + " takes 1 to 3 values: intercept [slope [feature]]");
  data::NoiseScale s{v[0], v.size() > 1 ? v[1] : 0.0, 0};
  if (v.size() > 2) {
    if (v[2] < 0 || v[2] != std::floor(v[2])) throw UsageError(std::string(flag) + ": feature index must be a whole number");
    s.feature = static_cast<std::size_t>(v[2]);
  }
  return s;
}

int cmd_synth(const RunConfig& rc, const SynthFlags& sf) {
  if (rc.seeds.size() != 1) throw UsageError("synth takes exactly one --seed");
  data::SynthSpec spec;
  spec.n = sf.n;
  spec.d = sf.d;
  spec.boundary_feature = sf.boundary;
  spec.f0 = data::parse_mean_shape(sf.f0);
  spec.f1 = data::parse_mean_shape(sf.f1);
  spec.sigma0 = parse_noise(sf.sigma0, "--sigma0");
  spec.sigma1 = parse_noise(sf.sigma1, "--sigma1");
  spec.seed = rc.seeds[0];
  const auto syn = data::generate_synthetic(spec);
  const fs::path dir = prepare_out(rc);
  auto data_out = open_out(dir / "data.csv");
  data::write_csv(data_out, syn.data);
  auto truth = open_out(dir / "truth.csv");
  truth << "row,mean,sigma,region\n";
  for (std::size_t i = 0; i < spec.n; ++i)
    truth << i << ',' << num(syn.true_mean[i]) << ',' << num(syn.true_sigma[i]) << ',' << syn.region[i] << '\n';
  open_out(dir / "schema.txt") << data::format_schema(data::schema_of(syn.data));
  std::cout << "wrote " << spec.n << " rows to " << (dir / "data.csv").string() << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Uncertainty-splitting neural regression tree"};
  app.require_subcommand(1);
  Flags flags;
  SynthFlags synth_flags;
  std::string companion;

  auto* synth = app.add_subcommand("synth", "Generate a piecewise heteroscedastic dataset");
  add_common(synth, flags, false);
  synth->add_option("--n", synth_flags.n, "Rows")->check(CLI::PositiveNumber);
  synth->add_option("--d", synth_flags.d, "Features")->check(CLI::PositiveNumber);
  synth->add_option("--boundary", synth_flags.boundary, "Feature whose sign selects the region");
  synth->add_option("--f0", synth_flags.f0, "Mean shape where the boundary feature is <= 0 (linear|sine)");
  synth->add_option("--f1", synth_flags.f1, "Mean shape where the boundary feature is > 0 (linear|sine)");
  synth->add_option("--sigma0", synth_flags.sigma0, "Noise scale left of the boundary: intercept [slope [feature]]");
  synth->add_option("--sigma1", synth_flags.sigma1, "Noise scale right of the boundary: intercept [slope [feature]]");

  auto* train = app.add_subcommand("train", "Train a model and write model.bin");
  add_common(train, flags, true);
  train->add_option("--data", flags.data, "Training CSV");
  train->add_option("--schema", flags.schema, "Schema file (name: continuous|categorical|label per line)");

  auto* evaluate = app.add_subcommand("evaluate", "Calibration metrics of a model on labeled data");
  add_common(evaluate, flags, false);
  evaluate->add_option("--model", flags.model, "Model file");
  evaluate->add_option("--data", flags.data, "Test CSV");
  evaluate->add_option("--schema", flags.schema, "Schema file");

  auto* predict = app.add_subcommand("predict", "Predictive mean and sigma per row");
  add_common(predict, flags, false);
  predict->add_option("--model", flags.model, "Model file");
  predict->add_option("--data", flags.data, "Input CSV");
  predict->add_option("--schema", flags.schema, "Schema file");

  auto* bench = app.add_subcommand("benchmark", "Repeated train/test splits over seeds and model kinds");
  add_common(bench, flags, true);
  bench->add_option("--data", flags.data, "Full dataset CSV");
  bench->add_option("--schema", flags.schema, "Schema file");
  bench->add_option("--test-fraction", flags.test_fraction, "Held-out fraction per split");

  auto* inspect = app.add_subcommand("inspect", "Export root-split residuals and per-leaf residual spread");
  add_common(inspect, flags, false);
  inspect->add_option("--model", flags.model, "USNRT model file");
  inspect->add_option("--data", flags.data, "Labeled CSV");
  inspect->add_option("--schema", flags.schema, "Schema file");
  inspect->add_option("--companion", companion, "Second feature for the scatter export");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    CLI::App* cmd = app.get_subcommands().front();
    const RunConfig rc = resolve(flags, cmd->get_name());
    if (cmd == synth) return cmd_synth(rc, synth_flags);
    if (cmd == train) return cmd_train(rc);
    if (cmd == evaluate) return cmd_evaluate(rc);
    if (cmd == predict) return cmd_predict(rc);
    if (cmd == bench) return cmd_benchmark(rc);
    return cmd_inspect(rc, companion);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const InvalidInput& e) {
    std::cerr << "invalid input: " << e.what() << '\n';
    return kUsage;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const FormatError& e) {
    std::cerr << "model file error: " << e.what() << '\n';
    return kData;
  } catch (const TrainingError& e) {
    std::cerr << "training failed: " << e.what() << '\n';
    return kTraining;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kTraining;
  }
}
