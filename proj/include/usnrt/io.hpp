#pragma once

// Binary model files. Layout (little-endian throughout) is documented in
// docs/model_format.md; bump kFormatVersion on any change.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "usnrt/baselines.hpp"
#include "usnrt/data.hpp"
#include "usnrt/error.hpp"
#include "usnrt/nn.hpp"
#include "usnrt/tree.hpp"

namespace usnrt::io {

inline constexpr char kMagic[8] = {'U', 'S', 'N', 'R', 'T', 'M', 'D', 'L'};
inline constexpr char kTrailer[8] = {'U', 'S', 'N', 'R', 'T', 'E', 'N', 'D'};
inline constexpr std::uint32_t kFormatVersion = 1;

enum class ModelKind : std::uint32_t { Usnrt = 0, Hnn = 1, Ensemble = 2 };

inline const char* kind_name(ModelKind k) {
  switch (k) {
    case ModelKind::Usnrt: return "usnrt";
    case ModelKind::Hnn: return "hnn";
    case ModelKind::Ensemble: return "ensemble";
  }
  return "?";
}

inline ModelKind parse_model_kind(const std::string& s) {
  if (s == "usnrt") return ModelKind::Usnrt;
  if (s == "hnn") return ModelKind::Hnn;
  if (s == "ensemble") return ModelKind::Ensemble;
  throw InvalidInput("unknown model kind '" + s + "' (expected usnrt, hnn or ensemble)");
}

using AnyModel = std::variant<tree::UsnrtModel, baselines::HnnModel, baselines::EnsembleModel>;

inline ModelKind kind_of(const AnyModel& m) { return static_cast<ModelKind>(m.index()); }

class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(std::string_view s) {
    u64(s.size());
    buf_.append(s);
  }
  void raw(const char* p, std::size_t n) { buf_.append(p, n); }
  const std::string& bytes() const { return buf_; }

 private:
  std::string buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string bytes) : buf_(std::move(bytes)) {}

  std::uint8_t u8() { return static_cast<std::uint8_t>(take(1)[0]); }
  std::uint32_t u32() {
    const char* p = take(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[i])) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    const char* p = take(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::uint64_t n = u64();
    if (n > remaining()) throw FormatError("model file truncated (string of " + std::to_string(n) + " bytes)");
    return std::string(take(n), n);
  }
  std::size_t size(std::uint64_t limit, const char* what) {
    const std::uint64_t n = u64();
    if (n > limit) throw FormatError(std::string("model file: implausible ") + what + " " + std::to_string(n));
    return static_cast<std::size_t>(n);
  }
  const char* take(std::size_t n) {
    if (n > remaining())
      throw FormatError("model file truncated at byte " + std::to_string(pos_) + " (needed " + std::to_string(n) +
                        " more bytes)");
    const char* p = buf_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::size_t remaining() const { return buf_.size() - pos_; }

 private:
  std::string buf_;
  std::size_t pos_ = 0;
};

inline constexpr std::uint64_t kMaxCount = std::uint64_t{1} << 32;

// ---------------------------------------------------------------------------

inline void write_mlp(ByteWriter& w, const nn::Mlp& net) {
  w.u64(net.layer_sizes.size());
  for (auto s : net.layer_sizes) w.u64(s);
  w.u8(static_cast<std::uint8_t>(net.hidden_activation));
  w.u8(static_cast<std::uint8_t>(net.output_activation));
  w.u64(net.seed);
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    const auto& W = net.weights[l];
    for (Eigen::Index r = 0; r < W.rows(); ++r)
      for (Eigen::Index c = 0; c < W.cols(); ++c) w.f64(W(r, c));
    for (Eigen::Index r = 0; r < net.biases[l].size(); ++r) w.f64(net.biases[l](r));
  }
}

inline nn::Activation read_activation(ByteReader& r) {
  const auto a = r.u8();
  if (a > 3) throw FormatError("model file: unknown activation tag " + std::to_string(a));
  return static_cast<nn::Activation>(a);
}

inline nn::Mlp read_mlp(ByteReader& r) {
  const std::size_t count = r.size(64, "layer count");
  std::vector<std::size_t> sizes;
  for (std::size_t i = 0; i < count; ++i) sizes.push_back(r.size(1 << 20, "layer size"));
  const auto hidden = read_activation(r);
  const auto output = read_activation(r);
  nn::Mlp net;
  try {
    net = nn::make_zero_mlp(sizes, hidden, output);
  } catch (const InvalidInput& e) {
    throw FormatError(std::string("model file: ") + e.what());
  }
  net.seed = r.u64();
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    auto& W = net.weights[l];
    for (Eigen::Index i = 0; i < W.rows(); ++i)
      for (Eigen::Index j = 0; j < W.cols(); ++j) W(i, j) = r.f64();
    for (Eigen::Index i = 0; i < net.biases[l].size(); ++i) net.biases[l](i) = r.f64();
  }
  return net;
}

inline void write_stats(ByteWriter& w, const data::ColumnStats& s) {
  w.f64(s.mean);
  w.f64(s.std);
  w.u8(s.constant ? 1 : 0);
}

inline data::ColumnStats read_stats(ByteReader& r) {
  data::ColumnStats s;
  s.mean = r.f64();
  s.std = r.f64();
  s.constant = r.u8() != 0;
  return s;
}

inline void write_preprocess(ByteWriter& w, const data::PreprocessState& st) {
  w.u64(st.features.size());
  for (std::size_t f = 0; f < st.features.size(); ++f) {
    w.str(st.features[f].name);
    w.u8(static_cast<std::uint8_t>(st.features[f].kind));
    write_stats(w, st.stats[f]);
    w.u64(st.categories[f].size());
    for (const auto& c : st.categories[f]) w.str(c);
  }
  w.str(st.label_name);
  write_stats(w, st.label);
}

inline data::PreprocessState read_preprocess(ByteReader& r) {
  data::PreprocessState st;
  const std::size_t n = r.size(kMaxCount, "feature count");
  for (std::size_t f = 0; f < n; ++f) {
    data::ColumnSpec spec;
    spec.name = r.str();
    const auto kind = r.u8();
    if (kind > 1) throw FormatError("model file: bad feature kind " + std::to_string(kind));
    spec.kind = static_cast<data::ColumnKind>(kind);
    st.features.push_back(spec);
    st.stats.push_back(read_stats(r));
    const std::size_t nc = r.size(kMaxCount, "category count");
    std::vector<std::string> cats;
    for (std::size_t c = 0; c < nc; ++c) cats.push_back(r.str());
    st.categories.push_back(std::move(cats));
  }
  st.label_name = r.str();
  st.label = read_stats(r);
  return st;
}

inline void write_sizes(ByteWriter& w, const std::vector<std::size_t>& v) {
  w.u64(v.size());
  for (auto s : v) w.u64(s);
}

inline std::vector<std::size_t> read_sizes(ByteReader& r) {
  const std::size_t n = r.size(64, "hidden layer count");
  std::vector<std::size_t> v;
  for (std::size_t i = 0; i < n; ++i) v.push_back(r.size(1 << 20, "hidden layer size"));
  return v;
}

inline void write_train_config(ByteWriter& w, const nn::TrainConfig& c) {
  w.u64(c.batch_size);
  w.f64(c.learning_rate);
  w.u64(c.max_epochs);
  w.f64(c.validation_fraction);
  w.u64(c.patience);
  w.u64(c.seed);
}

inline nn::TrainConfig read_train_config(ByteReader& r) {
  nn::TrainConfig c;
  c.batch_size = r.u64();
  c.learning_rate = r.f64();
  c.max_epochs = r.u64();
  c.validation_fraction = r.f64();
  c.patience = r.u64();
  c.seed = r.u64();
  return c;
}

inline void write_usnrt(ByteWriter& w, const tree::UsnrtModel& m) {
  const auto& c = m.config;
  w.f64(c.alpha);
  w.u8(c.n_min ? 1 : 0);
  w.u64(c.n_min.value_or(0));
  w.u64(c.n_leaves);
  w.u64(c.split_stride.value_or(0));
  write_sizes(w, c.split_net_hidden);
  write_sizes(w, c.leaf_net_hidden);
  w.u64(c.max_depth);
  write_train_config(w, c.train);
  w.u64(c.seed);
  w.u64(m.n_train);
  w.u64(m.n_min);
  w.u64(m.depth);
  w.u64(m.leaf_count);
  w.u64(m.nodes.size());
  for (const auto& node : m.nodes) {
    if (const auto* in = std::get_if<tree::InternalNode>(&node)) {
      w.u8(0);
      w.u64(in->feature);
      w.f64(in->threshold);
      w.f64(in->p_value);
      w.u64(in->sample_count);
      w.u64(in->depth);
      w.u64(in->left);
      w.u64(in->right);
      write_mlp(w, in->split_net);
    } else {
      const auto& leaf = std::get<tree::LeafNode>(node);
      w.u8(1);
      w.u64(leaf.region_id);
      w.u64(leaf.train_count);
      w.u64(leaf.depth);
      w.f64(leaf.residual_std);
      w.u8(leaf.p_best ? 1 : 0);
      w.f64(leaf.p_best.value_or(0.0));
      write_mlp(w, leaf.mean_net);
      write_mlp(w, leaf.sigma_net);
    }
  }
}

inline tree::UsnrtModel read_usnrt(ByteReader& r) {
  tree::UsnrtModel m;
  auto& c = m.config;
  c.alpha = r.f64();
  const bool has_n_min = r.u8() != 0;
  const auto n_min = r.u64();
  if (has_n_min) c.n_min = n_min;
  c.n_leaves = r.u64();
  if (const auto s = r.u64(); s != 0) c.split_stride = s;
  c.split_net_hidden = read_sizes(r);
  c.leaf_net_hidden = read_sizes(r);
  c.max_depth = r.u64();
  c.train = read_train_config(r);
  c.seed = r.u64();
  m.n_train = r.u64();
  m.n_min = r.u64();
  m.depth = r.u64();
  m.leaf_count = r.u64();
  const std::size_t count = r.size(kMaxCount, "node count");
  for (std::size_t i = 0; i < count; ++i) {
    const auto tag = r.u8();
    if (tag == 0) {
      tree::InternalNode in;
      in.feature = r.u64();
      in.threshold = r.f64();
      in.p_value = r.f64();
      in.sample_count = r.u64();
      in.depth = r.u64();
      in.left = r.u64();
      in.right = r.u64();
      if (in.left >= count || in.right >= count || in.left <= i || in.right <= i)
        throw FormatError("model file: node " + std::to_string(i) + " has invalid child links");
      in.split_net = read_mlp(r);
      m.nodes.emplace_back(std::move(in));
    } else if (tag == 1) {
      tree::LeafNode leaf;
      leaf.region_id = r.u64();
      leaf.train_count = r.u64();
      leaf.depth = r.u64();
      leaf.residual_std = r.f64();
      const bool has_p = r.u8() != 0;
      const double p = r.f64();
      if (has_p) leaf.p_best = p;
      leaf.mean_net = read_mlp(r);
      leaf.sigma_net = read_mlp(r);
      m.nodes.emplace_back(std::move(leaf));
    } else {
      throw FormatError("model file: unknown node tag " + std::to_string(tag));
    }
  }
  if (m.nodes.empty()) throw FormatError("model file: tree has no nodes");
  return m;
}

// ---------------------------------------------------------------------------

inline std::string serialize(const AnyModel& model) {
  ByteWriter w;
  w.raw(kMagic, sizeof kMagic);
  w.u32(kFormatVersion);
  w.u32(static_cast<std::uint32_t>(kind_of(model)));
  std::visit(
      [&](const auto& m) {
        using T = std::decay_t<decltype(m)>;
        write_preprocess(w, m.preprocessing);
        if constexpr (std::is_same_v<T, tree::UsnrtModel>) {
          write_usnrt(w, m);
        } else if constexpr (std::is_same_v<T, baselines::HnnModel>) {
          write_mlp(w, m.mean_net);
          write_mlp(w, m.sigma_net);
        } else {
          w.u64(m.members.size());
          for (const auto& member : m.members) {
            write_mlp(w, member.mean_net);
            write_mlp(w, member.sigma_net);
          }
        }
      },
      model);
  w.raw(kTrailer, sizeof kTrailer);
  return w.bytes();
}

inline AnyModel deserialize(std::string bytes) {
  ByteReader r(std::move(bytes));
  if (r.remaining() < sizeof kMagic || std::memcmp(r.take(sizeof kMagic), kMagic, sizeof kMagic) != 0)
    throw FormatError("not a model file (bad magic)");
  const auto version = r.u32();
  if (version != kFormatVersion)
    throw FormatError("model file format version " + std::to_string(version) + " is not supported (expected " +
                      std::to_string(kFormatVersion) + ")");
  const auto kind = r.u32();
  data::PreprocessState pre = read_preprocess(r);
  AnyModel out;
  switch (static_cast<ModelKind>(kind)) {
    case ModelKind::Usnrt: {
      auto m = read_usnrt(r);
      m.preprocessing = std::move(pre);
      out = std::move(m);
      break;
    }
    case ModelKind::Hnn: {
      baselines::HnnModel m;
      m.mean_net = read_mlp(r);
      m.sigma_net = read_mlp(r);
      m.preprocessing = std::move(pre);
      out = std::move(m);
      break;
    }
    case ModelKind::Ensemble: {
      baselines::EnsembleModel e;
      const std::size_t n = r.size(1024, "ensemble size");
      for (std::size_t j = 0; j < n; ++j) {
        baselines::HnnModel m;
        m.mean_net = read_mlp(r);
        m.sigma_net = read_mlp(r);
        m.preprocessing = pre;
        e.members.push_back(std::move(m));
      }
      e.preprocessing = std::move(pre);
      out = std::move(e);
      break;
    }
    default:
      throw FormatError("model file: unknown model kind " + std::to_string(kind));
  }
  if (r.remaining() != sizeof kTrailer || std::memcmp(r.take(sizeof kTrailer), kTrailer, sizeof kTrailer) != 0)
    throw FormatError("model file: missing or misplaced end marker (truncated or trailing data)");
  return out;
}

inline void save(const AnyModel& model, const std::string& path) {
  const std::string bytes = serialize(model);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open " + path + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("failed writing " + path);
}

inline AnyModel load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open model file " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize(std::move(bytes));
}

/// Predictions on the normalized label scale for any model kind.
inline std::vector<metrics::GaussianPrediction> predict_normalized(const AnyModel& model, const SampleMatrix& X) {
  return std::visit(
      [&](const auto& m) -> std::vector<metrics::GaussianPrediction> {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, tree::UsnrtModel>)
          return tree::predict_normalized(m, X);
        else if constexpr (std::is_same_v<T, baselines::HnnModel>)
          return baselines::predict_normalized(m, X);
        else
          return baselines::ensemble_predict_normalized(m, X);
      },
      model);
}

inline const data::PreprocessState& preprocessing_of(const AnyModel& model) {
  return std::visit([](const auto& m) -> const data::PreprocessState& { return m.preprocessing; }, model);
}

}  // namespace usnrt::io
