#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <numbers>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "usnrt/error.hpp"
#include "usnrt/nn.hpp"
#include "usnrt/random.hpp"

namespace usnrt::data {

enum class ColumnKind : std::uint8_t { Continuous = 0, Categorical = 1, Label = 2 };

inline const char* kind_name(ColumnKind k) {
  switch (k) {
    case ColumnKind::Continuous: return "continuous";
    case ColumnKind::Categorical: return "categorical";
    case ColumnKind::Label: return "label";
  }
  return "?";
}

inline ColumnKind parse_kind(const std::string& s) {
  if (s == "continuous") return ColumnKind::Continuous;
  if (s == "categorical") return ColumnKind::Categorical;
  if (s == "label") return ColumnKind::Label;
  throw DataError("unknown column kind '" + s + "' (expected continuous, categorical or label)");
}

struct ColumnSpec {
  std::string name;
  ColumnKind kind = ColumnKind::Continuous;
  bool operator==(const ColumnSpec&) const = default;
};

struct Schema {
  std::vector<ColumnSpec> columns;

  void validate() const {
    std::size_t labels = 0, features = 0;
    for (const auto& c : columns) (c.kind == ColumnKind::Label ? labels : features)++;
    if (labels != 1) throw DataError("schema must declare exactly one label column");
    if (features == 0) throw DataError("schema must declare at least one feature column");
  }
  const std::string& label_name() const {
    for (const auto& c : columns)
      if (c.kind == ColumnKind::Label) return c.name;
    throw DataError("schema has no label column");
  }
};

namespace detail {
inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

// Splits one CSV record; double-quoted fields may contain commas and "" escapes.
inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur.push_back('"');
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        cur.push_back(ch);
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  out.push_back(trim(cur));
  return out;
}

inline std::optional<double> parse_double(const std::string& s) {
  if (s.empty()) return std::nullopt;
  double v = 0.0;
  const char* first = s.data();
  if (*first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}
}  // namespace detail

/// Schema text: one `name: kind` per line; blank lines and `#` comments ignored.
inline Schema parse_schema(std::istream& in) {
  Schema schema;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    const std::string t = detail::trim(line);
    if (t.empty()) continue;
    const auto colon = t.rfind(':');
    if (colon == std::string::npos)
      throw DataError("schema line " + std::to_string(lineno) + ": expected 'name: kind'");
    schema.columns.push_back({detail::trim(t.substr(0, colon)), parse_kind(detail::trim(t.substr(colon + 1)))});
  }
  schema.validate();
  return schema;
}

inline Schema load_schema(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open schema file " + path);
  return parse_schema(in);
}

inline std::string format_schema(const Schema& schema) {
  std::string out;
  for (const auto& c : schema.columns) out += c.name + ": " + kind_name(c.kind) + "\n";
  return out;
}

struct FeatureColumn {
  std::string name;
  ColumnKind kind = ColumnKind::Continuous;
  std::vector<double> numeric;        // continuous columns
  std::vector<std::string> category;  // categorical columns
};

/// Parsed but not yet encoded table: feature columns in schema order plus labels.
struct RawDataset {
  std::vector<FeatureColumn> features;
  std::string label_name;
  std::vector<double> label;

  std::size_t rows() const { return label.size(); }
  std::size_t raw_dim() const { return features.size(); }
};

inline RawDataset parse_csv(std::istream& in, const Schema& schema, const std::string& source = "<csv>") {
  schema.validate();
  std::string line;
  if (!std::getline(in, line) || detail::trim(line).empty())
    throw DataError(source + ": empty file (no header row)");
  const auto header = detail::split_csv_line(line);
  std::map<std::string, std::size_t> position;
  for (std::size_t i = 0; i < header.size(); ++i) position.emplace(header[i], i);

  RawDataset ds;
  std::vector<std::size_t> feature_pos;
  std::size_t label_pos = 0;
  for (const auto& c : schema.columns) {
    const auto it = position.find(c.name);
    if (it == position.end()) throw DataError(source + ": missing column \"" + c.name + "\"");
    if (c.kind == ColumnKind::Label) {
      label_pos = it->second;
      ds.label_name = c.name;
    } else {
      feature_pos.push_back(it->second);
      ds.features.push_back({c.name, c.kind, {}, {}});
    }
  }

  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    ++row;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != header.size())
      throw DataError(source + ": row " + std::to_string(row) + " has " + std::to_string(cells.size()) +
                      " cells, header has " + std::to_string(header.size()));
    auto numeric_cell = [&](std::size_t pos, const std::string& name) {
      const auto v = detail::parse_double(cells[pos]);
      if (!v)
        throw DataError(source + ": row " + std::to_string(row) + ", column \"" + name +
                        "\": cannot parse \"" + cells[pos] + "\" as a number");
      return *v;
    };
    for (std::size_t f = 0; f < ds.features.size(); ++f) {
      auto& col = ds.features[f];
      if (col.kind == ColumnKind::Continuous) {
        col.numeric.push_back(numeric_cell(feature_pos[f], col.name));
      } else {
        if (cells[feature_pos[f]].empty())
          throw DataError(source + ": row " + std::to_string(row) + ", column \"" + col.name +
                          "\": missing value");
        col.category.push_back(cells[feature_pos[f]]);
      }
    }
    ds.label.push_back(numeric_cell(label_pos, ds.label_name));
  }
  if (row == 0) throw DataError(source + ": no data rows");
  return ds;
}

inline RawDataset load_csv(const std::string& path, const Schema& schema) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  return parse_csv(in, schema, path);
}

inline RawDataset subset(const RawDataset& ds, std::span<const std::size_t> rows) {
  RawDataset out;
  out.label_name = ds.label_name;
  for (const auto& col : ds.features) {
    FeatureColumn c{col.name, col.kind, {}, {}};
    for (std::size_t r : rows) {
      if (col.kind == ColumnKind::Continuous)
        c.numeric.push_back(col.numeric.at(r));
      else
        c.category.push_back(col.category.at(r));
    }
    out.features.push_back(std::move(c));
  }
  for (std::size_t r : rows) out.label.push_back(ds.label.at(r));
  return out;
}

inline std::string csv_field(const std::string& v) {
  if (v.find_first_of(",\"\n") == std::string::npos) return v;
  std::string q = "\"";
  for (char c : v) q += c == '"' ? std::string("\"\"") : std::string(1, c);
  return q + '"';
}

inline void write_csv(std::ostream& out, const RawDataset& ds) {
  out.precision(17);
  for (const auto& c : ds.features) out << c.name << ',';
  out << ds.label_name << '\n';
  for (std::size_t r = 0; r < ds.rows(); ++r) {
    for (const auto& c : ds.features) {
      if (c.kind == ColumnKind::Continuous)
        out << c.numeric[r];
      else
        out << csv_field(c.category[r]);
      out << ',';
    }
    out << ds.label[r] << '\n';
  }
}

inline Schema schema_of(const RawDataset& ds) {
  Schema s;
  for (const auto& c : ds.features) s.columns.push_back({c.name, c.kind});
  s.columns.push_back({ds.label_name, ColumnKind::Label});
  return s;
}

// ---------------------------------------------------------------------------
// Normalization and one-hot encoding.

struct ColumnStats {
  double mean = 0.0;
  double std = 1.0;
  bool constant = false;  // zero variance on the training rows; encoded as 0
  bool operator==(const ColumnStats&) const = default;
};

/// Frozen preprocessing fitted on training rows only.
struct PreprocessState {
  std::vector<ColumnSpec> features;
  std::vector<ColumnStats> stats;                    // per feature; unused for categorical
  std::vector<std::vector<std::string>> categories;  // per feature; sorted, empty for continuous
  std::string label_name;
  ColumnStats label;

  std::size_t raw_dim() const { return features.size(); }
  std::size_t encoded_dim() const {
    std::size_t n = 0;
    for (std::size_t f = 0; f < features.size(); ++f)
      n += features[f].kind == ColumnKind::Continuous ? 1 : categories[f].size();
    return n;
  }
  /// Names of the encoded columns, e.g. "color=red" for one-hot columns.
  std::vector<std::string> encoded_names() const {
    std::vector<std::string> out;
    for (std::size_t f = 0; f < features.size(); ++f) {
      if (features[f].kind == ColumnKind::Continuous)
        out.push_back(features[f].name);
      else
        for (const auto& c : categories[f]) out.push_back(features[f].name + "=" + c);
    }
    return out;
  }
  /// Raw feature index behind encoded column `j`, and its category for one-hot columns.
  std::pair<std::size_t, std::optional<std::string>> encoded_source(std::size_t j) const {
    for (std::size_t f = 0; f < features.size(); ++f) {
      const std::size_t width = features[f].kind == ColumnKind::Continuous ? 1 : categories[f].size();
      if (j < width)
        return {f, features[f].kind == ColumnKind::Continuous ? std::nullopt : std::optional(categories[f][j])};
      j -= width;
    }
    throw InvalidInput("encoded column index out of range");
  }
  /// Encoded value mapped back to original units; one-hot indicators pass through.
  double to_original(std::size_t j, double encoded) const {
    const auto [f, category] = encoded_source(j);
    return category ? encoded : encoded * stats[f].std + stats[f].mean;
  }
  std::vector<std::string> warnings() const {
    std::vector<std::string> w;
    for (std::size_t f = 0; f < features.size(); ++f)
      if (features[f].kind == ColumnKind::Continuous && stats[f].constant)
        w.push_back("column \"" + features[f].name + "\" has zero variance; encoded as constant 0");
    return w;
  }
  double normalize_label(double y) const { return label.constant ? 0.0 : (y - label.mean) / label.std; }
  double denormalize_label(double z) const { return z * label.std + label.mean; }
  bool operator==(const PreprocessState&) const = default;
};

inline ColumnStats column_stats(std::span<const double> v) {
  ColumnStats s;
  const double n = static_cast<double>(v.size());
  double sum = 0.0;
  for (double x : v) sum += x;
  s.mean = sum / n;
  double ss = 0.0;
  for (double x : v) ss += (x - s.mean) * (x - s.mean);
  const double var = v.size() > 1 ? ss / (n - 1.0) : 0.0;
  if (var > 0.0) {
    s.std = std::sqrt(var);
  } else {
    s.std = 1.0;
    s.constant = true;
  }
  return s;
}

inline PreprocessState fit_preprocess(const RawDataset& train) {
  if (train.rows() == 0) throw DataError("cannot fit preprocessing on an empty dataset");
  PreprocessState st;
  st.label_name = train.label_name;
  for (const auto& col : train.features) {
    st.features.push_back({col.name, col.kind});
    if (col.kind == ColumnKind::Continuous) {
      st.stats.push_back(column_stats(col.numeric));
      st.categories.emplace_back();
    } else {
      std::vector<std::string> cats = col.category;
      std::sort(cats.begin(), cats.end());
      cats.erase(std::unique(cats.begin(), cats.end()), cats.end());
      st.stats.emplace_back();
      st.categories.push_back(std::move(cats));
    }
  }
  st.label = column_stats(train.label);
  if (st.label.constant) st.label.std = 1.0;
  return st;
}

/// Encode feature columns with frozen statistics. Unseen categories map to an
/// all-zero one-hot block.
inline SampleMatrix transform(const PreprocessState& st, const RawDataset& ds) {
  if (ds.features.size() != st.features.size())
    throw InvalidInput("dataset has " + std::to_string(ds.features.size()) +
                       " feature columns, preprocessing expects " + std::to_string(st.features.size()));
  const auto n = static_cast<Eigen::Index>(ds.rows());
  SampleMatrix X = SampleMatrix::Zero(n, static_cast<Eigen::Index>(st.encoded_dim()));
  Eigen::Index col = 0;
  for (std::size_t f = 0; f < st.features.size(); ++f) {
    const auto& spec = st.features[f];
    const auto& src = ds.features[f];
    if (src.name != spec.name || src.kind != spec.kind)
      throw InvalidInput("column " + std::to_string(f) + " is \"" + src.name + "\", expected \"" +
                         spec.name + "\"");
    if (spec.kind == ColumnKind::Continuous) {
      const ColumnStats& s = st.stats[f];
      for (Eigen::Index r = 0; r < n; ++r)
        X(r, col) = s.constant ? 0.0 : (src.numeric[static_cast<std::size_t>(r)] - s.mean) / s.std;
      ++col;
    } else {
      const auto& cats = st.categories[f];
      for (Eigen::Index r = 0; r < n; ++r) {
        const auto it = std::lower_bound(cats.begin(), cats.end(), src.category[static_cast<std::size_t>(r)]);
        if (it != cats.end() && *it == src.category[static_cast<std::size_t>(r)])
          X(r, col + (it - cats.begin())) = 1.0;
      }
      col += static_cast<Eigen::Index>(cats.size());
    }
  }
  return X;
}

inline std::vector<double> normalize_labels(const PreprocessState& st, std::span<const double> y) {
  std::vector<double> out(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) out[i] = st.normalize_label(y[i]);
  return out;
}

struct EncodedData {
  SampleMatrix X;
  std::vector<double> y;  // normalized labels
};

inline EncodedData encode(const PreprocessState& st, const RawDataset& ds) {
  return {transform(st, ds), normalize_labels(st, ds.label)};
}

inline std::pair<PreprocessState, EncodedData> fit_transform(const RawDataset& train) {
  PreprocessState st = fit_preprocess(train);
  EncodedData enc = encode(st, train);
  return {std::move(st), std::move(enc)};
}

// ---------------------------------------------------------------------------
// Splitting.

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Seeded shuffle; the first round(test_fraction * n) shuffled rows form the test set.
inline SplitIndices train_test_split(std::size_t n, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0))
    throw InvalidInput("test_fraction must lie in (0, 1)");
  std::vector<std::size_t> idx = iota_indices(n);
  Rng rng(mix_seed(seed, 0x7e57));
  shuffle_in_place(idx, rng);
  const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(n)));
  SplitIndices s;
  s.test.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_test));
  s.train.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_test), idx.end());
  std::sort(s.test.begin(), s.test.end());
  std::sort(s.train.begin(), s.train.end());
  return s;
}

inline std::pair<RawDataset, RawDataset> train_test_split(const RawDataset& ds, double test_fraction,
                                                          std::uint64_t seed) {
  const SplitIndices s = train_test_split(ds.rows(), test_fraction, seed);
  return {subset(ds, s.train), subset(ds, s.test)};
}

// ---------------------------------------------------------------------------
// Two-region heteroscedastic generator.

enum class MeanShape : std::uint8_t { Linear = 0, Sine = 1 };

inline MeanShape parse_mean_shape(const std::string& s) {
  if (s == "linear") return MeanShape::Linear;
  if (s == "sine") return MeanShape::Sine;
  throw InvalidInput("unknown mean shape '" + s + "' (expected linear or sine)");
}

/// f(x) = sum_j g(x_j) / (j + 1) with g the identity (linear) or sin(pi x) (sine).
inline double mean_function(MeanShape shape, std::span<const double> x) {
  double s = 0.0;
  for (std::size_t j = 0; j < x.size(); ++j) {
    const double g = shape == MeanShape::Linear ? x[j] : std::sin(std::numbers::pi * x[j]);
    s += g / static_cast<double>(j + 1);
  }
  return s;
}

/// sigma(x) = intercept + slope * x[feature].
struct NoiseScale {
  double intercept = 1.0;
  double slope = 0.0;
  std::size_t feature = 0;

  double at(std::span<const double> x) const { return intercept + slope * x[feature]; }
  // Features live in [-1, 1], so this is the pointwise positivity condition.
  bool positive_on_cube() const { return intercept - std::fabs(slope) > 0.0; }
};

struct SynthSpec {
  std::size_t n = 1000;
  std::size_t d = 1;
  std::size_t boundary_feature = 0;
  MeanShape f0 = MeanShape::Linear;
  MeanShape f1 = MeanShape::Linear;
  NoiseScale sigma0{0.1, 0.0, 0};
  NoiseScale sigma1{1.0, 0.0, 0};
  std::uint64_t seed = 0;

  void validate() const {
    if (n < 1 || d < 1) throw InvalidInput("synthetic spec needs n >= 1 and d >= 1");
    if (boundary_feature >= d) throw InvalidInput("boundary feature index out of range");
    if (sigma0.feature >= d || sigma1.feature >= d) throw InvalidInput("noise feature index out of range");
    if (!sigma0.positive_on_cube() || !sigma1.positive_on_cube())
      throw InvalidInput("noise scales must be positive on [-1, 1]^d");
  }
};

struct SyntheticData {
  RawDataset data;
  std::vector<double> true_mean;
  std::vector<double> true_sigma;
  std::vector<int> region;  // 0 where x[boundary] <= 0, else 1
};

/// x ~ U[-1, 1]^d; region r = [x_b > 0]; y = f_r(x) + sigma_r(x) * eps.
inline SyntheticData generate_synthetic(const SynthSpec& spec) {
  spec.validate();
  Rng rng(mix_seed(spec.seed, 0x5e7));
  std::normal_distribution<double> gauss(0.0, 1.0);
  SyntheticData out;
  out.data.label_name = "y";
  for (std::size_t j = 0; j < spec.d; ++j)
    out.data.features.push_back({"x" + std::to_string(j), ColumnKind::Continuous, {}, {}});
  std::vector<double> x(spec.d);
  for (std::size_t i = 0; i < spec.n; ++i) {
    for (std::size_t j = 0; j < spec.d; ++j) {
      x[j] = 2.0 * uniform01(rng) - 1.0;
      out.data.features[j].numeric.push_back(x[j]);
    }
    const int r = x[spec.boundary_feature] > 0.0 ? 1 : 0;
    const double mu = mean_function(r == 0 ? spec.f0 : spec.f1, x);
    const double sd = (r == 0 ? spec.sigma0 : spec.sigma1).at(x);
    out.data.label.push_back(mu + sd * gauss(rng));
    out.true_mean.push_back(mu);
    out.true_sigma.push_back(sd);
    out.region.push_back(r);
  }
  return out;
}

}  // namespace usnrt::data
