#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include "usnrt/io.hpp"

using namespace usnrt;

namespace {

// Mixed categorical and continuous features so every preprocessing field is exercised.
data::RawDataset mixed_dataset(std::size_t n, std::uint64_t seed) {
  data::SynthSpec s;
  s.n = n;
  s.d = 2;
  s.boundary_feature = 0;
  s.seed = seed;
  data::RawDataset ds = data::generate_synthetic(s).data;
  data::FeatureColumn cat{"shade", data::ColumnKind::Categorical, {}, {}};
  for (std::size_t i = 0; i < n; ++i) cat.category.push_back(i % 3 == 0 ? "dark" : (i % 3 == 1 ? "light" : "mid"));
  ds.features.push_back(cat);
  return ds;
}

tree::UsnrtModel small_tree() {
  tree::UsnrtConfig cfg;
  cfg.n_min = 200;
  cfg.train.max_epochs = 15;
  cfg.seed = 3;
  return tree::build(mixed_dataset(1500, 1), cfg);
}

baselines::HnnConfig quick_hnn() {
  baselines::HnnConfig cfg;
  cfg.train.max_epochs = 10;
  cfg.seed = 4;
  return cfg;
}

void expect_identical_predictions(const io::AnyModel& a, const io::AnyModel& b, const data::RawDataset& ds) {
  const SampleMatrix X = data::transform(io::preprocessing_of(a), ds);
  const auto pa = io::predict_normalized(a, X), pb = io::predict_normalized(b, X);
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(pa[i].mu, pb[i].mu);
    EXPECT_EQ(pa[i].sigma, pb[i].sigma);
  }
}

}  // namespace

TEST(ModelFile, UsnrtRoundTrip) {
  const io::AnyModel model = small_tree();
  const std::string bytes = io::serialize(model);
  const io::AnyModel back = io::deserialize(bytes);
  ASSERT_EQ(io::kind_of(back), io::ModelKind::Usnrt);
  EXPECT_EQ(io::serialize(back), bytes);
  const auto& a = std::get<tree::UsnrtModel>(model);
  const auto& b = std::get<tree::UsnrtModel>(back);
  EXPECT_EQ(a.nodes.size(), b.nodes.size());
  EXPECT_EQ(a.leaf_count, b.leaf_count);
  EXPECT_EQ(a.n_min, b.n_min);
  EXPECT_TRUE(a.preprocessing == b.preprocessing);
  expect_identical_predictions(model, back, mixed_dataset(400, 9));
}

TEST(ModelFile, HnnAndEnsembleRoundTrip) {
  const auto ds = mixed_dataset(500, 2);
  const io::AnyModel hnn = baselines::train_hnn(ds, quick_hnn());
  const io::AnyModel ens = baselines::train_ensemble(ds, quick_hnn(), 3);
  for (const auto* m : {&hnn, &ens}) {
    const std::string bytes = io::serialize(*m);
    const io::AnyModel back = io::deserialize(bytes);
    EXPECT_EQ(io::kind_of(back), io::kind_of(*m));
    EXPECT_EQ(io::serialize(back), bytes);
    expect_identical_predictions(*m, back, ds);
  }
}

TEST(ModelFile, SaveAndLoadFile) {
  const io::AnyModel model = small_tree();
  const auto path = std::filesystem::temp_directory_path() / "usnrt_io_test_model.bin";
  io::save(model, path.string());
  const io::AnyModel back = io::load(path.string());
  std::filesystem::remove(path);
  expect_identical_predictions(model, back, mixed_dataset(100, 5));
  EXPECT_THROW(io::load((std::filesystem::temp_directory_path() / "does_not_exist.bin").string()), FormatError);
}

TEST(ModelFile, RejectsVersionMismatch) {
  std::string bytes = io::serialize(io::AnyModel{small_tree()});
  bytes[8] = static_cast<char>(io::kFormatVersion + 1);
  try {
    io::deserialize(bytes);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("version"), std::string::npos);
  }
}

TEST(ModelFile, RejectsCorruption) {
  const std::string bytes = io::serialize(io::AnyModel{small_tree()});
  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(io::deserialize(bad_magic), FormatError);
  std::string bad_kind = bytes;
  bad_kind[12] = 9;
  EXPECT_THROW(io::deserialize(bad_kind), FormatError);
  EXPECT_THROW(io::deserialize(bytes + "extra"), FormatError);
  EXPECT_THROW(io::deserialize(""), FormatError);
}

TEST(ModelFile, EveryTruncationIsRejected) {
  const std::string bytes = io::serialize(io::AnyModel{baselines::train_hnn(mixed_dataset(200, 3), quick_hnn())});
  for (std::size_t len = 0; len < bytes.size(); ++len)
    EXPECT_THROW(io::deserialize(bytes.substr(0, len)), FormatError) << "length " << len;
}

TEST(ModelFile, KindNames) {
  for (auto k : {io::ModelKind::Usnrt, io::ModelKind::Hnn, io::ModelKind::Ensemble})
    EXPECT_EQ(io::parse_model_kind(io::kind_name(k)), k);
  EXPECT_THROW(io::parse_model_kind("forest"), InvalidInput);
}
