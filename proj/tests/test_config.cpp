#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "covarcast/config.hpp"

using namespace covarcast;

TEST(Config, DefaultsAreValid) { EXPECT_NO_THROW(validate_config(RunConfig{})); }

TEST(Config, ParsesSectionsListsAndComments) {
  RunConfig c;
  apply_config_text(c, R"(
# leading comment
[window]
lookback = 42   ; trailing comment
horizon = 10
stride = 10
[model]
variants = ["transformer", "autoformer"]
head = "raw"
dropout = 0.1
[training]
seeds = 7, 8
alpha = 1.0
[portfolio]
kinds = semi_covariance
threshold = zero
long_only = true
[output]
dir = "out # not a comment"
)");
  EXPECT_EQ(c.window.layout.lookback, 42u);
  EXPECT_EQ(c.window.layout.horizon, 10u);
  EXPECT_EQ(c.model.variants, (std::vector<std::string>{"transformer", "autoformer"}));
  EXPECT_EQ(c.model.head, HeadMode::raw);
  EXPECT_DOUBLE_EQ(c.model.dropout, 0.1);
  EXPECT_EQ(c.training.seeds, (std::vector<std::uint64_t>{7, 8}));
  EXPECT_DOUBLE_EQ(c.training.train.penalty_alpha, 1.0);
  EXPECT_EQ(c.portfolio.kinds, std::vector<MatrixKind>{MatrixKind::semi_covariance});
  EXPECT_EQ(c.portfolio.threshold.mode, Threshold::Mode::zero);
  EXPECT_TRUE(c.portfolio.options.long_only);
  EXPECT_EQ(c.output.dir, "out # not a comment");
  EXPECT_NO_THROW(validate_config(c));
}

TEST(Config, EmptyListClearsVariants) {
  RunConfig c;
  apply_override(c, "model.variants=[]");
  EXPECT_TRUE(c.model.variants.empty());
  EXPECT_NO_THROW(validate_config(c));
  apply_override(c, "model.baseline=false");
  EXPECT_THROW(validate_config(c), ValidationError);
}

TEST(Config, UnknownKeyIsRejected) {
  RunConfig c;
  try {
    apply_config_text(c, "[window]\nlookbak = 5\n");
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("window.lookbak"), std::string::npos);
  }
}

TEST(Config, KeyOutsideSectionIsRejected) {
  RunConfig c;
  EXPECT_THROW(apply_config_text(c, "lookback = 5\n"), ValidationError);
}

TEST(Config, BadValuesAreRejected) {
  RunConfig c;
  EXPECT_THROW(apply_override(c, "window.lookback=-3"), ValidationError);
  EXPECT_THROW(apply_override(c, "window.lookback=abc"), ValidationError);
  EXPECT_THROW(apply_override(c, "model.dropout=nan"), ValidationError);
  EXPECT_THROW(apply_override(c, "portfolio.long_only=maybe"), ValidationError);
  EXPECT_THROW(apply_override(c, "training.seeds=1,,2"), ValidationError);
  EXPECT_THROW(apply_override(c, "model.head=diagonal"), ValidationError);
  EXPECT_THROW(apply_override(c, "window.lookback"), ValidationError);
}

TEST(Config, CrossFieldValidation) {
  RunConfig c;
  apply_override(c, "window.stride=3");
  EXPECT_THROW(validate_config(c), ValidationError);
  c = {};
  apply_override(c, "model.heads=7");
  EXPECT_THROW(validate_config(c), ValidationError);
  c = {};
  apply_override(c, "model.variants=transformer,transformer");
  EXPECT_THROW(validate_config(c), ValidationError);
  c = {};
  apply_override(c, "synthetic.scenario=volcano");
  EXPECT_THROW(validate_config(c), ValidationError);
  c = {};
  apply_override(c, "training.validation_fraction=0");
  EXPECT_THROW(validate_config(c), ValidationError);
}

TEST(Config, LaterSourcesOverrideEarlier) {
  RunConfig c;
  apply_config_text(c, "[window]\nlookback = 30\n");
  apply_override(c, "window.lookback=40");
  EXPECT_EQ(c.window.layout.lookback, 40u);
}

TEST(Config, MissingFileNamesThePath) {
  try {
    load_config_file("/nonexistent/dir/c.toml");
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("/nonexistent/dir/c.toml"), std::string::npos);
  }
}

TEST(Config, JsonCoversEverySection) {
  const auto j = to_json(RunConfig{});
  for (const auto* s : {"data", "synthetic", "window", "model", "training", "portfolio", "output"}) EXPECT_TRUE(j.contains(s)) << s;
  EXPECT_EQ(j.at("window").at("lookback"), 21);
}

TEST(Config, ModelConfigCarriesSettings) {
  RunConfig c;
  apply_override(c, "model.d_model=32");
  apply_override(c, "model.heads=4");
  apply_override(c, "window.input_len=6");
  const auto m = model_config(c, "autoformer", 3);
  EXPECT_EQ(m.variant, AttentionVariant::decomposed);
  EXPECT_EQ(m.d_model, 32u);
  EXPECT_EQ(m.input_len, 6u);
  EXPECT_EQ(m.n_assets, 3u);
  EXPECT_THROW(model_config(c, "lstm", 3), ValidationError);
}

TEST(Sha256, KnownDigest) {
  EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(LoadData, SyntheticMatchesWrittenFile) {
  namespace fs = std::filesystem;
  RunConfig c;
  apply_override(c, "synthetic.n_days=120");
  const auto synthetic = load_data(c);
  EXPECT_EQ(synthetic.source, "synthetic:regime_switching");
  const auto path = fs::temp_directory_path() / "covarcast_load_data.csv";
  {
    std::ofstream out(path, std::ios::binary);
    out << synthetic.price_csv;
  }
  c.data.path = path.string();
  const auto file = load_data(c);
  EXPECT_EQ(file.sha256, synthetic.sha256);
  EXPECT_EQ(file.series.returns, synthetic.series.returns);
  fs::remove(path);
}

TEST(LoadData, DateRangeRestrictsRowsInclusively) {
  RunConfig c;
  apply_override(c, "synthetic.n_days=120");
  const auto full = load_data(c);
  const auto first = format_date(full.series.dates[10]), last = format_date(full.series.dates[39]);
  apply_override(c, "data.start=" + first);
  apply_override(c, "data.end=" + last);
  const auto cut = load_data(c);
  // The first kept price row only anchors the first return.
  ASSERT_EQ(cut.series.size(), 29u);
  EXPECT_EQ(format_date(cut.series.dates.front()), format_date(full.series.dates[11]));
  EXPECT_EQ(format_date(cut.series.dates.back()), last);
  EXPECT_EQ(cut.series.returns, full.series.returns.middleRows(11, 29));
  EXPECT_EQ(cut.sha256, full.sha256);
}

TEST(LoadData, BadDateRangesAreRejected) {
  RunConfig c;
  EXPECT_THROW(apply_override(c, "data.start=2024-02-30"), ValidationError);
  apply_override(c, "synthetic.n_days=50");
  apply_override(c, "data.start=2030-01-01");
  EXPECT_THROW(load_data(c), ValidationError);
  apply_override(c, "data.start=2024-03-01");
  apply_override(c, "data.end=2024-02-01");
  EXPECT_THROW(load_data(c), ValidationError);
}

TEST(LoadData, MissingPriceFileIsValidationError) {
  RunConfig c;
  c.data.path = "/nonexistent/prices.csv";
  EXPECT_THROW(load_data(c), ValidationError);
}

TEST(BuildPlan, MatchesConfiguration) {
  RunConfig c;
  apply_override(c, "synthetic.n_days=400");
  apply_override(c, "model.variants=transformer,autoformer");
  apply_override(c, "model.d_model=16");
  apply_override(c, "model.heads=2");
  apply_override(c, "model.moving_average=3");
  const auto data = load_data(c);
  const auto plan = build_plan(c, data);
  ASSERT_EQ(plan.models.size(), 3u);
  EXPECT_TRUE(plan.models[0].is_baseline());
  EXPECT_EQ(plan.models[2].name, "autoformer");
  EXPECT_EQ(plan.metadata.at("data_sha256"), data.sha256);
  EXPECT_EQ(plan.windows.horizon, 5u);
}

TEST(Manifest, HasNoVolatileFields) {
  const auto a = run_manifest("backtest", RunConfig{}, "abc", "synthetic:single");
  const auto b = run_manifest("backtest", RunConfig{}, "abc", "synthetic:single");
  EXPECT_EQ(a.dump(), b.dump());
  EXPECT_EQ(a.at("seeds").size(), 5u);
  EXPECT_TRUE(a.at("versions").contains("eigen"));
}
