#include <gtest/gtest.h>

#include <cmath>

#include "lfit/dataset.hpp"
#include "lfit/evaluation.hpp"
#include "support.hpp"

namespace {

using namespace lfit;

DataSchema simple_schema(double threshold = 0.7) {
  DataSchema s = DataSchema::from_json({{"channels", {{"y", "target"}, {"x", "observed"}, {"soil", "static"}}},
                                        {"calendar", false}});
  s.missing_threshold = threshold;
  return s;
}

TEST(Ingestion, SeriesAboveMissingThresholdDropped) {
  std::string csv = "series_id,timestamp,y,x,soil\n";
  for (int t = 0; t < 10; ++t) {
    csv += "A," + std::to_string(t) + "," + std::to_string(t) + ",1,clay\n";
    csv += "B," + std::to_string(t) + "," + (t < 2 ? std::to_string(t) : std::string("")) + ",1,sand\n";
  }
  const SeriesDataset ds = parse_csv(csv, simple_schema(0.7));
  ASSERT_EQ(ds.series.size(), 1u);
  EXPECT_EQ(ds.series[0].id, "A");
  bool logged = false;
  for (const auto& line : ds.log) logged |= line.find("dropped series 'B'") != std::string::npos;
  EXPECT_TRUE(logged);
}

TEST(Ingestion, InteriorGapInterpolated) {
  const SeriesDataset ds = parse_csv("series_id,timestamp,y,x,soil\nA,0,1,0,c\nA,1,,1,c\nA,2,3,2,c\n", simple_schema());
  const Matrix& v = ds.series[0].values;
  EXPECT_DOUBLE_EQ(v(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(v(1, 0), 2.0);
  EXPECT_DOUBLE_EQ(v(2, 0), 3.0);
}

TEST(Ingestion, MissingRowInsideSeriesInterpolated) {
  const SeriesDataset ds = parse_csv("series_id,timestamp,y,x,soil\nA,0,1,0,c\nA,2,3,4,c\n", simple_schema());
  ASSERT_EQ(ds.series[0].length(), 3);
  EXPECT_DOUBLE_EQ(ds.series[0].values(1, 1), 2.0);
}

TEST(Ingestion, DuplicateKeyRejected) {
  EXPECT_THROW(parse_csv("series_id,timestamp,y,x,soil\nA,0,1,0,c\nA,0,2,0,c\n", simple_schema()), IngestionError);
}

TEST(Ingestion, MissingColumnAndBadNumbersRejected) {
  EXPECT_THROW(parse_csv("series_id,timestamp,y,soil\nA,0,1,c\n", simple_schema()), IngestionError);
  EXPECT_THROW(parse_csv("series_id,timestamp,y,x,soil\nA,0,abc,0,c\n", simple_schema()), IngestionError);
  EXPECT_THROW(parse_csv("series_id,timestamp,y,x,soil\nA,0,1,0\n", simple_schema()), IngestionError);
}

TEST(Ingestion, LoadingTwiceIsIdempotent) {
  const std::string csv = "series_id,timestamp,y,x,soil\nA,2020-01-01,1,0,c\nA,2020-02-01,,1,c\nA,2020-03-01,3,2,c\n";
  const SeriesDataset a = parse_csv(csv, simple_schema());
  const SeriesDataset b = parse_csv(csv, simple_schema());
  ASSERT_EQ(a.series.size(), b.series.size());
  EXPECT_EQ(a.series[0].values, b.series[0].values);
  EXPECT_EQ(a.series[0].steps, b.series[0].steps);
  EXPECT_EQ(a.time_mode, TimeMode::Monthly);
  EXPECT_EQ(a.timestamp_of(a.series[0].steps[1]), "2020-02-01");
  EXPECT_EQ(a.month_of(a.series[0].steps[2]), 2);
}

TEST(Ingestion, WriteThenParseRoundTrips) {
  const SyntheticData syn = generate_synthetic(lfit::testing::water_spec(3, 2, 20));
  std::ostringstream data;
  std::ostringstream statics;
  write_csv(syn.dataset, data, &statics);
  DataSchema schema = DataSchema::from_json(synthetic_schema_json());
  for (Index i = 0; i < 2; ++i) schema.channels.emplace_back("noise_" + std::to_string(i + 1), ChannelRole::Observed);
  const SeriesDataset back = parse_csv(data.str(), schema, statics.str());
  ASSERT_EQ(back.series.size(), 2u);
  EXPECT_TRUE(back.series[1].values.isApprox(syn.dataset.series[1].values, 1e-12));
  EXPECT_EQ(back.series[1].statics, syn.dataset.series[1].statics);
}

TEST(Integrate, PythagoreanCases) {
  EXPECT_DOUBLE_EQ(integrate_displacement({{3.0}, {4.0}})[0], 5.0);
  EXPECT_DOUBLE_EQ(integrate_displacement({{-2.5}, {0.0}})[0], 2.5);
  EXPECT_NEAR(integrate_displacement({{1.0}, {1.0}, {1.0}})[0], std::sqrt(3.0), 1e-15);
  EXPECT_NEAR(integrate_displacement({{1.0}, {1.0}, {1.0}})[0], 1.7321, 1e-4);
}

TEST(Integrate, BoundedByMaxComponent) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0.0, 3.0);
  std::vector<std::vector<double>> comps(4, std::vector<double>(50));
  for (auto& c : comps)
    for (auto& v : c) v = n(rng);
  const auto r = integrate_displacement(comps);
  for (std::size_t t = 0; t < r.size(); ++t) {
    double mx = 0;
    for (const auto& c : comps) mx = std::max(mx, std::abs(c[t]));
    EXPECT_GE(r[t], mx - 1e-12);
    EXPECT_LE(r[t], std::sqrt(4.0) * mx + 1e-12);
  }
}

TEST(Integrate, MismatchedLengthsRejected) {
  EXPECT_THROW(integrate_displacement({{1.0, 2.0}, {1.0}}), Error);
}

TEST(StandardizerFit, HandComputedChannel) {
  const Standardizer s = Standardizer::fit({"c"}, (Matrix(2, 1) << 1.0, 3.0).finished());
  EXPECT_DOUBLE_EQ(s.mean()[0], 2.0);
  EXPECT_DOUBLE_EQ(s.stdev()[0], 1.0);
  EXPECT_DOUBLE_EQ(s.transform(0, 1.0), -1.0);
  EXPECT_DOUBLE_EQ(s.transform(0, 3.0), 1.0);
  for (const double v : {-7.3, 0.0, 2.2, 1e3}) EXPECT_NEAR(s.invert(0, s.transform(0, v)), v, 1e-12);
}

TEST(StandardizerFit, ConstantChannelRejected) {
  EXPECT_THROW(Standardizer::fit({"c"}, Matrix::Constant(4, 1, 2.0)), DataError);
}

TEST(StandardizerFit, OnlyTrainingRowsCount) {
  SeriesDataset ds = generate_synthetic(lfit::testing::water_spec(2, 2, 100)).dataset;
  const SplitPlan plan;
  const Standardizer before = fit_standardizer(ds, plan);
  const SeriesSplit split = split_series(100, plan);
  for (auto& s : ds.series) s.values.bottomRows(100 - split.train_end).array() += 1000.0;
  const Standardizer after = fit_standardizer(ds, plan);
  EXPECT_EQ(before.mean(), after.mean());
  EXPECT_EQ(before.stdev(), after.stdev());
}

struct WindowFixture {
  SeriesDataset ds;
  StaticEncoding statics;
  Standardizer standardizer;

  explicit WindowFixture(Index length) : ds(generate_synthetic(lfit::testing::water_spec(5, 1, length)).dataset) {
    statics = encode_statics(ds);
    standardizer = fit_standardizer(ds, SplitPlan{});
  }
};

TEST(Windows, CountFollowsLengthMinusSpan) {
  WindowFixture f(36);
  WindowBuilder b(f.ds, f.statics, f.standardizer);
  EXPECT_EQ(b.build(24, 8, 1).size(), 36u - 24u - 8u + 1u);
  EXPECT_EQ(b.build(24, 8, 2).size(), 3u);
}

TEST(Windows, ExactSpanGivesOneWindow) {
  WindowFixture f(32);
  WindowBuilder b(f.ds, f.statics, f.standardizer);
  EXPECT_EQ(b.build(24, 8).size(), 1u);
  EXPECT_THROW(b.build(25, 8), DataError);
}

TEST(Windows, BlocksAlignWithRawSeries) {
  WindowFixture f(40);
  WindowBuilder b(f.ds, f.statics, f.standardizer);
  const Index col = f.standardizer.index_of("displacement");
  const Matrix& raw = f.ds.series[0].values;
  for (const Window& w : b.build(6, 3)) {
    for (Index i = 0; i < 6; ++i)
      EXPECT_DOUBLE_EQ(w.past_continuous(i, 0), f.standardizer.transform(col, raw(w.origin + i, 0)));
    for (Index t = 0; t < 3; ++t)
      EXPECT_DOUBLE_EQ(w.future_targets(t, 0), f.standardizer.transform(col, raw(w.origin + 6 + t, 0)));
  }
}

TEST(Windows, InputBlocksIgnoreHorizonValues) {
  WindowFixture f(40);
  WindowBuilder b(f.ds, f.statics, f.standardizer);
  const auto windows = b.build(6, 3);
  for (std::size_t i = 0; i < windows.size(); ++i) {
    SeriesDataset shifted = f.ds;
    shifted.series[0].values.middleRows(windows[i].origin + 6, 3).array() += 1000.0;
    WindowBuilder sb(shifted, f.statics, f.standardizer);
    const Window w = sb.build(6, 3)[i];
    EXPECT_EQ(w.past_continuous, windows[i].past_continuous);
    EXPECT_EQ(w.past_categorical, windows[i].past_categorical);
    EXPECT_EQ(w.future_continuous, windows[i].future_continuous);
    EXPECT_EQ(w.future_categorical, windows[i].future_categorical);
    EXPECT_NE(w.future_targets, windows[i].future_targets);
  }
}

TEST(Windows, AnchoringSubtractsLastObservation) {
  WindowFixture f(40);
  WindowBuilder plain(f.ds, f.statics, f.standardizer, false);
  WindowBuilder anchored(f.ds, f.statics, f.standardizer, true);
  const auto a = plain.build(6, 3);
  const auto b = anchored.build(6, 3);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    ASSERT_EQ(b[i].anchors.size(), 1u);
    EXPECT_DOUBLE_EQ(b[i].anchors[0], a[i].past_continuous(5, 0));
    EXPECT_NEAR(b[i].future_targets(2, 0) + b[i].anchors[0], a[i].future_targets(2, 0), 1e-12);
    EXPECT_NEAR(b[i].past_continuous(5, 0), 0.0, 1e-15);
    EXPECT_TRUE(a[i].anchors.empty());
  }
  std::vector<Window> mixed{a[0], b[0]};
  EXPECT_THROW(collate(mixed), ContractError);
}

TEST(Windows, SplitsStayInsideSegments) {
  WindowFixture f(100);
  WindowBuilder b(f.ds, f.statics, f.standardizer);
  const SplitPlan plan;
  const SeriesSplit seg = split_series(100, plan);
  const WindowSplits sp = b.build_splits(12, 4, plan);
  ASSERT_FALSE(sp.test.empty());
  for (const auto& w : sp.train) EXPECT_LE(w.origin + 16, seg.train_end);
  for (const auto& w : sp.validation) {
    EXPECT_GE(w.origin + 12, seg.train_end);
    EXPECT_LE(w.origin + 16, seg.validation_end);
  }
  for (const auto& w : sp.test) EXPECT_GE(w.origin + 12, seg.validation_end);
}

TEST(Statics, VocabularySortedAndShared) {
  SeriesDataset ds;
  ds.targets = {"y"};
  ds.statics = {"danger", "soil"};
  const std::vector<std::pair<std::string, std::string>> attrs{
      {"non-danger", "clay"}, {"danger", "sand"}, {"near-danger", "clay"}};
  for (std::size_t i = 0; i < attrs.size(); ++i) {
    Series s;
    s.id = "S" + std::to_string(i);
    s.statics = {attrs[i].first, attrs[i].second};
    ds.series.push_back(s);
  }
  const StaticEncoding enc = encode_statics(ds);
  EXPECT_EQ(enc.lookup(0, "danger"), 0);
  EXPECT_EQ(enc.lookup(0, "near-danger"), 1);
  EXPECT_EQ(enc.lookup(0, "non-danger"), 2);
  EXPECT_EQ(enc.indices[0][1], enc.indices[2][1]);
  EXPECT_NE(enc.indices[0][1], enc.indices[1][1]);
  EXPECT_THROW(enc.lookup(1, "loam"), OutOfVocabularyError);

  const StaticEncoding back = StaticEncoding::from_json(enc.to_json());
  EXPECT_EQ(back.vocabularies, enc.vocabularies);
  EXPECT_EQ(back.apply(ds).indices, enc.indices);
}

TEST(Synthetic, NoiselessIncrementsFollowDrawdown) {
  SyntheticSpec spec = lfit::testing::water_spec(4, 1, 60);
  spec.noise_stdev = 0.0;
  spec.gain = 0.7;
  spec.lag = 2;
  const SyntheticData d = generate_synthetic(spec);
  const Matrix& v = d.dataset.series[0].values;
  const auto water = [&](Index t) { return spec.water_amplitude * std::sin(2.0 * M_PI * t / spec.period); };
  for (Index t = 1; t < 60; ++t) {
    const double drawdown = std::max(0.0, -(water(t - spec.lag) - water(t - spec.lag - 1)));
    EXPECT_NEAR(v(t, 0) - v(t - 1, 0), spec.gain * drawdown + spec.trend, 1e-12);
  }
}

TEST(Synthetic, IncrementsCorrelateWithLaggedDrawdown) {
  SyntheticSpec spec = lfit::testing::water_spec(5, 1, 240);
  spec.noise_stdev = 0.05;
  const SyntheticData d = generate_synthetic(spec);
  const Matrix& v = d.dataset.series[0].values;
  std::vector<double> inc;
  std::vector<double> drawdown;
  for (Index t = spec.lag + 1; t < spec.length; ++t) {
    inc.push_back(v(t, 0) - v(t - 1, 0));
    drawdown.push_back(std::max(0.0, -(d.water_level[t - spec.lag] - d.water_level[t - spec.lag - 1])));
  }
  const auto r = pearson(inc, drawdown);
  ASSERT_TRUE(r.has_value());
  EXPECT_GT(*r, 0.9);
}

TEST(Synthetic, SameSeedSameData) {
  const SyntheticData a = generate_synthetic(lfit::testing::water_spec(6, 3, 50));
  const SyntheticData b = generate_synthetic(lfit::testing::water_spec(6, 3, 50));
  for (std::size_t i = 0; i < a.dataset.series.size(); ++i) EXPECT_EQ(a.dataset.series[i].values, b.dataset.series[i].values);
  const SyntheticData c = generate_synthetic(lfit::testing::water_spec(7, 3, 50));
  EXPECT_NE(a.dataset.series[0].values, c.dataset.series[0].values);
}

TEST(Schema, RejectsBadDeclarations) {
  EXPECT_THROW(DataSchema::from_json({{"channels", {{"x", "observed"}}}}), ConfigError);
  EXPECT_THROW(DataSchema::from_json({{"channels", {{"y", "weird"}}}}), ConfigError);
  EXPECT_THROW(DataSchema::from_json({{"channels", {{"timestamp", "target"}}}}), ConfigError);
}

}  // namespace
