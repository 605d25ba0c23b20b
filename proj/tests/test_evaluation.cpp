#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "lfit/evaluation.hpp"
#include "lfit/scenario.hpp"
#include "support.hpp"

namespace {

using namespace lfit;

TEST(Metrics, HandComputedPair) {
  const PointMetrics m = compute_metrics({1, 2}, {2, 2});
  EXPECT_DOUBLE_EQ(m.mae, 0.5);
  EXPECT_DOUBLE_EQ(m.rmse, std::sqrt(0.5));
  EXPECT_NEAR(m.rmse, 0.7071, 1e-4);
  EXPECT_EQ(m.count, 2);
}

TEST(Metrics, PerfectForecastIsZeroEverywhere) {
  const PointMetrics m = compute_metrics({1, -2, 5}, {1, -2, 5});
  EXPECT_EQ(m.mae, 0.0);
  EXPECT_EQ(m.rmse, 0.0);
  EXPECT_EQ(*m.mape, 0.0);
  EXPECT_EQ(*m.smape, 0.0);
}

TEST(Metrics, PercentageErrors) {
  const PointMetrics m = compute_metrics({100}, {110});
  EXPECT_NEAR(*m.mape, 10.0, 1e-12);
  EXPECT_NEAR(*m.smape, 200.0 / 21.0, 1e-12);
  EXPECT_NEAR(*m.smape, 9.524, 1e-3);
}

TEST(Metrics, ZeroActualsSkippedForPercentages) {
  const PointMetrics m = compute_metrics({0, 0}, {0, 1});
  EXPECT_FALSE(m.mape.has_value());
  EXPECT_EQ(m.mape_skipped, 2);
  EXPECT_EQ(m.smape_skipped, 1);
  EXPECT_NEAR(*m.smape, 200.0, 1e-12);
}

TEST(Metrics, SmapeSymmetricAndRmseDominatesMae) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(5.0, 3.0);
  std::vector<double> y(200);
  std::vector<double> p(200);
  for (auto& v : y) v = n(rng);
  for (auto& v : p) v = n(rng);
  const PointMetrics a = compute_metrics(y, p);
  const PointMetrics b = compute_metrics(p, y);
  EXPECT_NEAR(*a.smape, *b.smape, 1e-12);
  EXPECT_GE(a.rmse, a.mae);
}

TEST(Metrics, InvalidInputsRejected) {
  EXPECT_THROW(compute_metrics({1, 2}, {1}), DimensionError);
  EXPECT_THROW(compute_metrics({}, {}), DataError);
}

TEST(Pearson, KnownCorrelations) {
  const std::vector<double> y{1, 4, 2, 8, 5, 7};
  std::vector<double> affine;
  std::vector<double> negated;
  for (double v : y) {
    affine.push_back(2 * v + 3);
    negated.push_back(-v);
  }
  EXPECT_NEAR(*pearson(y, y), 1.0, 1e-12);
  EXPECT_NEAR(*pearson(y, affine), 1.0, 1e-12);
  EXPECT_NEAR(*pearson(y, negated), -1.0, 1e-12);
  EXPECT_FALSE(pearson({1, 2}, {1, 2}).has_value());
  EXPECT_FALSE(pearson({1, 1, 1}, {1, 2, 3}).has_value());
}

TEST(Pearson, MatrixSymmetricAndBounded) {
  SyntheticSpec spec = lfit::testing::water_spec(2, 5, 80);
  spec.modes = {ResponseMode::WaterDriven, ResponseMode::RainfallDriven, ResponseMode::Noise};
  const CorrelationMatrix c = pearson_matrix(generate_synthetic(spec).dataset, "displacement");
  ASSERT_EQ(c.values.rows(), 5);
  for (Index i = 0; i < 5; ++i) {
    EXPECT_NEAR(c.values(i, i), 1.0, 1e-12);
    for (Index j = 0; j < 5; ++j) {
      EXPECT_LE(std::abs(c.values(i, j) - c.values(j, i)), 1e-12);
      EXPECT_LE(std::abs(c.values(i, j)), 1.0 + 1e-12);
    }
  }
}

WindowBatch ramp_batch(double slope, Index k, Index tau) {
  WindowBatch b;
  b.batch_size = 1;
  b.encoder_length = k;
  b.horizon = tau;
  b.past_continuous.resize(k, 1);
  for (Index i = 0; i < k; ++i) b.past_continuous(i, 0) = slope * static_cast<double>(i);
  b.future_targets.resize(tau, 1);
  for (Index t = 0; t < tau; ++t) b.future_targets(t, 0) = slope * static_cast<double>(k + t);
  return b;
}

TEST(Persistence, RepeatsLastObservation) {
  WindowBatch b = ramp_batch(0.0, 4, 3);
  b.past_continuous(3, 0) = 7.0;
  const auto f = persistence_baseline(b, {0.1, 0.5, 0.9}, TargetScaling::identity(1));
  ASSERT_EQ(f.size(), 1u);
  EXPECT_TRUE((f[0].values[0].array() == 7.0).all());
  EXPECT_EQ(f[0].values[0].rows(), 3);
  EXPECT_EQ(f[0].values[0].cols(), 3);
}

TEST(Persistence, ConstantSeriesHasZeroError) {
  WindowBatch b = ramp_batch(0.0, 5, 4);
  b.past_continuous.setConstant(2.5);
  b.future_targets.setConstant(2.5);
  const auto f = persistence_baseline(b, {0.5}, TargetScaling::identity(1));
  const MetricReport r = compute_report(f, {b.future_targets}, {"y"});
  EXPECT_EQ(r.overall.mae, 0.0);
}

TEST(Persistence, RampErrorIsMeanOfSteps) {
  const double s = 0.75;
  const Index tau = 6;
  const WindowBatch b = ramp_batch(s, 5, tau);
  const auto f = persistence_baseline(b, {0.5}, TargetScaling::identity(1));
  const MetricReport r = compute_report(f, {b.future_targets}, {"y"});
  EXPECT_NEAR(r.overall.mae, s * static_cast<double>(tau + 1) / 2.0, 1e-12);
}

TEST(Persistence, AnchoredBatchAddsAnchorBack) {
  WindowBatch b = ramp_batch(0.0, 4, 2);
  b.anchors = Matrix::Constant(1, 1, 3.0);
  const auto f = persistence_baseline(b, {0.5}, TargetScaling::identity(1));
  EXPECT_TRUE((f[0].values[0].array() == 3.0).all());
}

TEST(Report, CrossingRateAndCoverage) {
  Forecast ok;
  ok.quantiles = {0.1, 0.5, 0.9};
  ok.values = {(Matrix(2, 3) << 0, 1, 2, 0, 1, 2).finished()};
  Forecast crossed = ok;
  crossed.values[0](1, 0) = 5;
  const Matrix actual = (Matrix(2, 1) << 1, 3).finished();
  const MetricReport r = compute_report({ok, crossed}, {actual, actual}, {"y"});
  EXPECT_NEAR(r.crossing_rate, 0.25, 1e-12);
  ASSERT_EQ(r.coverage.size(), 1u);
  EXPECT_NEAR(r.coverage[0].nominal, 0.8, 1e-12);
  // a crossed pair still spans [min, max]
  EXPECT_NEAR(r.coverage[0].empirical, 0.75, 1e-12);
  EXPECT_EQ(r.per_step[0].size(), 2u);
  EXPECT_NEAR(r.overall.mae, 1.0, 1e-12);
}

TEST(Report, MetricsCsvHasBaselineColumnsOnlyWhenRequested) {
  Forecast f;
  f.quantiles = {0.5};
  f.values = {Matrix::Constant(2, 1, 1.0)};
  const MetricReport r = compute_report({f}, {Matrix::Constant(2, 1, 2.0)}, {"y"});
  std::ostringstream plain;
  std::ostringstream with;
  write_metrics_csv(plain, r, nullptr);
  write_metrics_csv(with, r, &r);
  EXPECT_EQ(plain.str().find("baseline_mae"), std::string::npos);
  EXPECT_NE(with.str().find("baseline_mae"), std::string::npos);
}

TEST(Importance, SingleChannelAndSimplexAverages) {
  ChannelSchema s;
  s.targets = {"y"};
  Explanation e;
  e.past_variable_weights = Matrix::Ones(4, 1);
  e.future_variable_weights = Matrix::Zero(2, 0);
  e.mean_attention = Matrix::Zero(6, 6);
  const ImportanceSummary one = aggregate_importance({e}, s);
  ASSERT_EQ(one.past.size(), 1u);
  EXPECT_DOUBLE_EQ(one.past[0].mean, 1.0);

  const ChannelSchema tiny = lfit::testing::tiny_schema();
  LfitModel model(lfit::testing::tiny_config(tiny), 3);
  std::mt19937_64 rng(3);
  const ImportanceSummary sum = aggregate_importance(model.explain(lfit::testing::random_batch(tiny, 5, 6, 3, rng)), tiny);
  for (const auto* group : {&sum.past, &sum.future, &sum.statics}) {
    double total = 0;
    for (const auto& c : *group) total += c.mean;
    EXPECT_NEAR(total, 1.0, 1e-6);
  }
  EXPECT_EQ(sum.attention_by_lag.size(), 9u);
}

TEST(Importance, LagProfileUsesDecoderRows) {
  ChannelSchema s;
  s.targets = {"y"};
  Explanation e;
  e.past_variable_weights = Matrix::Ones(3, 1);
  e.future_variable_weights = Matrix::Zero(2, 0);
  e.mean_attention = Matrix::Zero(5, 5);
  e.mean_attention(3, 1) = 1.0;
  e.mean_attention(4, 2) = 1.0;
  const ImportanceSummary r = aggregate_importance({e}, s);
  EXPECT_DOUBLE_EQ(r.attention_by_lag[2], 1.0);
  EXPECT_DOUBLE_EQ(r.attention_by_lag[0], 0.0);
  EXPECT_EQ(local_maxima(r.attention_by_lag), std::vector<Index>{2});
}

TEST(Importance, RankAmongSubset) {
  ImportanceSummary s;
  s.past = {{"a", 0.5, 0}, {"b", 0.3, 0}, {"c", 0.2, 0}};
  EXPECT_EQ(s.rank(s.past, "a"), 0);
  EXPECT_EQ(s.rank(s.past, "c"), 2);
  EXPECT_EQ(s.rank(s.past, "c", {"b", "c"}), 1);
}

TEST(Scenario, SingleTargetTurnsNeighboursIntoCovariates) {
  const SeriesDataset ds = generate_synthetic(lfit::testing::water_spec(1, 9, 40)).dataset;
  ScenarioSpec spec;
  spec.scenario = Scenario::StNsp;
  const SeriesDataset out = apply_scenario(ds, spec);
  ASSERT_EQ(out.series.size(), 1u);
  EXPECT_EQ(out.targets.size(), 1u);
  EXPECT_EQ(out.observed.size(), 8u);
  EXPECT_EQ(out.observed.front(), "S02:displacement");
  EXPECT_TRUE(out.statics.empty());
  EXPECT_EQ(out.series[0].values.col(out.column("S03:displacement")), ds.series[2].values.col(0));
}

TEST(Scenario, EnvironmentalVariantKeepsCovariates) {
  const SeriesDataset ds = generate_synthetic(lfit::testing::water_spec(1, 3, 40)).dataset;
  ScenarioSpec spec;
  spec.scenario = Scenario::StNspEv;
  spec.environmental = {"water_level"};
  const SeriesDataset out = apply_scenario(ds, spec);
  EXPECT_EQ(out.observed.size(), 3u);
  EXPECT_EQ(out.observed.back(), "water_level");
}

TEST(Scenario, MultiTargetVariants) {
  const SeriesDataset ds = generate_synthetic(lfit::testing::water_spec(1, 4, 40)).dataset;
  ScenarioSpec spec;
  spec.scenario = Scenario::MtMpc;
  const SeriesDataset mpc = apply_scenario(ds, spec);
  EXPECT_EQ(mpc.series.size(), 4u);
  EXPECT_EQ(mpc.statics, std::vector<std::string>{"site"});
  EXPECT_TRUE(mpc.observed.empty());
  spec.scenario = Scenario::MtMpcPkEv;
  const SeriesDataset pk = apply_scenario(ds, spec);
  EXPECT_EQ(pk.statics, (std::vector<std::string>{"site", "danger", "soil"}));
  EXPECT_EQ(pk.observed.size(), ds.observed.size());
}

TEST(Scenario, NamesRoundTripAndUnknownRejected) {
  for (const auto& name : scenario_names()) EXPECT_EQ(scenario_name(parse_scenario(name)), name);
  EXPECT_THROW(parse_scenario("MT-XYZ"), ConfigError);
}

TEST(Scenario, RerunWithSameSeedGivesSameReport) {
  const SeriesDataset ds = generate_synthetic(lfit::testing::water_spec(3, 3, 60)).dataset;
  ScenarioSpec spec;
  spec.scenario = Scenario::MtMpc;
  LfitConfig m;
  m.d_model = 8;
  m.heads = 2;
  m.encoder_length = 8;
  m.horizon = 3;
  TrainConfig t;
  t.batch_size = 32;
  t.max_epochs = 2;
  t.seed = 5;
  const ScenarioResult a = run_scenario(ds, spec, m, t);
  const ScenarioResult b = run_scenario(ds, spec, m, t);
  EXPECT_EQ(a.report.overall.mae, b.report.overall.mae);
  EXPECT_EQ(a.report.overall.rmse, b.report.overall.rmse);
  EXPECT_EQ(a.report.crossing_rate, b.report.crossing_rate);
  EXPECT_EQ(a.importance.attention_by_lag, b.importance.attention_by_lag);
  EXPECT_GE(a.report.overall.rmse, a.report.overall.mae);
}

}  // namespace
