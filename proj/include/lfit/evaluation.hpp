#pragma once

#include <cmath>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "lfit/dataset.hpp"
#include "lfit/model.hpp"

namespace lfit {

/// Point-forecast errors. MAPE and sMAPE are percentages; they are undefined
/// when every point had to be skipped.
struct PointMetrics {
  Index count = 0;
  Scalar mae = 0;
  Scalar rmse = 0;
  std::optional<Scalar> mape;
  std::optional<Scalar> smape;
  Index mape_skipped = 0;   ///< points with y = 0
  Index smape_skipped = 0;  ///< points with y + ŷ = 0
};

/// Throws ContractError when RMSE < MAE, which no valid input can produce.
PointMetrics compute_metrics(const std::vector<Scalar>& actual, const std::vector<Scalar>& predicted);

struct IntervalCoverage {
  Scalar lower = 0;  ///< lower quantile level
  Scalar upper = 0;
  Scalar nominal = 0;
  Scalar empirical = 0;
};

struct MetricReport {
  std::vector<std::string> targets;
  Index horizon = 0;
  std::vector<std::vector<PointMetrics>> per_step;  ///< [target][step]
  std::vector<PointMetrics> per_target;
  PointMetrics overall;
  Scalar crossing_rate = 0;  ///< share of quantile vectors that are not non-decreasing
  std::vector<IntervalCoverage> coverage;  ///< one per symmetric quantile pair
};

/// Median-based metrics plus quantile diagnostics. `actuals` holds one
/// [τ x m] block per forecast, in original units.
MetricReport compute_report(const std::vector<Forecast>& forecasts, const std::vector<Matrix>& actuals,
                            const std::vector<std::string>& targets);

/// Writes `metrics.csv`; baseline columns appear only when `baseline` is given.
void write_metrics_csv(std::ostream& out, const MetricReport& model, const MetricReport* baseline);

struct CorrelationMatrix {
  std::vector<std::string> ids;
  Matrix values;  ///< NaN marks an undefined pair
  std::vector<std::string> log;

  bool defined(Index i, Index j) const { return !std::isnan(values(i, j)); }
};

/// Pairwise Pearson r of one channel across series over their common steps.
CorrelationMatrix pearson_matrix(const SeriesDataset& ds, const std::string& channel);

/// Pearson r of two aligned samples; nullopt for fewer than 3 points or zero variance.
std::optional<Scalar> pearson(const std::vector<Scalar>& a, const std::vector<Scalar>& b);

/// Repeats the last observed target value over the horizon at every quantile.
std::vector<Forecast> persistence_baseline(const WindowBatch& batch, const std::vector<Scalar>& quantiles,
                                           const TargetScaling& scaling);

struct ChannelImportance {
  std::string channel;
  Scalar mean = 0;
  Scalar stdev = 0;
};

struct ImportanceSummary {
  std::vector<ChannelImportance> past;
  std::vector<ChannelImportance> future;
  std::vector<ChannelImportance> statics;
  std::vector<Scalar> attention_by_lag;  ///< mean decoder attention at lag 0..T-1
  Index windows = 0;

  /// Position of `channel` when `group` is sorted by decreasing mean weight,
  /// considering only the channels listed in `among` (all when empty).
  Index rank(const std::vector<ChannelImportance>& group, const std::string& channel,
             const std::vector<std::string>& among = {}) const;

  void write_csv(std::ostream& out) const;
  void write_attention_profile(std::ostream& out) const;
};

ImportanceSummary aggregate_importance(const std::vector<Explanation>& explanations, const ChannelSchema& channels);

/// Lags l >= 1 where the profile is strictly above both neighbours.
std::vector<Index> local_maxima(const std::vector<Scalar>& profile);

void write_matrix_csv(std::ostream& out, const Matrix& m);

}  // namespace lfit
