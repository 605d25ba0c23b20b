#include "lfit/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>

#include "lfit/csv.hpp"

namespace lfit {

namespace {

std::string optional_cell(const std::optional<Scalar>& v) { return v ? csv::format_double(*v) : "NA"; }

std::vector<std::string> metric_cells(const PointMetrics& m) {
  return {csv::format_double(m.mae), csv::format_double(m.rmse), optional_cell(m.mape), optional_cell(m.smape)};
}

}  // namespace

PointMetrics compute_metrics(const std::vector<Scalar>& actual, const std::vector<Scalar>& predicted) {
  if (actual.size() != predicted.size()) throw DimensionError("compute_metrics: actual and predicted differ in length");
  if (actual.empty()) throw DataError("compute_metrics: no points");
  PointMetrics m;
  m.count = static_cast<Index>(actual.size());
  Scalar abs_sum = 0;
  Scalar sq_sum = 0;
  Scalar ape_sum = 0;
  Scalar sape_sum = 0;
  Index ape_n = 0;
  Index sape_n = 0;
  for (std::size_t i = 0; i < actual.size(); ++i) {
    const Scalar y = actual[i];
    const Scalar p = predicted[i];
    const Scalar err = std::abs(y - p);
    abs_sum += err;
    sq_sum += err * err;
    if (y != 0) {
      ape_sum += err / std::abs(y);
      ++ape_n;
    } else {
      ++m.mape_skipped;
    }
    if (y + p != 0) {
      sape_sum += err / (std::abs(y + p) / 2);
      ++sape_n;
    } else {
      ++m.smape_skipped;
    }
  }
  const Scalar n = static_cast<Scalar>(m.count);
  m.mae = abs_sum / n;
  m.rmse = std::sqrt(sq_sum / n);
  if (ape_n > 0) m.mape = 100.0 * ape_sum / static_cast<Scalar>(ape_n);
  if (sape_n > 0) m.smape = 100.0 * sape_sum / static_cast<Scalar>(sape_n);
  if (m.rmse < m.mae * (1 - 1e-12)) {
    throw ContractError("metric report violates RMSE >= MAE (" + csv::format_double(m.rmse) + " < " +
                        csv::format_double(m.mae) + ")");
  }
  return m;
}

MetricReport compute_report(const std::vector<Forecast>& forecasts, const std::vector<Matrix>& actuals,
                            const std::vector<std::string>& targets) {
  if (forecasts.empty()) throw DataError("compute_report: no forecasts");
  if (forecasts.size() != actuals.size()) throw DimensionError("compute_report: forecasts and actuals differ in count");
  const Index m = static_cast<Index>(targets.size());
  const Index horizon = forecasts.front().horizon();
  const auto& quantiles = forecasts.front().quantiles;
  const auto median_it = std::find(quantiles.begin(), quantiles.end(), 0.5);
  if (median_it == quantiles.end()) throw ConfigError("compute_report: forecasts carry no median quantile");
  const Index median = static_cast<Index>(median_it - quantiles.begin());
  const Index nq = static_cast<Index>(quantiles.size());

  MetricReport report;
  report.targets = targets;
  report.horizon = horizon;
  std::vector<std::vector<std::vector<Scalar>>> y(m, std::vector<std::vector<Scalar>>(horizon));
  std::vector<std::vector<std::vector<Scalar>>> p(m, std::vector<std::vector<Scalar>>(horizon));
  Index crossings = 0;
  Index vectors = 0;
  std::vector<Index> covered(static_cast<std::size_t>(nq / 2), 0);
  for (std::size_t w = 0; w < forecasts.size(); ++w) {
    const Forecast& f = forecasts[w];
    if (f.targets() != m || f.horizon() != horizon || actuals[w].rows() != horizon || actuals[w].cols() != m) {
      throw DimensionError("compute_report: forecast " + std::to_string(w) + " does not match the report shape");
    }
    for (Index t = 0; t < m; ++t) {
      for (Index h = 0; h < horizon; ++h) {
        const Scalar actual = actuals[w](h, t);
        y[t][h].push_back(actual);
        p[t][h].push_back(f.values[t](h, median));
        ++vectors;
        for (Index j = 1; j < nq; ++j) {
          if (f.values[t](h, j) < f.values[t](h, j - 1)) {
            ++crossings;
            break;
          }
        }
        for (Index i = 0; i < nq / 2; ++i) {
          const Scalar lo = std::min(f.values[t](h, i), f.values[t](h, nq - 1 - i));
          const Scalar hi = std::max(f.values[t](h, i), f.values[t](h, nq - 1 - i));
          if (actual >= lo && actual <= hi) ++covered[i];
        }
      }
    }
  }
  std::vector<Scalar> all_y;
  std::vector<Scalar> all_p;
  report.per_step.resize(m);
  for (Index t = 0; t < m; ++t) {
    std::vector<Scalar> ty;
    std::vector<Scalar> tp;
    for (Index h = 0; h < horizon; ++h) {
      report.per_step[t].push_back(compute_metrics(y[t][h], p[t][h]));
      ty.insert(ty.end(), y[t][h].begin(), y[t][h].end());
      tp.insert(tp.end(), p[t][h].begin(), p[t][h].end());
    }
    report.per_target.push_back(compute_metrics(ty, tp));
    all_y.insert(all_y.end(), ty.begin(), ty.end());
    all_p.insert(all_p.end(), tp.begin(), tp.end());
  }
  report.overall = compute_metrics(all_y, all_p);
  report.crossing_rate = static_cast<Scalar>(crossings) / static_cast<Scalar>(vectors);
  for (Index i = 0; i < nq / 2; ++i) {
    IntervalCoverage c;
    c.lower = quantiles[i];
    c.upper = quantiles[nq - 1 - i];
    c.nominal = c.upper - c.lower;
    c.empirical = static_cast<Scalar>(covered[i]) / static_cast<Scalar>(vectors);
    report.coverage.push_back(c);
  }
  return report;
}

void write_metrics_csv(std::ostream& out, const MetricReport& model, const MetricReport* baseline) {
  std::vector<std::string> header{"target", "step", "count", "mae", "rmse", "mape", "smape"};
  if (baseline) {
    for (const char* c : {"baseline_mae", "baseline_rmse", "baseline_mape", "baseline_smape"}) header.emplace_back(c);
  }
  csv::write_row(out, header);
  auto emit = [&](const std::string& target, const std::string& step, const PointMetrics& m, const PointMetrics* b) {
    std::vector<std::string> row{target, step, std::to_string(m.count)};
    for (auto& c : metric_cells(m)) row.push_back(std::move(c));
    if (b)
      for (auto& c : metric_cells(*b)) row.push_back(std::move(c));
    csv::write_row(out, row);
  };
  for (std::size_t t = 0; t < model.targets.size(); ++t) {
    for (Index h = 0; h < model.horizon; ++h) {
      emit(model.targets[t], std::to_string(h + 1), model.per_step[t][h], baseline ? &baseline->per_step[t][h] : nullptr);
    }
    emit(model.targets[t], "all", model.per_target[t], baseline ? &baseline->per_target[t] : nullptr);
  }
  emit("all", "all", model.overall, baseline ? &baseline->overall : nullptr);
}

std::optional<Scalar> pearson(const std::vector<Scalar>& a, const std::vector<Scalar>& b) {
  if (a.size() != b.size()) throw DimensionError("pearson: samples differ in length");
  if (a.size() < 3) return std::nullopt;
  const Scalar n = static_cast<Scalar>(a.size());
  const Scalar ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const Scalar mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  Scalar sab = 0;
  Scalar saa = 0;
  Scalar sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (!(saa > 0) || !(sbb > 0)) return std::nullopt;
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

CorrelationMatrix pearson_matrix(const SeriesDataset& ds, const std::string& channel) {
  const Index col = ds.column(channel);
  const Index n = static_cast<Index>(ds.series.size());
  if (n < 2) throw DataError("pearson_matrix needs at least two series");
  CorrelationMatrix out;
  out.values = Matrix::Constant(n, n, std::numeric_limits<Scalar>::quiet_NaN());
  for (const auto& s : ds.series) out.ids.push_back(s.id);
  for (Index i = 0; i < n; ++i) {
    out.values(i, i) = 1.0;
    for (Index j = i + 1; j < n; ++j) {
      const Series& a = ds.series[i];
      const Series& b = ds.series[j];
      const std::int64_t first = std::max(a.steps.front(), b.steps.front());
      const std::int64_t last = std::min(a.steps.back(), b.steps.back());
      std::vector<Scalar> va;
      std::vector<Scalar> vb;
      for (std::int64_t s = first; s <= last; ++s) {
        va.push_back(a.values(static_cast<Index>(s - a.steps.front()), col));
        vb.push_back(b.values(static_cast<Index>(s - b.steps.front()), col));
      }
      const auto r = pearson(va, vb);
      if (r) {
        out.values(i, j) = out.values(j, i) = *r;
      } else {
        out.log.push_back("pair (" + a.id + ", " + b.id + ") undefined: " +
                          (va.size() < 3 ? std::string("fewer than 3 common points") : std::string("zero variance")));
      }
    }
  }
  return out;
}

std::vector<Forecast> persistence_baseline(const WindowBatch& batch, const std::vector<Scalar>& quantiles,
                                           const TargetScaling& scaling) {
  const Index k = batch.encoder_length;
  const Index m = static_cast<Index>(scaling.mean.size());
  if (k < 1) throw ContractError("persistence_baseline: empty past window");
  if (batch.past_continuous.cols() < m) throw ContractError("persistence_baseline: batch lacks target columns");
  std::vector<Forecast> out;
  for (Index b = 0; b < batch.batch_size; ++b) {
    Forecast f;
    f.quantiles = quantiles;
    for (Index t = 0; t < m; ++t) {
      const Scalar last = scaling.invert(t, batch.past_continuous(b * k + k - 1, t) + batch.anchor(b, t));
      f.values.push_back(Matrix::Constant(batch.horizon, static_cast<Index>(quantiles.size()), last));
    }
    out.push_back(std::move(f));
  }
  return out;
}

namespace {

std::vector<ChannelImportance> summarize(const std::vector<std::string>& names, const std::vector<const Matrix*>& blocks) {
  const Index n = static_cast<Index>(names.size());
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd sq = Eigen::VectorXd::Zero(n);
  Index rows = 0;
  for (const Matrix* m : blocks) {
    if (m->cols() != n) throw DimensionError("aggregate_importance: weight block has the wrong channel count");
    for (Index r = 0; r < m->rows(); ++r) {
      sum += m->row(r).transpose();
      sq += m->row(r).transpose().cwiseAbs2();
      ++rows;
    }
  }
  std::vector<ChannelImportance> out;
  for (Index j = 0; j < n; ++j) {
    const Scalar mean = sum(j) / static_cast<Scalar>(rows);
    const Scalar var = std::max(0.0, sq(j) / static_cast<Scalar>(rows) - mean * mean);
    out.push_back({names[j], mean, std::sqrt(var)});
  }
  return out;
}

}  // namespace

ImportanceSummary aggregate_importance(const std::vector<Explanation>& explanations, const ChannelSchema& channels) {
  if (explanations.empty()) throw DataError("aggregate_importance: no explanations");
  ImportanceSummary s;
  s.windows = static_cast<Index>(explanations.size());
  std::vector<const Matrix*> past;
  std::vector<const Matrix*> future;
  std::vector<Matrix> statics;
  for (const auto& e : explanations) {
    past.push_back(&e.past_variable_weights);
    future.push_back(&e.future_variable_weights);
    if (e.static_weights) {
      statics.emplace_back(Eigen::Map<const Matrix>(e.static_weights->data(), 1,
                                                     static_cast<Index>(e.static_weights->size())));
    }
  }
  s.past = summarize(channels.past_names(), past);
  s.future = summarize(channels.future_names(), future);
  if (!statics.empty()) {
    std::vector<const Matrix*> ptrs;
    for (const auto& m : statics) ptrs.push_back(&m);
    s.statics = summarize(channels.static_names(), ptrs);
  }

  const Index k = explanations.front().past_variable_weights.rows();
  const Index total = explanations.front().mean_attention.rows();
  std::vector<Scalar> sum(static_cast<std::size_t>(total), 0.0);
  std::vector<Index> count(static_cast<std::size_t>(total), 0);
  for (const auto& e : explanations) {
    if (e.mean_attention.rows() != total) throw DimensionError("aggregate_importance: attention sizes differ");
    for (Index i = k; i < total; ++i) {
      for (Index j = 0; j <= i; ++j) {
        sum[i - j] += e.mean_attention(i, j);
        ++count[i - j];
      }
    }
  }
  s.attention_by_lag.resize(static_cast<std::size_t>(total));
  for (Index l = 0; l < total; ++l) s.attention_by_lag[l] = count[l] ? sum[l] / static_cast<Scalar>(count[l]) : 0.0;
  return s;
}

Index ImportanceSummary::rank(const std::vector<ChannelImportance>& group, const std::string& channel,
                              const std::vector<std::string>& among) const {
  std::vector<ChannelImportance> pool;
  for (const auto& c : group)
    if (among.empty() || std::find(among.begin(), among.end(), c.channel) != among.end()) pool.push_back(c);
  std::stable_sort(pool.begin(), pool.end(), [](const auto& a, const auto& b) { return a.mean > b.mean; });
  for (std::size_t i = 0; i < pool.size(); ++i)
    if (pool[i].channel == channel) return static_cast<Index>(i);
  throw ContractError("rank: channel '" + channel + "' not in group");
}

void ImportanceSummary::write_csv(std::ostream& out) const {
  csv::write_row(out, {"group", "channel", "mean_weight", "stdev_weight"});
  auto emit = [&](const char* group, const std::vector<ChannelImportance>& cs) {
    for (const auto& c : cs) csv::write_row(out, {group, c.channel, csv::format_double(c.mean), csv::format_double(c.stdev)});
  };
  emit("past", past);
  emit("future", future);
  emit("static", statics);
}

void ImportanceSummary::write_attention_profile(std::ostream& out) const {
  csv::write_row(out, {"lag", "mean_attention"});
  for (std::size_t l = 0; l < attention_by_lag.size(); ++l)
    csv::write_row(out, {std::to_string(l), csv::format_double(attention_by_lag[l])});
}

std::vector<Index> local_maxima(const std::vector<Scalar>& profile) {
  std::vector<Index> out;
  const Index n = static_cast<Index>(profile.size());
  for (Index l = 1; l < n; ++l) {
    const bool above_left = profile[l] > profile[l - 1];
    const bool above_right = (l + 1 == n) || profile[l] > profile[l + 1];
    if (above_left && above_right) out.push_back(l);
  }
  return out;
}

void write_matrix_csv(std::ostream& out, const Matrix& m) {
  for (Index r = 0; r < m.rows(); ++r) {
    std::vector<std::string> row;
    for (Index c = 0; c < m.cols(); ++c) row.push_back(csv::format_double(m(r, c)));
    csv::write_row(out, row);
  }
}

}  // namespace lfit
