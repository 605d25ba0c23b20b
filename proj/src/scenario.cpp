#include "lfit/scenario.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "lfit/csv.hpp"

namespace lfit {

namespace {

const std::vector<std::pair<Scenario, std::string>>& scenario_table() {
  static const std::vector<std::pair<Scenario, std::string>> table{{Scenario::StNsp, "ST-NSP"},
                                                                   {Scenario::MtMpc, "MT-MPC"},
                                                                   {Scenario::StNspEv, "ST-NSP-EV"},
                                                                   {Scenario::MtMpcPkEv, "MT-MPC-PK-EV"}};
  return table;
}

bool single_target(Scenario s) { return s == Scenario::StNsp || s == Scenario::StNspEv; }
bool environmental(Scenario s) { return s == Scenario::StNspEv || s == Scenario::MtMpcPkEv; }

std::vector<std::string> environmental_channels(const SeriesDataset& ds, const ScenarioSpec& spec) {
  if (spec.environmental.empty()) return ds.observed;
  for (const auto& c : spec.environmental) {
    if (std::find(ds.observed.begin(), ds.observed.end(), c) == ds.observed.end()) {
      throw ConfigError("environmental covariate '" + c + "' is not an observed channel of the dataset");
    }
  }
  return spec.environmental;
}

Matrix select_columns(const SeriesDataset& ds, const Series& s, const std::vector<std::string>& channels) {
  Matrix out(s.length(), static_cast<Index>(channels.size()));
  for (std::size_t j = 0; j < channels.size(); ++j) out.col(static_cast<Index>(j)) = s.values.col(ds.column(channels[j]));
  return out;
}

std::string window_id(const SeriesDataset& ds, const Window& w) {
  std::string id = ds.series.at(w.series).id + "_" + ds.timestamp_of(w.first_step + w.past_continuous.rows() - 1);
  for (char& c : id)
    if (c == '/' || c == ':' || c == ' ') c = '-';
  return id;
}

}  // namespace

Scenario parse_scenario(const std::string& name) {
  for (const auto& [s, n] : scenario_table())
    if (n == name) return s;
  throw ConfigError("unknown scenario '" + name + "'");
}

std::string scenario_name(Scenario scenario) {
  for (const auto& [s, n] : scenario_table())
    if (s == scenario) return n;
  return "?";
}

const std::vector<std::string>& scenario_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (const auto& entry : scenario_table()) out.push_back(entry.second);
    return out;
  }();
  return names;
}

nlohmann::json ScenarioSpec::to_json() const {
  return {{"scenario", scenario_name(scenario)}, {"target_series", target_series}, {"environmental", environmental}};
}

ScenarioSpec ScenarioSpec::from_json(const nlohmann::json& j) {
  ScenarioSpec s;
  if (j.contains("scenario")) s.scenario = parse_scenario(j["scenario"].get<std::string>());
  s.target_series = j.value("target_series", std::string{});
  if (j.contains("environmental")) s.environmental = j["environmental"].get<std::vector<std::string>>();
  return s;
}

SeriesDataset apply_scenario(const SeriesDataset& ds, const ScenarioSpec& spec) {
  if (ds.series.empty()) throw DataError("scenario: dataset has no series");
  SeriesDataset out;
  out.targets = ds.targets;
  out.known_future = ds.known_future;
  out.time_mode = ds.time_mode;
  out.origin_seconds = ds.origin_seconds;
  out.step_seconds = ds.step_seconds;
  out.month_day = ds.month_day;
  out.calendar = ds.calendar;
  out.log = ds.log;
  const std::vector<std::string> env =
      environmental(spec.scenario) ? environmental_channels(ds, spec) : std::vector<std::string>{};

  if (single_target(spec.scenario)) {
    const Series& target = spec.target_series.empty() ? ds.series.front() : ds.find(spec.target_series);
    std::vector<const Series*> neighbours;
    for (const auto& s : ds.series)
      if (s.id != target.id) neighbours.push_back(&s);
    if (neighbours.empty()) throw ConfigError(scenario_name(spec.scenario) + " needs at least one neighbouring series");
    for (const Series* n : neighbours)
      for (const auto& t : ds.targets) out.observed.push_back(n->id + ":" + t);
    out.observed.insert(out.observed.end(), env.begin(), env.end());

    Series s;
    s.id = target.id;
    s.steps = target.steps;
    std::vector<std::string> own = ds.targets;
    own.insert(own.end(), env.begin(), env.end());
    const Matrix own_values = select_columns(ds, target, own);
    const Matrix known = select_columns(ds, target, ds.known_future);
    const Index n_t = static_cast<Index>(ds.targets.size());
    const Index n_obs = static_cast<Index>(out.observed.size());
    s.values.resize(target.length(), n_t + n_obs + known.cols());
    s.values.leftCols(n_t) = own_values.leftCols(n_t);
    Index col = n_t;
    for (const Series* n : neighbours) {
      for (Index t = 0; t < n_t; ++t, ++col) {
        const Index src = ds.column(ds.targets[t]);
        for (Index i = 0; i < target.length(); ++i) {
          const std::int64_t step = target.steps[i];
          const bool inside = step >= n->steps.front() && step <= n->steps.back();
          s.values(i, col) = inside ? n->values(static_cast<Index>(step - n->steps.front()), src)
                                    : std::numeric_limits<Scalar>::quiet_NaN();
        }
        const Index filled = fill_gaps(s.values, col);
        if (filled < 0) throw DataError("neighbour '" + n->id + "' does not overlap series '" + target.id + "'");
        if (filled > 0) {
          out.log.push_back("neighbour '" + n->id + "': filled " + std::to_string(filled) +
                            " step(s) outside its range");
        }
      }
    }
    s.values.middleCols(col, own_values.cols() - n_t) = own_values.rightCols(own_values.cols() - n_t);
    s.values.rightCols(known.cols()) = known;
    out.series.push_back(std::move(s));
    return out;
  }

  out.observed = env;
  out.statics.emplace_back(kSiteStatic);
  std::vector<std::string> extra;
  if (spec.scenario == Scenario::MtMpcPkEv) {
    for (const auto& a : ds.statics)
      if (a != kSiteStatic) extra.push_back(a);
    if (extra.empty()) {
      throw ConfigError("MT-MPC-PK-EV requires static prior-knowledge attributes, but the dataset declares none");
    }
    out.statics.insert(out.statics.end(), extra.begin(), extra.end());
  }
  std::vector<std::string> columns = ds.targets;
  columns.insert(columns.end(), env.begin(), env.end());
  columns.insert(columns.end(), ds.known_future.begin(), ds.known_future.end());
  for (const auto& src : ds.series) {
    Series s;
    s.id = src.id;
    s.steps = src.steps;
    s.values = select_columns(ds, src, columns);
    s.statics.push_back(src.id);
    for (const auto& a : extra) {
      const auto it = std::find(ds.statics.begin(), ds.statics.end(), a);
      s.statics.push_back(src.statics.at(static_cast<std::size_t>(it - ds.statics.begin())));
    }
    out.series.push_back(std::move(s));
  }
  return out;
}

std::string git_blob_sha1(const std::string& content) {
  const std::string header = "blob " + std::to_string(content.size()) + std::string(1, '\0');
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int length = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  const bool ok = ctx && EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) == 1 &&
                  EVP_DigestUpdate(ctx, header.data(), header.size()) == 1 &&
                  EVP_DigestUpdate(ctx, content.data(), content.size()) == 1 &&
                  EVP_DigestFinal_ex(ctx, digest.data(), &length) == 1;
  EVP_MD_CTX_free(ctx);
  if (!ok) throw Error("SHA-1 digest failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < length; ++i) {
    const unsigned char b = digest[i];
    out.push_back(hex[b >> 4]);
    out.push_back(hex[b & 0xf]);
  }
  return out;
}

std::pair<std::vector<Forecast>, std::vector<Explanation>> predict_windows(const LfitModel& model,
                                                                           const std::vector<Window>& windows,
                                                                           Index batch_size) {
  std::pair<std::vector<Forecast>, std::vector<Explanation>> out;
  for (std::size_t s = 0; s < windows.size(); s += static_cast<std::size_t>(batch_size)) {
    const std::size_t e = std::min(windows.size(), s + static_cast<std::size_t>(batch_size));
    std::vector<const Window*> chunk;
    for (std::size_t i = s; i < e; ++i) chunk.push_back(&windows[i]);
    auto [f, x] = model.predict(collate(chunk));
    std::move(f.begin(), f.end(), std::back_inserter(out.first));
    std::move(x.begin(), x.end(), std::back_inserter(out.second));
  }
  return out;
}

std::vector<Matrix> window_actuals(const std::vector<Window>& windows, const TargetScaling& scaling) {
  std::vector<Matrix> out;
  for (const auto& w : windows) {
    Matrix a = w.future_targets;
    for (Index t = 0; t < a.cols(); ++t)
      for (Index h = 0; h < a.rows(); ++h) a(h, t) = scaling.invert(t, a(h, t) + (w.anchors.empty() ? 0.0 : w.anchors[t]));
    out.push_back(std::move(a));
  }
  return out;
}

std::vector<Forecast> baseline_windows(const std::vector<Window>& windows, const std::vector<Scalar>& quantiles,
                                       const TargetScaling& scaling) {
  std::vector<Forecast> out;
  for (const auto& w : windows) {
    auto f = persistence_baseline(collate(std::vector<const Window*>{&w}), quantiles, scaling);
    out.push_back(std::move(f.front()));
  }
  return out;
}

void write_forecasts_csv(std::ostream& out, const SeriesDataset& ds, const std::vector<Window>& windows,
                         const std::vector<Forecast>& forecasts, const std::vector<std::string>& targets) {
  csv::write_row(out, {"series_id", "target", "origin", "step", "quantile", "value"});
  for (std::size_t w = 0; w < windows.size(); ++w) {
    const Window& win = windows[w];
    const std::int64_t origin = win.first_step + win.past_continuous.rows() - 1;
    const Forecast& f = forecasts.at(w);
    for (Index t = 0; t < f.targets(); ++t) {
      for (Index h = 0; h < f.horizon(); ++h) {
        for (std::size_t q = 0; q < f.quantiles.size(); ++q) {
          csv::write_row(out, {ds.series.at(win.series).id, targets.at(t), ds.timestamp_of(origin),
                               ds.timestamp_of(origin + 1 + h), csv::format_double(f.quantiles[q]),
                               csv::format_double(f.values[t](h, static_cast<Index>(q)))});
        }
      }
    }
  }
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write '" + path + "'");
  out << content;
  if (!out) throw Error("failed writing '" + path + "'");
}

void write_attention_dir(const std::string& dir, const SeriesDataset& ds, const std::vector<Window>& windows,
                         const std::vector<Explanation>& explanations) {
  std::filesystem::create_directories(dir);
  for (std::size_t w = 0; w < windows.size(); ++w) {
    std::ostringstream os;
    write_matrix_csv(os, explanations.at(w).mean_attention);
    write_text_file(dir + "/" + window_id(ds, windows[w]) + ".csv", os.str());
  }
}

ScenarioResult run_scenario(const SeriesDataset& ds, const ScenarioSpec& spec, const LfitConfig& model_cfg,
                            const TrainConfig& train_cfg, const RunOptions& options) {
  train_cfg.validate();
  ScenarioResult result;
  result.dataset = apply_scenario(ds, spec);
  const SeriesDataset& sd = result.dataset;
  const SplitPlan plan{train_cfg.validation_fraction, train_cfg.test_fraction};
  Standardizer standardizer = fit_standardizer(sd, plan);
  StaticEncoding statics = encode_statics(sd);
  WindowBuilder builder(sd, statics, standardizer, model_cfg.anchor_targets);
  WindowSplits splits = builder.build_splits(model_cfg.encoder_length, model_cfg.horizon, plan, options.stride);
  if (splits.train.empty()) throw DataError("no complete training window; series are too short for k + τ");
  if (splits.validation.empty()) throw DataError("no complete validation window; enlarge validation_fraction");
  if (splits.test.empty()) throw DataError("no complete test window; enlarge test_fraction");

  LfitConfig cfg = model_cfg;
  cfg.channels = builder.schema();
  result.model = std::make_unique<LfitModel>(cfg, train_cfg.seed);
  LfitModel& model = *result.model;
  model.set_scaling(TargetScaling::from(standardizer, static_cast<Index>(sd.targets.size())));
  model.set_metadata({{"scenario", spec.to_json()},
                      {"standardizer", standardizer.to_json()},
                      {"statics", statics.to_json()},
                      {"split", {{"validation_fraction", plan.validation_fraction}, {"test_fraction", plan.test_fraction}}},
                      {"calendar", sd.calendar}});

  result.log = train(model, splits.train, splits.validation, train_cfg, options.on_epoch);

  auto [forecasts, explanations] = predict_windows(model, splits.test, train_cfg.batch_size);
  const auto actuals = window_actuals(splits.test, model.scaling());
  result.report = compute_report(forecasts, actuals, sd.targets);
  result.baseline = compute_report(baseline_windows(splits.test, cfg.quantiles, model.scaling()), actuals, sd.targets);
  result.importance = aggregate_importance(explanations, cfg.channels);
  result.test_forecasts = std::move(forecasts);
  result.test_explanations = std::move(explanations);
  result.test_windows = std::move(splits.test);

  if (options.out_dir) {
    const std::string dir = *options.out_dir;
    std::filesystem::create_directories(dir);
    nlohmann::json manifest = options.manifest;
    manifest["scenario"] = spec.to_json();
    manifest["model"] = cfg.to_json();
    manifest["train"] = train_cfg.to_json();
    manifest["seed"] = train_cfg.seed;
    manifest["windows"] = {{"train", splits.train.size()},
                           {"validation", splits.validation.size()},
                           {"test", result.test_windows.size()}};
    manifest["best_epoch"] = result.log.best_epoch;
    manifest["epochs_run"] = result.log.epochs.size();
    write_text_file(dir + "/manifest.json", manifest.dump(2) + "\n");

    std::ostringstream metrics;
    write_metrics_csv(metrics, result.report, &result.baseline);
    write_text_file(dir + "/metrics.csv", metrics.str());
    std::ostringstream importance;
    result.importance.write_csv(importance);
    write_text_file(dir + "/importance.csv", importance.str());
    std::ostringstream profile;
    result.importance.write_attention_profile(profile);
    write_text_file(dir + "/attention_profile.csv", profile.str());
    std::ostringstream fc;
    write_forecasts_csv(fc, sd, result.test_windows, result.test_forecasts, sd.targets);
    write_text_file(dir + "/forecasts.csv", fc.str());
    std::ostringstream log;
    result.log.write_csv(log);
    write_text_file(dir + "/training_log.csv", log.str());
    write_attention_dir(dir + "/attention", sd, result.test_windows, result.test_explanations);
  }
  return result;
}

PreparedData prepare_for_model(const SeriesDataset& raw, const LfitModel& model) {
  const nlohmann::json& meta = model.metadata();
  if (!meta.contains("scenario") || !meta.contains("standardizer") || !meta.contains("statics")) {
    throw ConfigError("model file carries no preprocessing metadata");
  }
  PreparedData out;
  out.dataset = apply_scenario(raw, ScenarioSpec::from_json(meta["scenario"]));
  out.dataset.calendar = meta.value("calendar", out.dataset.calendar);
  out.standardizer = Standardizer::from_json(meta["standardizer"]);
  out.statics = StaticEncoding::from_json(meta["statics"]).apply(out.dataset);
  if (meta.contains("split")) {
    out.plan.validation_fraction = meta["split"].value("validation_fraction", out.plan.validation_fraction);
    out.plan.test_fraction = meta["split"].value("test_fraction", out.plan.test_fraction);
  }
  const ChannelSchema found = channel_schema(out.dataset, out.statics);
  const ChannelSchema& want = model.config().channels;
  if (!(found == want)) {
    auto join = [](const std::vector<std::string>& v) {
      std::string s;
      for (const auto& x : v) s += (s.empty() ? "" : ",") + x;
      return s;
    };
    throw ConfigError("data does not match the model schema: model expects past channels [" + join(want.past_names()) +
                      "], statics [" + join(want.static_names()) + "]; data provides [" + join(found.past_names()) +
                      "], statics [" + join(found.static_names()) + "]");
  }
  const auto channels = out.dataset.continuous_channels();
  for (std::size_t j = 0; j < channels.size(); ++j) {
    if (out.standardizer.channels().at(j) != channels[j]) throw ConfigError("standardizer does not match the data channels");
  }
  return out;
}

}  // namespace lfit
