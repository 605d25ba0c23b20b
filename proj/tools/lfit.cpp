// lfit: generate synthetic data, train, forecast, explain and evaluate.

#include <Eigen/Core>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "lfit/csv.hpp"
#include "lfit/dataset.hpp"
#include "lfit/evaluation.hpp"
#include "lfit/model.hpp"
#include "lfit/scenario.hpp"
#include "lfit/training.hpp"

namespace fs = std::filesystem;
using namespace lfit;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string scenario;
  bool baseline = false;
  std::string model;
  std::string data;
  std::string schema;
  Index horizon = 0;
};

/// Effective run configuration: the JSON file with flag overrides applied.
struct RunConfig {
  nlohmann::json json = nlohmann::json::object();
  fs::path base;  ///< directory relative config paths resolve against

  std::string path(const std::string& p) const {
    if (p.empty() || fs::path(p).is_absolute()) return p;
    return (base / p).lexically_normal().string();
  }
};

RunConfig load_config(const Options& opt) {
  RunConfig rc;
  if (!opt.config_path.empty()) {
    try {
      rc.json = nlohmann::json::parse(csv::read_file(opt.config_path));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("cannot parse config '" + opt.config_path + "': " + e.what());
    }
    rc.base = fs::path(opt.config_path).parent_path();
  }
  nlohmann::json& j = rc.json;
  // flags are relative to the working directory; rebase them onto `base`
  auto flag_path = [&](const std::string& p) { return fs::absolute(p).lexically_normal().string(); };
  if (opt.seed) j["seed"] = *opt.seed;
  if (!opt.out.empty()) j["out"] = flag_path(opt.out);
  if (!opt.scenario.empty()) {
    if (!j.contains("scenario") || j["scenario"].is_string()) j["scenario"] = nlohmann::json::object();
    j["scenario"]["scenario"] = opt.scenario;
  }
  if (!opt.model.empty()) j["model_path"] = flag_path(opt.model);
  if (!opt.data.empty()) j["data"]["csv"] = flag_path(opt.data);
  if (!opt.schema.empty()) j["data"]["schema"] = flag_path(opt.schema);
  if (opt.horizon > 0) j["horizon"] = opt.horizon;
  if (j.contains("scenario") && j["scenario"].is_string()) j["scenario"] = {{"scenario", j["scenario"]}};
  if (j.contains("scenario")) {
    const std::string name = j["scenario"].value("scenario", std::string{"MT-MPC-PK-EV"});
    const auto& names = scenario_names();
    if (std::find(names.begin(), names.end(), name) == names.end()) {
      throw UsageError("invalid scenario '" + name + "' (expected ST-NSP, MT-MPC, ST-NSP-EV or MT-MPC-PK-EV)");
    }
  }
  return rc;
}

std::string out_dir(const RunConfig& rc, const char* fallback) {
  const std::string dir = rc.json.contains("out") ? rc.path(rc.json["out"].get<std::string>()) : std::string(fallback);
  fs::create_directories(dir);
  return dir;
}

std::uint64_t run_seed(const RunConfig& rc) { return rc.json.value("seed", std::uint64_t{0}); }

SyntheticSpec synthetic_spec(const RunConfig& rc) {
  SyntheticSpec spec = SyntheticSpec::from_json(rc.json.value("synthetic", nlohmann::json::object()));
  if (rc.json.contains("seed")) spec.seed = run_seed(rc);
  return spec;
}

struct LoadedData {
  SeriesDataset dataset;
  nlohmann::json inputs = nlohmann::json::array();  ///< path + content hash per input
};

LoadedData load_data(const RunConfig& rc) {
  const bool has_file = rc.json.contains("data");
  const bool has_synthetic = rc.json.contains("synthetic");
  if (has_file == has_synthetic) {
    throw UsageError("config must name exactly one data source: \"data\" {csv, schema} or \"synthetic\" {...}");
  }
  LoadedData out;
  if (has_synthetic) {
    const SyntheticSpec spec = synthetic_spec(rc);
    out.dataset = generate_synthetic(spec).dataset;
    out.inputs.push_back({{"synthetic", spec.to_json()}, {"sha1", git_blob_sha1(spec.to_json().dump())}});
    return out;
  }
  const auto& d = rc.json["data"];
  if (!d.contains("csv") || !d.contains("schema")) throw UsageError("\"data\" needs both \"csv\" and \"schema\"");
  const std::string csv_path = rc.path(d["csv"].get<std::string>());
  const std::string schema_path = rc.path(d["schema"].get<std::string>());
  const DataSchema schema = DataSchema::load(schema_path);
  out.dataset = load_csv(csv_path, schema);
  out.inputs.push_back({{"path", csv_path}, {"sha1", git_blob_sha1(csv::read_file(csv_path))}});
  out.inputs.push_back({{"path", schema_path}, {"sha1", git_blob_sha1(csv::read_file(schema_path))}});
  if (schema.statics_csv) {
    out.inputs.push_back({{"path", *schema.statics_csv}, {"sha1", git_blob_sha1(csv::read_file(*schema.statics_csv))}});
  }
  for (const auto& line : out.dataset.log) std::cerr << "lfit: " << line << "\n";
  return out;
}

LfitModel load_trained_model(const RunConfig& rc) {
  if (!rc.json.contains("model_path")) throw UsageError("no model file given (--model or \"model_path\")");
  return load_model_file(rc.path(rc.json["model_path"].get<std::string>()));
}

int cmd_generate(const RunConfig& rc) {
  const SyntheticSpec spec = synthetic_spec(rc);
  const SyntheticData data = generate_synthetic(spec);
  const std::string dir = out_dir(rc, "synthetic");
  std::ostringstream csv_out;
  std::ostringstream statics_out;
  write_csv(data.dataset, csv_out, &statics_out);
  write_text_file(dir + "/data.csv", csv_out.str());
  write_text_file(dir + "/statics.csv", statics_out.str());
  nlohmann::json schema = synthetic_schema_json();
  for (Index i = 0; i < spec.noise_covariates; ++i)
    schema["channels"].push_back({{"name", "noise_" + std::to_string(i + 1)}, {"role", "observed"}});
  write_text_file(dir + "/schema.json", schema.dump(2) + "\n");
  nlohmann::json drivers = nlohmann::json::object();
  for (std::size_t i = 0; i < data.dataset.series.size(); ++i)
    drivers[data.dataset.series[i].id] = response_name(data.drivers[i]);
  const nlohmann::json meta{{"spec", spec.to_json()}, {"drivers", drivers}, {"data_sha1", git_blob_sha1(csv_out.str())}};
  write_text_file(dir + "/metadata.json", meta.dump(2) + "\n");
  std::cout << "wrote " << data.dataset.series.size() << " series x " << spec.length << " steps to " << dir << "\n";
  return kExitOk;
}

int cmd_train(const RunConfig& rc) {
  const LoadedData data = load_data(rc);
  const ScenarioSpec spec = ScenarioSpec::from_json(rc.json.value("scenario", nlohmann::json::object()));
  const LfitConfig model_cfg = LfitConfig::from_json(rc.json.value("model", nlohmann::json::object()));
  TrainConfig train_cfg = TrainConfig::from_json(rc.json.value("train", nlohmann::json::object()));
  if (rc.json.contains("seed")) train_cfg.seed = run_seed(rc);
  const std::string dir = out_dir(rc, "run");

  RunOptions options;
  options.stride = rc.json.value("stride", Index{1});
  options.out_dir = dir;
  nlohmann::json effective = rc.json;
  effective["scenario"] = spec.to_json();
  effective["train"] = train_cfg.to_json();
  effective["seed"] = train_cfg.seed;
  effective.erase("out");
  options.manifest = {{"command", "train"}, {"config", effective}, {"inputs", data.inputs}};
  options.on_epoch = [](const EpochRecord& r) {
    std::cerr << "epoch " << r.epoch << "  train " << r.train_objective << "  val " << r.val_objective << "\n";
    return true;
  };
  ScenarioResult result = run_scenario(data.dataset, spec, model_cfg, train_cfg, options);

  const std::string model_path = dir + "/model.lfit";
  save_model_file(*result.model, model_path);
  nlohmann::json manifest = nlohmann::json::parse(csv::read_file(dir + "/manifest.json"));
  manifest["model_file"] = {{"path", "model.lfit"}, {"sha1", git_blob_sha1(csv::read_file(model_path))}};
  write_text_file(dir + "/manifest.json", manifest.dump(2) + "\n");

  std::cout << "best epoch " << result.log.best_epoch << " of " << result.log.epochs.size() << ", test MAE "
            << result.report.overall.mae << " (persistence " << result.baseline.overall.mae << ")\n"
            << "model written to " << model_path << "\n";
  return kExitOk;
}

int cmd_forecast(const RunConfig& rc) {
  const LfitModel model = load_trained_model(rc);
  const LoadedData data = load_data(rc);
  const PreparedData prepared = prepare_for_model(data.dataset, model);
  const Index horizon = rc.json.value("horizon", model.config().horizon);
  if (horizon < 1) throw UsageError("horizon must be >= 1");
  WindowBuilder builder(prepared.dataset, prepared.statics, prepared.standardizer, model.config().anchor_targets);
  std::vector<Window> windows;
  for (std::size_t s = 0; s < prepared.dataset.series.size(); ++s)
    windows.push_back(builder.forecast_window(s, model.config().encoder_length, horizon));
  const auto [forecasts, explanations] = predict_windows(model, windows);
  const std::string dir = out_dir(rc, ".");
  std::ostringstream os;
  write_forecasts_csv(os, prepared.dataset, windows, forecasts, prepared.dataset.targets);
  write_text_file(dir + "/forecasts.csv", os.str());
  std::cout << "wrote forecasts for " << windows.size() << " series to " << dir << "/forecasts.csv\n";
  return kExitOk;
}

std::vector<Window> test_windows(const LfitModel& model, const PreparedData& prepared, const RunConfig& rc) {
  WindowBuilder builder(prepared.dataset, prepared.statics, prepared.standardizer, model.config().anchor_targets);
  WindowSplits splits = builder.build_splits(model.config().encoder_length, model.config().horizon, prepared.plan,
                                             rc.json.value("stride", Index{1}));
  if (splits.test.empty()) throw DataError("the test split holds no complete window");
  return std::move(splits.test);
}

int cmd_explain(const RunConfig& rc) {
  const LfitModel model = load_trained_model(rc);
  const LoadedData data = load_data(rc);
  const PreparedData prepared = prepare_for_model(data.dataset, model);
  const std::vector<Window> windows = test_windows(model, prepared, rc);
  const auto [forecasts, explanations] = predict_windows(model, windows);
  const ImportanceSummary summary = aggregate_importance(explanations, model.config().channels);
  const std::string dir = out_dir(rc, ".");
  std::ostringstream imp;
  summary.write_csv(imp);
  write_text_file(dir + "/importance.csv", imp.str());
  std::ostringstream profile;
  summary.write_attention_profile(profile);
  write_text_file(dir + "/attention_profile.csv", profile.str());
  write_attention_dir(dir + "/attention", prepared.dataset, windows, explanations);
  std::cout << "explained " << windows.size() << " windows into " << dir << "\n";
  return kExitOk;
}

int cmd_evaluate(const RunConfig& rc, bool baseline) {
  const LfitModel model = load_trained_model(rc);
  const LoadedData data = load_data(rc);
  const PreparedData prepared = prepare_for_model(data.dataset, model);
  const std::vector<Window> windows = test_windows(model, prepared, rc);
  const auto [forecasts, explanations] = predict_windows(model, windows);
  const auto actuals = window_actuals(windows, model.scaling());
  const MetricReport report = compute_report(forecasts, actuals, prepared.dataset.targets);
  std::optional<MetricReport> base;
  if (baseline) {
    base = compute_report(baseline_windows(windows, model.config().quantiles, model.scaling()), actuals,
                          prepared.dataset.targets);
  }
  const std::string dir = out_dir(rc, ".");
  std::ostringstream os;
  write_metrics_csv(os, report, base ? &*base : nullptr);
  write_text_file(dir + "/metrics.csv", os.str());
  std::cout << "test MAE " << report.overall.mae << ", RMSE " << report.overall.rmse;
  if (base) std::cout << " (persistence MAE " << base->overall.mae << ")";
  std::cout << "\n";
  return kExitOk;
}

void apply_thread_limit() {
  if (const char* env = std::getenv("LFIT_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) Eigen::setNbThreads(n);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"lfit: interpretable multi-horizon quantile forecasting with prior knowledge"};
  app.require_subcommand(1);
  Options opt;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", opt.config_path, "JSON run configuration")->check(CLI::ExistingFile);
    sub->add_option("--seed", opt.seed, "random seed (overrides config)");
    sub->add_option("--out", opt.out, "output directory");
  };
  auto add_data = [&](CLI::App* sub) {
    sub->add_option("--data", opt.data, "data CSV (overrides config)");
    sub->add_option("--schema", opt.schema, "schema JSON (overrides config)");
  };
  auto add_model = [&](CLI::App* sub) { sub->add_option("--model", opt.model, "trained model file"); };

  CLI::App* generate = app.add_subcommand("generate", "write a synthetic dataset");
  add_common(generate);
  CLI::App* train_cmd = app.add_subcommand("train", "train a model for a scenario");
  add_common(train_cmd);
  add_data(train_cmd);
  train_cmd->add_option("--scenario", opt.scenario, "ST-NSP | MT-MPC | ST-NSP-EV | MT-MPC-PK-EV");
  CLI::App* forecast = app.add_subcommand("forecast", "forecast beyond the end of every series");
  add_common(forecast);
  add_data(forecast);
  add_model(forecast);
  forecast->add_option("--horizon", opt.horizon, "forecast horizon (defaults to the trained horizon)");
  CLI::App* explain = app.add_subcommand("explain", "export importance and attention on the test split");
  add_common(explain);
  add_data(explain);
  add_model(explain);
  CLI::App* evaluate = app.add_subcommand("evaluate", "metrics on the test split");
  add_common(evaluate);
  add_data(evaluate);
  add_model(evaluate);
  evaluate->add_flag("--baseline", opt.baseline, "add persistence-baseline columns");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  apply_thread_limit();
  try {
    const RunConfig rc = load_config(opt);
    if (generate->parsed()) return cmd_generate(rc);
    if (train_cmd->parsed()) return cmd_train(rc);
    if (forecast->parsed()) return cmd_forecast(rc);
    if (explain->parsed()) return cmd_explain(rc);
    if (evaluate->parsed()) return cmd_evaluate(rc, opt.baseline);
  } catch (const UsageError& e) {
    std::cerr << "lfit: usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "lfit: error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
