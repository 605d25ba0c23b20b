#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lfit/dataset.hpp"
#include "lfit/evaluation.hpp"
#include "lfit/model.hpp"
#include "lfit/training.hpp"

namespace lfit {

/// The four input configurations: single target with neighbouring sites
/// (optionally plus environmental covariates), and multi-target with the
/// site label (optionally plus prior knowledge and environmental covariates).
enum class Scenario { StNsp, MtMpc, StNspEv, MtMpcPkEv };

Scenario parse_scenario(const std::string& name);
std::string scenario_name(Scenario scenario);
const std::vector<std::string>& scenario_names();

inline const char* kSiteStatic = "site";

struct ScenarioSpec {
  Scenario scenario = Scenario::MtMpcPkEv;
  std::string target_series;               ///< ST scenarios; empty selects the first series
  std::vector<std::string> environmental;  ///< observed covariates kept by EV scenarios; empty keeps all

  nlohmann::json to_json() const;
  static ScenarioSpec from_json(const nlohmann::json& j);
};

/// Rewires channel roles. ST scenarios keep one series and turn the other
/// series' targets into observed channels named `<series>:<channel>`.
SeriesDataset apply_scenario(const SeriesDataset& ds, const ScenarioSpec& spec);

/// Git blob hash: SHA-1 over "blob <size>\0" followed by the content.
std::string git_blob_sha1(const std::string& content);

struct RunOptions {
  Index stride = 1;
  std::optional<std::string> out_dir;  ///< artifacts are written only when set
  nlohmann::json manifest = nlohmann::json::object();  ///< merged into manifest.json
  EpochCallback on_epoch;
};

struct ScenarioResult {
  std::unique_ptr<LfitModel> model;
  SeriesDataset dataset;  ///< after scenario rewiring
  TrainingLog log;
  MetricReport report;
  MetricReport baseline;
  ImportanceSummary importance;
  std::vector<Window> test_windows;
  std::vector<Forecast> test_forecasts;
  std::vector<Explanation> test_explanations;
};

/// Rewires, trains, evaluates on the chronological test split and (optionally)
/// writes the run directory.
ScenarioResult run_scenario(const SeriesDataset& ds, const ScenarioSpec& spec, const LfitConfig& model_cfg,
                            const TrainConfig& train_cfg, const RunOptions& options = {});

/// Inputs rebuilt for a trained model from fresh data.
struct PreparedData {
  SeriesDataset dataset;
  StaticEncoding statics;
  Standardizer standardizer;
  SplitPlan plan;
};

/// Applies the model's scenario and stored preprocessing to `raw`; throws
/// ConfigError when the resulting channel layout differs from the model's.
PreparedData prepare_for_model(const SeriesDataset& raw, const LfitModel& model);

/// Inference over windows in chunks of `batch_size`.
std::pair<std::vector<Forecast>, std::vector<Explanation>> predict_windows(const LfitModel& model,
                                                                           const std::vector<Window>& windows,
                                                                           Index batch_size = 128);

/// Future targets of each window in original units, [τ x m] per window.
std::vector<Matrix> window_actuals(const std::vector<Window>& windows, const TargetScaling& scaling);

std::vector<Forecast> baseline_windows(const std::vector<Window>& windows, const std::vector<Scalar>& quantiles,
                                       const TargetScaling& scaling);

/// Rows: series_id, target, origin, step, quantile, value. `origin` is the
/// last observed step of the window.
void write_forecasts_csv(std::ostream& out, const SeriesDataset& ds, const std::vector<Window>& windows,
                         const std::vector<Forecast>& forecasts, const std::vector<std::string>& targets);

/// `attention/<series>_<origin>.csv`, one T x T matrix per window.
void write_attention_dir(const std::string& dir, const SeriesDataset& ds, const std::vector<Window>& windows,
                         const std::vector<Explanation>& explanations);

void write_text_file(const std::string& path, const std::string& content);

}  // namespace lfit
