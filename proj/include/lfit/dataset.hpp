#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lfit/layers.hpp"
#include "lfit/standardizer.hpp"

namespace lfit {

using IndexMatrix = Eigen::Matrix<Index, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class ChannelRole { Target, Observed, KnownFuture, Static };

ChannelRole parse_role(const std::string& text);
std::string role_name(ChannelRole role);

/// How timestamps map onto the integer step axis.
enum class TimeMode {
  Step,     ///< integer step indices
  Monthly,  ///< ISO dates on a fixed day of month; step = months since year 0
  Seconds,  ///< ISO date-times; step = (t - origin) / step_seconds
};

/// Channel roles plus ingestion options, usually read from a JSON file.
struct DataSchema {
  std::vector<std::pair<std::string, ChannelRole>> channels;  ///< in declaration order
  std::optional<std::string> statics_csv;
  double missing_threshold = 0.7;
  bool calendar = true;

  static DataSchema from_json(const nlohmann::json& j);
  static DataSchema load(const std::string& path);
  nlohmann::json to_json() const;
  std::vector<std::string> names(ChannelRole role) const;
};

struct Series {
  std::string id;
  std::vector<std::int64_t> steps;  ///< contiguous, ascending
  Matrix values;                    ///< [length x continuous channels]
  std::vector<std::string> statics;

  Index length() const { return static_cast<Index>(steps.size()); }
};

/// Multi-site table. Continuous columns are ordered targets, observed,
/// known-future; static attributes are kept as raw strings.
struct SeriesDataset {
  std::vector<std::string> targets;
  std::vector<std::string> observed;
  std::vector<std::string> known_future;
  std::vector<std::string> statics;
  TimeMode time_mode = TimeMode::Step;
  std::int64_t origin_seconds = 0;
  std::int64_t step_seconds = 1;
  int month_day = 1;  ///< day of month used when formatting monthly steps
  bool calendar = true;
  std::vector<Series> series;
  std::vector<std::string> log;

  Index continuous_count() const {
    return static_cast<Index>(targets.size() + observed.size() + known_future.size());
  }
  std::vector<std::string> continuous_channels() const;
  Index column(const std::string& channel) const;
  const Series& find(const std::string& id) const;

  /// Calendar month (0-11) of a step.
  int month_of(std::int64_t step) const;
  /// Formats a step back into the dataset's timestamp convention.
  std::string timestamp_of(std::int64_t step) const;
};

/// Parses a long-format CSV (`series_id,timestamp,<channels>`).
SeriesDataset load_csv(const std::string& path, const DataSchema& schema);
SeriesDataset parse_csv(const std::string& text, const DataSchema& schema, const std::string& statics_text = {});

/// Fills NaN cells of one column: linear interpolation inside, nearest value
/// at the ends. Returns the number of filled cells, or -1 for an all-NaN column.
Index fill_gaps(Matrix& values, Index col);

void write_csv(const SeriesDataset& ds, std::ostream& data, std::ostream* statics);

/// Element-wise Euclidean norm across aligned component series.
std::vector<Scalar> integrate_displacement(const std::vector<std::vector<Scalar>>& components);

/// Replaces the listed target channels by their norm under `name`.
SeriesDataset integrate_displacement(const SeriesDataset& ds, const std::vector<std::string>& components,
                                     const std::string& name);

/// Sorted vocabularies for every static attribute plus per-series indices.
struct StaticEncoding {
  std::vector<std::string> names;
  std::vector<std::vector<std::string>> vocabularies;
  std::vector<std::vector<Index>> indices;  ///< [series][attribute]

  Index lookup(Index attribute, const std::string& value) const;
  std::vector<Index> cardinalities() const;
  /// Re-encodes another dataset with these vocabularies (unseen values throw).
  StaticEncoding apply(const SeriesDataset& ds) const;

  nlohmann::json to_json() const;
  static StaticEncoding from_json(const nlohmann::json& j);
};

StaticEncoding encode_statics(const SeriesDataset& ds);

struct CategoricalChannel {
  std::string name;
  Index cardinality = 0;
};

/// Model-facing channel layout. Past inputs are targets, observed,
/// known-continuous then known-categorical; future inputs are the known
/// channels only.
struct ChannelSchema {
  std::vector<std::string> targets;
  std::vector<std::string> observed;
  std::vector<std::string> known_continuous;
  std::vector<CategoricalChannel> known_categorical;
  std::vector<CategoricalChannel> statics;

  Index past_continuous() const { return static_cast<Index>(targets.size() + observed.size() + known_continuous.size()); }
  Index past_channels() const { return past_continuous() + static_cast<Index>(known_categorical.size()); }
  Index future_channels() const { return static_cast<Index>(known_continuous.size() + known_categorical.size()); }
  std::vector<std::string> past_names() const;
  std::vector<std::string> future_names() const;
  std::vector<std::string> static_names() const;

  nlohmann::json to_json() const;
  static ChannelSchema from_json(const nlohmann::json& j);
  bool operator==(const ChannelSchema& other) const { return to_json() == other.to_json(); }
};

inline const char* kTimeIndexChannel = "time_index";
inline const char* kMonthChannel = "month";
inline const char* kSeasonChannel = "season";

ChannelSchema channel_schema(const SeriesDataset& ds, const StaticEncoding& statics);

/// One encoder/decoder slice of a series, standardized.
struct Window {
  std::size_t series = 0;
  Index origin = 0;                 ///< row of the first encoder position
  std::int64_t first_step = 0;      ///< step of the first encoder position
  Matrix past_continuous;           ///< [k x past_continuous]
  IndexMatrix past_categorical;     ///< [k x known_categorical]
  Matrix future_continuous;         ///< [τ x known_continuous]
  IndexMatrix future_categorical;   ///< [τ x known_categorical]
  Matrix future_targets;            ///< [τ x targets]; empty for pure forecasts
  std::vector<Index> statics;
  std::vector<Scalar> anchors;      ///< standardized last observed target, subtracted from target blocks; empty when off
};

/// Windows stacked along rows: element b occupies rows [b*k, (b+1)*k) of the
/// past blocks and [b*τ, (b+1)*τ) of the future blocks.
struct WindowBatch {
  Index batch_size = 0;
  Index encoder_length = 0;
  Index horizon = 0;
  Matrix past_continuous;
  IndexMatrix past_categorical;
  Matrix future_continuous;
  IndexMatrix future_categorical;
  Matrix future_targets;
  IndexMatrix statics;  ///< [B x n_static]
  Matrix anchors;       ///< [B x targets], or empty when windows are not anchored

  Scalar anchor(Index b, Index target) const { return anchors.size() == 0 ? 0.0 : anchors(b, target); }
};

WindowBatch collate(const std::vector<const Window*>& windows);
WindowBatch collate(const std::vector<Window>& windows);

/// Chronological per-series split: the last `test_fraction` of each series
/// is the test segment, the `validation_fraction` before it validation.
struct SplitPlan {
  double validation_fraction = 0.2;
  double test_fraction = 0.2;
};

struct SeriesSplit {
  Index train_end = 0;
  Index validation_end = 0;
};

SeriesSplit split_series(Index length, const SplitPlan& plan);

struct WindowSplits {
  std::vector<Window> train;
  std::vector<Window> validation;
  std::vector<Window> test;
};

/// Fits the standardizer on the training segment of every series (targets,
/// observed, known-future and the calendar time index).
Standardizer fit_standardizer(const SeriesDataset& ds, const SplitPlan& plan);

/// Turns a dataset into standardized windows.
class WindowBuilder {
 public:
  /// With `anchor_targets`, target values in each window are offsets from the
  /// last observed (standardized) target of that window.
  WindowBuilder(const SeriesDataset& ds, StaticEncoding statics, Standardizer standardizer, bool anchor_targets = false);

  /// Every window of every series with the given stride; series shorter than
  /// k + τ are skipped (and logged); none long enough raises a DataError.
  std::vector<Window> build(Index k, Index horizon, Index stride = 1);

  /// Windows whose horizon lies entirely inside one chronological segment.
  WindowSplits build_splits(Index k, Index horizon, const SplitPlan& plan, Index stride = 1);

  /// The window ending at the last observed row, with calendar features
  /// extrapolated over the horizon. Requires the dataset to have no
  /// CSV-provided known-future channels.
  Window forecast_window(std::size_t series, Index k, Index horizon) const;

  const ChannelSchema& schema() const { return schema_; }
  const Standardizer& standardizer() const { return standardizer_; }
  const StaticEncoding& statics() const { return statics_; }
  const std::vector<std::string>& log() const { return log_; }

 private:
  Window make_window(std::size_t series, Index origin, Index k, Index horizon) const;
  void fill_calendar(std::int64_t step, Index row, Matrix& cont, Index time_col, IndexMatrix& cat) const;
  void anchor(Window& w) const;

  const SeriesDataset& ds_;
  StaticEncoding statics_;
  Standardizer standardizer_;
  ChannelSchema schema_;
  bool anchor_targets_ = false;
  std::vector<std::string> log_;
};

/// Drivers for synthetic series.
enum class ResponseMode { WaterDriven, RainfallDriven, Noise };
std::string response_name(ResponseMode mode);

struct SyntheticSpec {
  Index series_count = 6;
  Index length = 240;
  Index period = 12;
  Scalar water_amplitude = 10.0;
  Scalar rainfall_rate = 0.15;
  Scalar rainfall_magnitude = 20.0;
  std::vector<ResponseMode> modes{ResponseMode::WaterDriven};  ///< cycled across series
  Scalar gain = 0.5;
  Index lag = 1;
  Scalar trend = 0.2;
  Scalar noise_stdev = 0.1;
  Index noise_covariates = 2;
  std::uint64_t seed = 0;

  static SyntheticSpec from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

struct SyntheticData {
  SeriesDataset dataset;
  std::vector<ResponseMode> drivers;  ///< ground-truth driver per series
  std::vector<Scalar> water_level;    ///< shared reservoir signal, indexed by step
  std::vector<Scalar> rainfall;
};

SyntheticData generate_synthetic(const SyntheticSpec& spec);

/// Content of `schema.json` describing a generated dataset.
nlohmann::json synthetic_schema_json();

}  // namespace lfit
