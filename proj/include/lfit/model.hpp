#pragma once

#include <iosfwd>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lfit/attention.hpp"
#include "lfit/dataset.hpp"
#include "lfit/layers.hpp"
#include "lfit/selection.hpp"

namespace lfit {

inline const std::vector<Scalar> kDefaultQuantiles{0.02, 0.1, 0.25, 0.5, 0.75, 0.9, 0.98};

struct LfitConfig {
  Index d_model = 16;
  Index heads = 4;
  Index encoder_length = 24;
  Index horizon = 8;
  std::vector<Scalar> quantiles = kDefaultQuantiles;
  Scalar dropout = kDefaultDropout;
  bool anchor_targets = true;  ///< targets enter and leave the network relative to the last observation
  ChannelSchema channels;

  /// Throws ConfigError on any violated invariant.
  void validate() const;
  /// Index of q = 0.5; throws ConfigError when the median is not configured.
  Index median_index() const;

  nlohmann::json to_json() const;
  static LfitConfig from_json(const nlohmann::json& j);
};

/// Per-target affine map from standardized to original units.
struct TargetScaling {
  std::vector<Scalar> mean;
  std::vector<Scalar> stdev;

  static TargetScaling identity(Index targets);
  static TargetScaling from(const Standardizer& standardizer, Index targets);
  Scalar invert(Index target, Scalar value) const { return value * stdev[target] + mean[target]; }
};

/// Raw network outputs for a batch of B windows with T = k + τ positions.
struct ForwardOutput {
  Tensor prediction;      ///< [B*τ x m*|Q|], standardized, target-major columns
  Tensor attention;       ///< [B*T x T], head-averaged attention per element
  Tensor past_weights;    ///< [B*k x n_past]
  Tensor future_weights;  ///< [B*τ x n_future]
  std::optional<Tensor> static_weights;  ///< [B x n_static]
};

struct Forecast {
  std::vector<Matrix> values;  ///< one [τ x |Q|] block per target, original units
  std::vector<Scalar> quantiles;

  Index targets() const { return static_cast<Index>(values.size()); }
  Index horizon() const { return values.empty() ? 0 : values.front().rows(); }
};

struct Explanation {
  Matrix mean_attention;           ///< [T x T]
  Matrix past_variable_weights;    ///< [k x n_past]
  Matrix future_variable_weights;  ///< [τ x n_future]
  std::optional<std::vector<Scalar>> static_weights;
};

class LfitModel {
 public:
  LfitModel(LfitConfig config, std::uint64_t seed);

  /// Full pipeline. Dropout is active only when `g` is in training mode.
  ForwardOutput forward(Graph& g, const WindowBatch& batch) const;

  /// Inference-mode forecasts in original units.
  std::vector<Forecast> forecast(const WindowBatch& batch) const;
  std::vector<Explanation> explain(const WindowBatch& batch) const;
  std::pair<std::vector<Forecast>, std::vector<Explanation>> predict(const WindowBatch& batch) const;

  std::vector<Forecast> to_forecasts(const Matrix& prediction, const WindowBatch& batch) const;

  const LfitConfig& config() const { return config_; }
  bool has_prior_knowledge() const { return pk_.has_value(); }

  const TargetScaling& scaling() const { return scaling_; }
  void set_scaling(TargetScaling scaling);

  /// Free-form data needed to rebuild inputs at inference time (standardizer,
  /// vocabularies, scenario); persisted with the parameters.
  const nlohmann::json& metadata() const { return metadata_; }
  void set_metadata(nlohmann::json metadata) { metadata_ = std::move(metadata); }

  /// Every trainable tensor with a hierarchical name, in a fixed order.
  ParameterList parameters();
  Index parameter_count();

  InputEmbedder& embedder() { return embedder_; }
  VariableSelector& past_selector() { return past_selector_; }
  VariableSelector& future_selector() { return future_selector_; }
  PriorKnowledgeEncoder& prior_knowledge() { return *pk_; }
  InterpretableAttention& attention() { return attention_; }

 private:
  void check_batch(const WindowBatch& batch) const;

  LfitConfig config_;
  TargetScaling scaling_;
  nlohmann::json metadata_ = nlohmann::json::object();

  InputEmbedder embedder_;
  std::optional<PriorKnowledgeEncoder> pk_;
  VariableSelector past_selector_;
  VariableSelector future_selector_;
  LstmCell encoder_;
  LstmCell decoder_;
  Glu post_lstm_gate_;
  LayerNorm post_lstm_norm_;
  Grn enrichment_;
  InterpretableAttention attention_;
  Glu post_attention_gate_;
  LayerNorm post_attention_norm_;
  Grn final_grn_;
  std::vector<Linear> heads_;
};

inline constexpr std::uint32_t kModelFormatVersion = 1;

void save_model(LfitModel& model, std::ostream& out);
LfitModel load_model(std::istream& in);
void save_model_file(LfitModel& model, const std::string& path);
LfitModel load_model_file(const std::string& path);

}  // namespace lfit
