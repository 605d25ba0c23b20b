#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "lfit/dataset.hpp"
#include "lfit/model.hpp"

namespace lfit {

/// max(q e, (q - 1) e) with e = target - pred.
Scalar pinball_loss(Scalar pred, Scalar target, Scalar q);

/// Mean pinball loss over every row, target and quantile. `prediction` is
/// [N x m*|Q|] with target-major columns, `targets` is [N x m].
Tensor quantile_loss(const Tensor& prediction, const Matrix& targets, const std::vector<Scalar>& quantiles);

/// Training objective for a forward pass over a batch with future targets.
Tensor lfit_objective(const ForwardOutput& output, const WindowBatch& batch, const std::vector<Scalar>& quantiles);

struct AdamConfig {
  Scalar learning_rate = 1e-3;
  Scalar weight_decay = 5e-4;
  Scalar beta1 = 0.9;
  Scalar beta2 = 0.999;
  Scalar eps = 1e-8;
};

struct AdamState {
  struct Moments {
    Matrix first;
    Matrix second;
  };
  Index step = 0;
  std::unordered_map<const Parameter*, Moments> moments;
};

/// One Adam update with bias correction and decoupled weight decay.
void adam_step(const ParameterList& params, const Gradients& grads, AdamState& state, const AdamConfig& cfg);

struct TrainConfig {
  Index batch_size = 128;
  Scalar learning_rate = 1e-3;
  Scalar weight_decay = 5e-4;
  Index max_epochs = 100;
  Index patience = 10;
  std::uint64_t seed = 0;
  Scalar validation_fraction = 0.2;
  Scalar test_fraction = 0.2;

  void validate() const;
  AdamConfig adam() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

struct EpochRecord {
  Index epoch = 0;
  Scalar train_objective = 0;
  Scalar val_objective = 0;
  double elapsed_seconds = 0;
};

struct TrainingLog {
  std::vector<EpochRecord> epochs;
  Index best_epoch = 0;
  Scalar best_val_objective = 0;
  bool stopped_early = false;

  void write_csv(std::ostream& out) const;
};

/// Called after every epoch; returning false stops training.
using EpochCallback = std::function<bool(const EpochRecord&)>;

/// Shuffled mini-batch Adam with early stopping on the validation objective.
/// The best-validation parameters are restored before returning.
TrainingLog train(LfitModel& model, const std::vector<Window>& train_windows,
                  const std::vector<Window>& validation_windows, const TrainConfig& cfg,
                  const EpochCallback& callback = {});

/// Objective in inference mode, averaged over windows.
Scalar evaluate_objective(const LfitModel& model, const std::vector<Window>& windows, Index batch_size);

}  // namespace lfit
