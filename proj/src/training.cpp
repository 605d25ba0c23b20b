#include "lfit/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>

#include "lfit/csv.hpp"

namespace lfit {

Scalar pinball_loss(Scalar pred, Scalar target, Scalar q) {
  if (!(q > 0 && q < 1)) throw ContractError("pinball_loss: quantile must lie in (0, 1)");
  const Scalar e = target - pred;
  return std::max(q * e, (q - 1) * e);
}

Tensor quantile_loss(const Tensor& prediction, const Matrix& targets, const std::vector<Scalar>& quantiles) {
  const Index nq = static_cast<Index>(quantiles.size());
  const Index m = targets.cols();
  if (nq == 0 || prediction.rows() != targets.rows() || prediction.cols() != m * nq) {
    throw DimensionError("quantile_loss: prediction " + shape_string(prediction.shape()) + " does not match targets [" +
                         std::to_string(targets.rows()) + "x" + std::to_string(m) + "] with " + std::to_string(nq) +
                         " quantiles");
  }
  for (Scalar q : quantiles)
    if (!(q > 0 && q < 1)) throw ContractError("quantile_loss: quantile must lie in (0, 1)");
  const Scalar norm = 1.0 / static_cast<Scalar>(prediction.numel());
  const Matrix& pred = prediction.value();
  Scalar total = 0;
  Matrix slope(pred.rows(), pred.cols());
  for (Index r = 0; r < pred.rows(); ++r) {
    for (Index t = 0; t < m; ++t) {
      for (Index j = 0; j < nq; ++j) {
        const Index c = t * nq + j;
        const Scalar q = quantiles[j];
        const Scalar e = targets(r, t) - pred(r, c);
        total += std::max(q * e, (q - 1) * e);
        slope(r, c) = (e > 0 ? -q : (e < 0 ? 1 - q : 0.0)) * norm;
      }
    }
  }
  return detail::record<Scalar>({}, Matrix::Constant(1, 1, total * norm), {&prediction},
                                [prediction, slope](const Matrix& g, GradTape<Scalar>& tape) {
                                  if (prediction.tracked()) tape.accumulate(prediction.node(), slope * g(0, 0));
                                });
}

Tensor lfit_objective(const ForwardOutput& output, const WindowBatch& batch, const std::vector<Scalar>& quantiles) {
  if (batch.future_targets.rows() != batch.batch_size * batch.horizon) {
    throw ContractError("lfit_objective: batch carries no future targets");
  }
  return quantile_loss(output.prediction, batch.future_targets, quantiles);
}

void adam_step(const ParameterList& params, const Gradients& grads, AdamState& state, const AdamConfig& cfg) {
  ++state.step;
  const Scalar t = static_cast<Scalar>(state.step);
  const Scalar correction1 = 1 - std::pow(cfg.beta1, t);
  const Scalar correction2 = 1 - std::pow(cfg.beta2, t);
  for (const auto& [name, p] : params) {
    auto [it, inserted] = state.moments.try_emplace(p);
    auto& mom = it->second;
    if (inserted) {
      mom.first = Matrix::Zero(p->value.rows(), p->value.cols());
      mom.second = Matrix::Zero(p->value.rows(), p->value.cols());
    }
    const Matrix* g = grads.find(*p);
    if (cfg.weight_decay != 0) p->value -= cfg.learning_rate * cfg.weight_decay * p->value;
    if (g) {
      mom.first = cfg.beta1 * mom.first + (1 - cfg.beta1) * *g;
      mom.second = cfg.beta2 * mom.second + (1 - cfg.beta2) * g->cwiseAbs2();
    } else {
      mom.first *= cfg.beta1;
      mom.second *= cfg.beta2;
    }
    p->value.array() -= cfg.learning_rate * (mom.first.array() / correction1) /
                        ((mom.second.array() / correction2).sqrt() + cfg.eps);
  }
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (patience < 1) throw ConfigError("patience must be >= 1");
  if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
  if (!(learning_rate > 0)) throw ConfigError("learning_rate must be > 0");
  if (weight_decay < 0) throw ConfigError("weight_decay must be >= 0");
  if (!(validation_fraction > 0 && validation_fraction < 1)) throw ConfigError("validation_fraction must lie in (0, 1)");
  if (test_fraction < 0 || validation_fraction + test_fraction >= 1) {
    throw ConfigError("test_fraction must be >= 0 and validation_fraction + test_fraction < 1");
  }
}

AdamConfig TrainConfig::adam() const {
  AdamConfig a;
  a.learning_rate = learning_rate;
  a.weight_decay = weight_decay;
  return a;
}

nlohmann::json TrainConfig::to_json() const {
  return {{"batch_size", batch_size},       {"learning_rate", learning_rate},
          {"weight_decay", weight_decay},   {"max_epochs", max_epochs},
          {"patience", patience},           {"seed", seed},
          {"validation_fraction", validation_fraction}, {"test_fraction", test_fraction}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.batch_size = j.value("batch_size", c.batch_size);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.patience = j.value("patience", c.patience);
  c.seed = j.value("seed", c.seed);
  c.validation_fraction = j.value("validation_fraction", c.validation_fraction);
  c.test_fraction = j.value("test_fraction", c.test_fraction);
  return c;
}

void TrainingLog::write_csv(std::ostream& out) const {
  csv::write_row(out, {"epoch", "train_objective", "val_objective", "elapsed_seconds"});
  for (const auto& e : epochs) {
    csv::write_row(out, {std::to_string(e.epoch), csv::format_double(e.train_objective),
                         csv::format_double(e.val_objective), csv::format_double(e.elapsed_seconds)});
  }
}

Scalar evaluate_objective(const LfitModel& model, const std::vector<Window>& windows, Index batch_size) {
  if (windows.empty()) throw DataError("evaluate_objective: no windows");
  Scalar total = 0;
  for (std::size_t start = 0; start < windows.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(windows.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<const Window*> chunk;
    for (std::size_t i = start; i < end; ++i) chunk.push_back(&windows[i]);
    const WindowBatch batch = collate(chunk);
    Graph g;
    const ForwardOutput out = model.forward(g, batch);
    total += lfit_objective(out, batch, model.config().quantiles).item() * static_cast<Scalar>(end - start);
  }
  return total / static_cast<Scalar>(windows.size());
}

TrainingLog train(LfitModel& model, const std::vector<Window>& train_windows,
                  const std::vector<Window>& validation_windows, const TrainConfig& cfg,
                  const EpochCallback& callback) {
  cfg.validate();
  if (train_windows.empty()) throw DataError("training split has no windows");
  if (validation_windows.empty()) throw DataError("validation split has no windows");

  const auto start_time = std::chrono::steady_clock::now();
  std::mt19937_64 shuffle_rng(cfg.seed);
  std::mt19937_64 dropout_rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);
  const AdamConfig adam = cfg.adam();
  AdamState state;
  ParameterList params = model.parameters();

  TrainingLog log;
  std::vector<Matrix> best(params.size());
  Scalar best_val = std::numeric_limits<Scalar>::infinity();
  Index stale = 0;
  std::vector<std::size_t> order(train_windows.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (Index epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    Scalar train_total = 0;
    for (std::size_t s = 0; s < order.size(); s += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t e = std::min(order.size(), s + static_cast<std::size_t>(cfg.batch_size));
      std::vector<const Window*> chunk;
      for (std::size_t i = s; i < e; ++i) chunk.push_back(&train_windows[order[i]]);
      const WindowBatch batch = collate(chunk);
      Graph g = Graph::recording();
      g.enable_training(dropout_rng);
      const ForwardOutput out = model.forward(g, batch);
      const Tensor loss = lfit_objective(out, batch, model.config().quantiles);
      const Gradients grads = g.backward(loss);
      adam_step(params, grads, state, adam);
      train_total += loss.item() * static_cast<Scalar>(e - s);
    }
    EpochRecord record;
    record.epoch = epoch;
    record.train_objective = train_total / static_cast<Scalar>(order.size());
    record.val_objective = evaluate_objective(model, validation_windows, cfg.batch_size);
    record.elapsed_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_time).count();
    log.epochs.push_back(record);

    if (record.val_objective < best_val) {
      best_val = record.val_objective;
      log.best_epoch = epoch;
      for (std::size_t i = 0; i < params.size(); ++i) best[i] = params[i].param->value;
      stale = 0;
    } else if (++stale >= cfg.patience) {
      log.stopped_early = true;
      break;
    }
    if (callback && !callback(record)) break;
  }
  if (log.best_epoch == 0) throw DataError("validation objective never became finite");
  for (std::size_t i = 0; i < params.size(); ++i) params[i].param->value = best[i];
  log.best_val_objective = best_val;
  return log;
}

}  // namespace lfit
