#pragma once

#include <random>
#include <string>
#include <vector>

#include "lfit/dataset.hpp"
#include "lfit/model.hpp"

namespace lfit::testing {

/// Small schema: targets, observed, one continuous known channel, month and
/// season calendar categoricals and the given static cardinalities.
inline ChannelSchema tiny_schema(Index targets = 1, Index observed = 2, std::vector<Index> statics = {3, 2}) {
  ChannelSchema s;
  for (Index i = 0; i < targets; ++i) s.targets.push_back("y" + std::to_string(i));
  for (Index i = 0; i < observed; ++i) s.observed.push_back("x" + std::to_string(i));
  s.known_continuous = {"time_index"};
  s.known_categorical = {{"month", 12}, {"season", 4}};
  for (std::size_t i = 0; i < statics.size(); ++i) s.statics.push_back({"s" + std::to_string(i), statics[i]});
  return s;
}

inline LfitConfig tiny_config(ChannelSchema schema, Index k = 6, Index tau = 3, Index d_model = 8, Index heads = 2) {
  LfitConfig c;
  c.d_model = d_model;
  c.heads = heads;
  c.encoder_length = k;
  c.horizon = tau;
  c.quantiles = {0.1, 0.5, 0.9};
  c.channels = std::move(schema);
  return c;
}

inline Matrix random_matrix(Index rows, Index cols, std::mt19937_64& rng) {
  std::normal_distribution<Scalar> n(0.0, 1.0);
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

inline WindowBatch random_batch(const ChannelSchema& s, Index batch, Index k, Index tau, std::mt19937_64& rng) {
  WindowBatch b;
  b.batch_size = batch;
  b.encoder_length = k;
  b.horizon = tau;
  b.past_continuous = random_matrix(batch * k, s.past_continuous(), rng);
  b.future_continuous = random_matrix(batch * tau, static_cast<Index>(s.known_continuous.size()), rng);
  b.future_targets = random_matrix(batch * tau, static_cast<Index>(s.targets.size()), rng);
  const Index n_cat = static_cast<Index>(s.known_categorical.size());
  b.past_categorical.resize(batch * k, n_cat);
  b.future_categorical.resize(batch * tau, n_cat);
  for (Index c = 0; c < n_cat; ++c) {
    std::uniform_int_distribution<Index> pick(0, s.known_categorical[c].cardinality - 1);
    for (Index r = 0; r < batch * k; ++r) b.past_categorical(r, c) = pick(rng);
    for (Index r = 0; r < batch * tau; ++r) b.future_categorical(r, c) = pick(rng);
  }
  b.statics.resize(batch, static_cast<Index>(s.statics.size()));
  for (std::size_t a = 0; a < s.statics.size(); ++a) {
    std::uniform_int_distribution<Index> pick(0, s.statics[a].cardinality - 1);
    for (Index r = 0; r < batch; ++r) b.statics(r, static_cast<Index>(a)) = pick(rng);
  }
  return b;
}

inline std::vector<Window> random_windows(const ChannelSchema& s, Index count, Index k, Index tau, std::mt19937_64& rng) {
  const WindowBatch b = random_batch(s, count, k, tau, rng);
  std::vector<Window> out(static_cast<std::size_t>(count));
  for (Index i = 0; i < count; ++i) {
    Window& w = out[static_cast<std::size_t>(i)];
    w.series = static_cast<std::size_t>(i);
    w.past_continuous = b.past_continuous.middleRows(i * k, k);
    w.past_categorical = b.past_categorical.middleRows(i * k, k);
    w.future_continuous = b.future_continuous.middleRows(i * tau, tau);
    w.future_categorical = b.future_categorical.middleRows(i * tau, tau);
    w.future_targets = b.future_targets.middleRows(i * tau, tau);
    for (Index a = 0; a < b.statics.cols(); ++a) w.statics.push_back(b.statics(i, a));
  }
  return out;
}

/// Water-driven synthetic data with `noise` pure-noise covariates.
inline SyntheticSpec water_spec(std::uint64_t seed, Index series = 4, Index length = 180) {
  SyntheticSpec spec;
  spec.series_count = series;
  spec.length = length;
  spec.modes = {ResponseMode::WaterDriven};
  spec.seed = seed;
  return spec;
}

}  // namespace lfit::testing
