#include "lfit/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>

namespace lfit {

namespace {

constexpr char kMagic[8] = {'L', 'F', 'I', 'T', 'M', 'D', 'L', '\0'};

Tensor column_of(const Matrix& block, Index col) { return Tensor(Matrix(block.col(col))); }

std::vector<Index> column_indices(const IndexMatrix& block, Index col) {
  std::vector<Index> out(static_cast<std::size_t>(block.rows()));
  for (Index r = 0; r < block.rows(); ++r) out[r] = block(r, col);
  return out;
}

/// Row permutation from time-major [T*B] to batch-major [B*T].
std::vector<Index> time_to_batch_major(Index batch, Index length) {
  std::vector<Index> rows;
  rows.reserve(static_cast<std::size_t>(batch * length));
  for (Index b = 0; b < batch; ++b)
    for (Index t = 0; t < length; ++t) rows.push_back(t * batch + b);
  return rows;
}

}  // namespace

void LfitConfig::validate() const {
  if (d_model < 1) throw ConfigError("d_model must be >= 1");
  if (heads < 1 || d_model % heads != 0) {
    throw ConfigError("head count " + std::to_string(heads) + " must divide d_model " + std::to_string(d_model));
  }
  if (encoder_length < 1) throw ConfigError("encoder_length must be >= 1");
  if (horizon < 1) throw ConfigError("horizon must be >= 1");
  if (quantiles.empty()) throw ConfigError("at least one quantile is required");
  for (std::size_t i = 0; i < quantiles.size(); ++i) {
    if (!(quantiles[i] > 0 && quantiles[i] < 1)) throw ConfigError("quantiles must lie in (0, 1)");
    if (i > 0 && !(quantiles[i] > quantiles[i - 1])) throw ConfigError("quantiles must be strictly increasing");
  }
  if (dropout < 0 || dropout >= 1) throw ConfigError("dropout must lie in [0, 1)");
  if (channels.targets.empty()) throw ConfigError("channel schema has no target");
  if (channels.future_channels() == 0) {
    throw ConfigError("channel schema has no known-future channel (enable calendar features)");
  }
  for (const auto& c : channels.known_categorical)
    if (c.cardinality < 1) throw ConfigError("categorical channel '" + c.name + "' has no categories");
  for (const auto& c : channels.statics)
    if (c.cardinality < 1) throw ConfigError("static channel '" + c.name + "' has no categories");
}

Index LfitConfig::median_index() const {
  for (std::size_t i = 0; i < quantiles.size(); ++i)
    if (quantiles[i] == 0.5) return static_cast<Index>(i);
  throw ConfigError("quantile set does not contain the median 0.5");
}

nlohmann::json LfitConfig::to_json() const {
  return {{"d_model", d_model},   {"heads", heads},     {"encoder_length", encoder_length},
          {"horizon", horizon},   {"quantiles", quantiles}, {"dropout", dropout},
          {"anchor_targets", anchor_targets}, {"channels", channels.to_json()}};
}

LfitConfig LfitConfig::from_json(const nlohmann::json& j) {
  LfitConfig c;
  c.d_model = j.value("d_model", c.d_model);
  c.heads = j.value("heads", c.heads);
  c.encoder_length = j.value("encoder_length", c.encoder_length);
  c.horizon = j.value("horizon", c.horizon);
  if (j.contains("quantiles")) c.quantiles = j["quantiles"].get<std::vector<Scalar>>();
  c.dropout = j.value("dropout", c.dropout);
  c.anchor_targets = j.value("anchor_targets", c.anchor_targets);
  if (j.contains("channels")) c.channels = ChannelSchema::from_json(j["channels"]);
  return c;
}

TargetScaling TargetScaling::identity(Index targets) {
  return {std::vector<Scalar>(static_cast<std::size_t>(targets), 0.0),
          std::vector<Scalar>(static_cast<std::size_t>(targets), 1.0)};
}

TargetScaling TargetScaling::from(const Standardizer& standardizer, Index targets) {
  TargetScaling s;
  for (Index i = 0; i < targets; ++i) {
    s.mean.push_back(standardizer.mean().at(i));
    s.stdev.push_back(standardizer.stdev().at(i));
  }
  return s;
}

LfitModel::LfitModel(LfitConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  const ChannelSchema& ch = config_.channels;
  const Index d = config_.d_model;
  const Scalar p = config_.dropout;
  const bool statics = !ch.statics.empty();
  scaling_ = TargetScaling::identity(static_cast<Index>(ch.targets.size()));

  std::mt19937_64 rng(seed);
  std::vector<Index> cardinalities;
  for (const auto& c : ch.known_categorical) cardinalities.push_back(c.cardinality);
  for (const auto& c : ch.statics) cardinalities.push_back(c.cardinality);
  embedder_ = InputEmbedder(d, ch.past_continuous(), cardinalities, rng);
  if (statics) pk_.emplace(static_cast<Index>(ch.statics.size()), d, p, rng);
  past_selector_ = VariableSelector(ch.past_channels(), d, statics, p, rng);
  future_selector_ = VariableSelector(ch.future_channels(), d, statics, p, rng);
  encoder_ = LstmCell(d, d, rng);
  decoder_ = LstmCell(d, d, rng);
  post_lstm_gate_ = Glu(d, d, rng);
  post_lstm_norm_ = LayerNorm(d);
  enrichment_ = Grn(d, d, d, statics ? d : 0, p, rng);
  attention_ = InterpretableAttention(d, config_.heads, rng);
  post_attention_gate_ = Glu(d, d, rng);
  post_attention_norm_ = LayerNorm(d);
  final_grn_ = Grn(d, d, d, 0, p, rng);
  for (std::size_t i = 0; i < ch.targets.size(); ++i)
    heads_.emplace_back(d, static_cast<Index>(config_.quantiles.size()), rng);
}

void LfitModel::set_scaling(TargetScaling scaling) {
  const std::size_t m = config_.channels.targets.size();
  if (scaling.mean.size() != m || scaling.stdev.size() != m) throw ContractError("target scaling size mismatch");
  scaling_ = std::move(scaling);
}

void LfitModel::check_batch(const WindowBatch& batch) const {
  const ChannelSchema& ch = config_.channels;
  const Index b = batch.batch_size;
  const Index k = batch.encoder_length;
  const Index tau = batch.horizon;
  if (b < 1 || tau < 1) throw ContractError("batch is empty");
  if (k != config_.encoder_length) {
    throw ContractError("batch encoder length " + std::to_string(k) + " differs from the configured " +
                        std::to_string(config_.encoder_length));
  }
  auto expect = [](const char* what, Index rows, Index cols, Index want_rows, Index want_cols) {
    if (rows != want_rows || cols != want_cols) {
      throw ContractError(std::string("batch ") + what + " block is [" + std::to_string(rows) + "x" +
                          std::to_string(cols) + "], expected [" + std::to_string(want_rows) + "x" +
                          std::to_string(want_cols) + "]");
    }
  };
  const Index n_kc = static_cast<Index>(ch.known_categorical.size());
  expect("past continuous", batch.past_continuous.rows(), batch.past_continuous.cols(), b * k, ch.past_continuous());
  expect("past categorical", batch.past_categorical.rows(), batch.past_categorical.cols(), b * k, n_kc);
  expect("future continuous", batch.future_continuous.rows(), batch.future_continuous.cols(), b * tau,
         static_cast<Index>(ch.known_continuous.size()));
  expect("future categorical", batch.future_categorical.rows(), batch.future_categorical.cols(), b * tau, n_kc);
  expect("static", batch.statics.rows(), batch.statics.cols(), b, static_cast<Index>(ch.statics.size()));

  const auto past_names = ch.past_names();
  for (Index j = 0; j < batch.past_continuous.cols(); ++j) {
    if (!batch.past_continuous.col(j).allFinite()) throw DataError("non-finite input in channel '" + past_names[j] + "'");
  }
  for (Index j = 0; j < batch.future_continuous.cols(); ++j) {
    if (!batch.future_continuous.col(j).allFinite()) {
      throw DataError("non-finite input in channel '" + ch.known_continuous[j] + "'");
    }
  }
}

ForwardOutput LfitModel::forward(Graph& g, const WindowBatch& batch) const {
  check_batch(batch);
  const ChannelSchema& ch = config_.channels;
  const Index b = batch.batch_size;
  const Index k = batch.encoder_length;
  const Index tau = batch.horizon;
  const Index total = k + tau;
  const Index d = config_.d_model;
  const Index n_pc = ch.past_continuous();
  const Index n_fc = static_cast<Index>(ch.known_continuous.size());
  const Index n_kc = static_cast<Index>(ch.known_categorical.size());
  const Index known_offset = n_pc - n_fc;

  // (1) embeddings
  std::vector<Tensor> past;
  for (Index j = 0; j < n_pc; ++j) past.push_back(embedder_.embed_continuous(g, j, column_of(batch.past_continuous, j)));
  for (Index j = 0; j < n_kc; ++j) past.push_back(embedder_.embed_categorical(g, j, column_indices(batch.past_categorical, j)));
  std::vector<Tensor> future;
  for (Index j = 0; j < n_fc; ++j)
    future.push_back(embedder_.embed_continuous(g, known_offset + j, column_of(batch.future_continuous, j)));
  for (Index j = 0; j < n_kc; ++j)
    future.push_back(embedder_.embed_categorical(g, j, column_indices(batch.future_categorical, j)));

  // (2) static contexts
  std::optional<StaticContexts> ctx;
  if (pk_) {
    std::vector<Tensor> statics;
    for (Index a = 0; a < static_cast<Index>(ch.statics.size()); ++a)
      statics.push_back(embedder_.embed_categorical(g, n_kc + a, column_indices(batch.statics, a)));
    ctx = pk_->encode(g, statics);
  }

  // (3) time-dependent variable selection
  std::optional<Tensor> past_ctx;
  std::optional<Tensor> future_ctx;
  if (ctx) {
    past_ctx = repeat_rows(ctx->selection, k);
    future_ctx = repeat_rows(ctx->selection, tau);
  }
  const Selection past_sel = past_selector_.select(g, past, past_ctx);
  const Selection future_sel = future_selector_.select(g, future, future_ctx);

  // (4) sequence-to-sequence LSTM
  LstmState state = ctx ? LstmState{ctx->hidden, ctx->cell}
                        : LstmState{Tensor(Matrix::Zero(b, d)), Tensor(Matrix::Zero(b, d))};
  std::vector<Tensor> outputs;
  outputs.reserve(static_cast<std::size_t>(total));
  std::vector<Index> rows(static_cast<std::size_t>(b));
  for (Index t = 0; t < k; ++t) {
    for (Index i = 0; i < b; ++i) rows[i] = i * k + t;
    state = encoder_.step(g, gather_rows(past_sel.combined, rows), state);
    outputs.push_back(state.h);
  }
  for (Index t = 0; t < tau; ++t) {
    for (Index i = 0; i < b; ++i) rows[i] = i * tau + t;
    state = decoder_.step(g, gather_rows(future_sel.combined, rows), state);
    outputs.push_back(state.h);
  }
  const Tensor lstm_out = gather_rows(concat_rows(outputs), time_to_batch_major(b, total));

  std::vector<Index> selected_rows;
  selected_rows.reserve(static_cast<std::size_t>(b * total));
  for (Index i = 0; i < b; ++i) {
    for (Index t = 0; t < k; ++t) selected_rows.push_back(i * k + t);
    for (Index t = 0; t < tau; ++t) selected_rows.push_back(b * k + i * tau + t);
  }
  const Tensor selected = gather_rows(concat_rows(std::vector<Tensor>{past_sel.combined, future_sel.combined}), selected_rows);

  // (5) gated skip over the LSTM, (6) static enrichment
  const Tensor temporal = post_lstm_norm_.forward(g, add(selected, post_lstm_gate_.forward(g, lstm_out)));
  std::optional<Tensor> enrich_ctx;
  if (ctx) enrich_ctx = repeat_rows(ctx->enrichment, total);
  const Tensor enriched = enrichment_.forward(g, temporal, enrich_ctx);

  // (7) interpretable attention, (8) gate, final GRN and quantile heads
  const AttentionResult attn = attention_.forward(g, enriched, CausalMask::causal(total), b);
  const Tensor gated = post_attention_norm_.forward(g, add(enriched, post_attention_gate_.forward(g, attn.output)));
  const Tensor features = final_grn_.forward(g, gated);

  std::vector<Index> decoder_rows;
  decoder_rows.reserve(static_cast<std::size_t>(b * tau));
  for (Index i = 0; i < b; ++i)
    for (Index t = 0; t < tau; ++t) decoder_rows.push_back(i * total + k + t);
  const Tensor decoder = gather_rows(features, decoder_rows);
  std::vector<Tensor> per_target;
  for (const auto& head : heads_) per_target.push_back(head.forward(g, decoder));
  Tensor prediction = per_target.size() == 1 ? per_target.front() : concat_cols(per_target);

  ForwardOutput out{std::move(prediction), attn.attention, past_sel.weights, future_sel.weights, std::nullopt};
  if (ctx) out.static_weights = ctx->weights;
  return out;
}

std::vector<Forecast> LfitModel::to_forecasts(const Matrix& prediction, const WindowBatch& batch) const {
  const Index batch_size = batch.batch_size;
  const Index horizon = batch.horizon;
  const Index nq = static_cast<Index>(config_.quantiles.size());
  const Index m = static_cast<Index>(config_.channels.targets.size());
  if (prediction.rows() != batch_size * horizon || prediction.cols() != m * nq) {
    throw ContractError("to_forecasts: prediction block has the wrong shape");
  }
  std::vector<Forecast> out;
  out.reserve(static_cast<std::size_t>(batch_size));
  for (Index i = 0; i < batch_size; ++i) {
    Forecast f;
    f.quantiles = config_.quantiles;
    for (Index target = 0; target < m; ++target) {
      Matrix block = prediction.block(i * horizon, target * nq, horizon, nq);
      block = ((block.array() + batch.anchor(i, target)) * scaling_.stdev[target] + scaling_.mean[target]).matrix();
      f.values.push_back(std::move(block));
    }
    out.push_back(std::move(f));
  }
  return out;
}

std::pair<std::vector<Forecast>, std::vector<Explanation>> LfitModel::predict(const WindowBatch& batch) const {
  Graph g;
  const ForwardOutput out = forward(g, batch);
  const Index b = batch.batch_size;
  const Index k = batch.encoder_length;
  const Index tau = batch.horizon;
  const Index total = k + tau;
  std::vector<Explanation> explanations;
  explanations.reserve(static_cast<std::size_t>(b));
  for (Index i = 0; i < b; ++i) {
    Explanation e;
    e.mean_attention = out.attention.value().middleRows(i * total, total);
    e.past_variable_weights = out.past_weights.value().middleRows(i * k, k);
    e.future_variable_weights = out.future_weights.value().middleRows(i * tau, tau);
    if (out.static_weights) {
      const auto row = out.static_weights->value().row(i);
      e.static_weights = std::vector<Scalar>(row.data(), row.data() + row.size());
    }
    explanations.push_back(std::move(e));
  }
  return {to_forecasts(out.prediction.value(), batch), std::move(explanations)};
}

std::vector<Forecast> LfitModel::forecast(const WindowBatch& batch) const {
  Graph g;
  const ForwardOutput out = forward(g, batch);
  return to_forecasts(out.prediction.value(), batch);
}

std::vector<Explanation> LfitModel::explain(const WindowBatch& batch) const { return predict(batch).second; }

ParameterList LfitModel::parameters() {
  ParameterList out;
  embedder_.collect("embedding", out);
  if (pk_) pk_->collect("prior_knowledge", out);
  past_selector_.collect("select_past", out);
  future_selector_.collect("select_future", out);
  encoder_.collect("lstm_encoder", out);
  decoder_.collect("lstm_decoder", out);
  post_lstm_gate_.collect("post_lstm.glu", out);
  post_lstm_norm_.collect("post_lstm.norm", out);
  enrichment_.collect("enrichment", out);
  attention_.collect("attention", out);
  post_attention_gate_.collect("post_attention.glu", out);
  post_attention_norm_.collect("post_attention.norm", out);
  final_grn_.collect("final", out);
  for (std::size_t i = 0; i < heads_.size(); ++i) heads_[i].collect("head." + config_.channels.targets[i], out);
  return out;
}

Index LfitModel::parameter_count() {
  Index n = 0;
  for (const auto& p : parameters()) n += p.param->size();
  return n;
}

namespace {

static_assert(std::endian::native == std::endian::little, "model files store little-endian values");

template <typename T>
void write_pod(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in, const char* what) {
  T value{};
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(T))) throw LoadError(std::string("truncated model file (") + what + ")");
  return value;
}

std::string read_bytes(std::istream& in, std::uint64_t n, const char* what) {
  if (n > (1ull << 32)) throw LoadError(std::string("implausible length for ") + what);
  std::string s(static_cast<std::size_t>(n), '\0');
  if (n > 0 && !in.read(s.data(), static_cast<std::streamsize>(n))) {
    throw LoadError(std::string("truncated model file (") + what + ")");
  }
  return s;
}

}  // namespace

void save_model(LfitModel& model, std::ostream& out) {
  const nlohmann::json header{{"config", model.config().to_json()},
                              {"scaling", {{"mean", model.scaling().mean}, {"stdev", model.scaling().stdev}}},
                              {"metadata", model.metadata()}};
  const std::string text = header.dump();
  out.write(kMagic, sizeof(kMagic));
  write_pod<std::uint32_t>(out, kModelFormatVersion);
  write_pod<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  const ParameterList params = model.parameters();
  write_pod<std::uint64_t>(out, params.size());
  for (const auto& [name, p] : params) {
    write_pod<std::uint64_t>(out, name.size());
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod<std::uint32_t>(out, 2);
    write_pod<std::uint64_t>(out, static_cast<std::uint64_t>(p->value.rows()));
    write_pod<std::uint64_t>(out, static_cast<std::uint64_t>(p->value.cols()));
    out.write(reinterpret_cast<const char*>(p->value.data()),
              static_cast<std::streamsize>(sizeof(Scalar) * static_cast<std::size_t>(p->value.size())));
  }
  if (!out) throw Error("failed to write model");
}

LfitModel load_model(std::istream& in) {
  char magic[sizeof(kMagic)];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw LoadError("not an LFIT model file (bad magic header)");
  }
  const auto version = read_pod<std::uint32_t>(in, "version");
  if (version != kModelFormatVersion) {
    throw LoadError("unsupported model format version " + std::to_string(version) + " (expected " +
                    std::to_string(kModelFormatVersion) + ")");
  }
  const auto text_size = read_pod<std::uint64_t>(in, "header length");
  const std::string text = read_bytes(in, text_size, "header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("corrupt model header: ") + e.what());
  }
  LfitModel model(LfitConfig::from_json(header.at("config")), 0);
  model.set_scaling({header.at("scaling").at("mean").get<std::vector<Scalar>>(),
                     header.at("scaling").at("stdev").get<std::vector<Scalar>>()});
  model.set_metadata(header.value("metadata", nlohmann::json::object()));

  ParameterList params = model.parameters();
  const auto count = read_pod<std::uint64_t>(in, "parameter count");
  if (count != params.size()) {
    throw LoadError("model file holds " + std::to_string(count) + " parameter blocks, configuration needs " +
                    std::to_string(params.size()));
  }
  for (auto& [name, p] : params) {
    const auto name_size = read_pod<std::uint64_t>(in, "parameter name length");
    const std::string stored = read_bytes(in, name_size, "parameter name");
    if (stored != name) throw LoadError("expected parameter '" + name + "', found '" + stored + "'");
    const auto rank = read_pod<std::uint32_t>(in, "parameter rank");
    if (rank != 2) throw LoadError("parameter '" + name + "' has unsupported rank " + std::to_string(rank));
    const auto rows = read_pod<std::uint64_t>(in, "parameter rows");
    const auto cols = read_pod<std::uint64_t>(in, "parameter cols");
    if (static_cast<Index>(rows) != p->value.rows() || static_cast<Index>(cols) != p->value.cols()) {
      throw LoadError("parameter '" + name + "' has shape " + std::to_string(rows) + "x" + std::to_string(cols) +
                      ", expected " + std::to_string(p->value.rows()) + "x" + std::to_string(p->value.cols()));
    }
    if (!in.read(reinterpret_cast<char*>(p->value.data()),
                 static_cast<std::streamsize>(sizeof(Scalar) * static_cast<std::size_t>(p->value.size())))) {
      throw LoadError("truncated model file (parameter '" + name + "')");
    }
  }
  return model;
}

void save_model_file(LfitModel& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write '" + path + "'");
  save_model(model, out);
}

LfitModel load_model_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open model file '" + path + "'");
  return load_model(in);
}

}  // namespace lfit
