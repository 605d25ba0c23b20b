#include "lfit/layers.hpp"

#include <cmath>

namespace lfit {

namespace {

Matrix uniform_matrix(Index rows, Index cols, Scalar bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<Scalar> dist(-bound, bound);
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

}  // namespace

Linear::Linear(Index in, Index out, std::mt19937_64& rng, bool with_bias)
    : weight_(uniform_matrix(out, in, 1.0 / std::sqrt(static_cast<Scalar>(in)), rng)) {
  if (in < 1 || out < 1) throw ConfigError("linear layer extents must be positive");
  if (with_bias) bias_.emplace(Matrix::Zero(1, out));
}

Tensor Linear::forward(Graph& g, const Tensor& x) const {
  Tensor y = matmul_nt(x, g.param(weight_));
  if (bias_) y = add_row(y, g.param(*bias_));
  return y;
}

void Linear::collect(const std::string& prefix, ParameterList& out) {
  out.push_back({prefix + ".weight", &weight_});
  if (bias_) out.push_back({prefix + ".bias", &*bias_});
}

Glu::Glu(Index in, Index out, std::mt19937_64& rng) : value_(in, out, rng), gate_(in, out, rng) {}

Tensor Glu::forward(Graph& g, const Tensor& x) const {
  return mul(value_.forward(g, x), sigmoid(gate_.forward(g, x)));
}

void Glu::collect(const std::string& prefix, ParameterList& out) {
  value_.collect(prefix + ".value", out);
  gate_.collect(prefix + ".gate", out);
}

LayerNorm::LayerNorm(Index features) : gain_(Matrix::Ones(1, features)), bias_(Matrix::Zero(1, features)) {}

Tensor LayerNorm::forward(Graph& g, const Tensor& x) const {
  return layer_norm(x, g.param(gain_), g.param(bias_), kLayerNormEps);
}

void LayerNorm::collect(const std::string& prefix, ParameterList& out) {
  out.push_back({prefix + ".gain", &gain_});
  out.push_back({prefix + ".bias", &bias_});
}

Grn::Grn(Index input, Index hidden, Index output, Index context, Scalar dropout, std::mt19937_64& rng)
    : primary_(input, hidden, rng),
      hidden_(hidden, hidden, rng),
      glu_(hidden, output, rng),
      norm_(output),
      norm_output_(output),
      dropout_(dropout) {
  if (dropout < 0 || dropout >= 1) throw ConfigError("dropout rate must lie in [0, 1)");
  if (context > 0) context_.emplace(context, hidden, rng, /*with_bias=*/false);
  if (input != output) skip_.emplace(input, output, rng);
}

Tensor Grn::forward(Graph& g, const Tensor& a, const std::optional<Tensor>& c) const {
  if (c && !context_) throw ContractError("grn: context supplied to a block without a context path");
  Tensor pre = primary_.forward(g, a);
  if (c) pre = add(pre, context_->forward(g, *c));
  const Tensor gamma2 = elu(pre, kEluAlpha);
  Tensor gamma1 = hidden_.forward(g, gamma2);
  if (g.training() && dropout_ > 0) gamma1 = dropout(gamma1, dropout_, g.rng());
  const Tensor residual = skip_ ? skip_->forward(g, a) : a;
  return norm_.forward(g, add(residual, glu_.forward(g, gamma1)));
}

void Grn::collect(const std::string& prefix, ParameterList& out) {
  primary_.collect(prefix + ".primary", out);
  if (context_) context_->collect(prefix + ".context", out);
  hidden_.collect(prefix + ".hidden", out);
  glu_.collect(prefix + ".glu", out);
  norm_.collect(prefix + ".norm", out);
  if (skip_) skip_->collect(prefix + ".skip", out);
}

InputEmbedder::InputEmbedder(Index d_model, Index continuous_channels, const std::vector<Index>& cardinalities,
                             std::mt19937_64& rng)
    : d_model_(d_model) {
  continuous_.reserve(continuous_channels);
  for (Index j = 0; j < continuous_channels; ++j) continuous_.emplace_back(1, d_model, rng);
  std::normal_distribution<Scalar> normal(0.0, 1.0);
  const Scalar scale = 1.0 / std::sqrt(static_cast<Scalar>(d_model));
  for (Index card : cardinalities) {
    if (card < 1) throw ConfigError("categorical cardinality must be positive");
    Matrix table(card, d_model);
    for (Index i = 0; i < table.size(); ++i) table.data()[i] = normal(rng) * scale;
    tables_.emplace_back(std::move(table));
  }
}

Tensor InputEmbedder::embed_continuous(Graph& g, Index channel, const Tensor& column) const {
  if (column.cols() != 1) throw DimensionError("embed_continuous: expected a column, got " + shape_string(column.shape()));
  return continuous_.at(channel).forward(g, column);
}

Tensor InputEmbedder::embed_categorical(Graph& g, Index channel, const std::vector<Index>& indices) const {
  const Parameter& table = tables_.at(channel);
  for (Index idx : indices) {
    if (idx < 0 || idx >= table.value.rows()) {
      throw OutOfVocabularyError("categorical channel " + std::to_string(channel) + ": index " + std::to_string(idx) +
                                 " outside vocabulary of " + std::to_string(table.value.rows()));
    }
  }
  return gather_rows(g.param(table), indices);
}

void InputEmbedder::collect(const std::string& prefix, ParameterList& out) {
  for (std::size_t j = 0; j < continuous_.size(); ++j) continuous_[j].collect(prefix + ".continuous" + std::to_string(j), out);
  for (std::size_t j = 0; j < tables_.size(); ++j) out.push_back({prefix + ".table" + std::to_string(j), &tables_[j]});
}

LstmCell::LstmCell(Index input, Index hidden, std::mt19937_64& rng)
    : hidden_(hidden), input_(input, 4 * hidden, rng), recurrent_(hidden, 4 * hidden, rng, /*with_bias=*/false) {}

LstmState LstmCell::step(Graph& g, const Tensor& x, const LstmState& prev) const {
  const Tensor gates = add(input_.forward(g, x), recurrent_.forward(g, prev.h));
  const Tensor in_gate = sigmoid(slice_cols(gates, 0, hidden_));
  const Tensor forget_gate = sigmoid(slice_cols(gates, hidden_, hidden_));
  const Tensor candidate = tanh(slice_cols(gates, 2 * hidden_, hidden_));
  const Tensor out_gate = sigmoid(slice_cols(gates, 3 * hidden_, hidden_));
  Tensor c = add(mul(forget_gate, prev.c), mul(in_gate, candidate));
  Tensor h = mul(out_gate, tanh(c));
  return {std::move(h), std::move(c)};
}

void LstmCell::collect(const std::string& prefix, ParameterList& out) {
  input_.collect(prefix + ".input", out);
  recurrent_.collect(prefix + ".recurrent", out);
}

}  // namespace lfit
