#pragma once

#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "lfit/ops.hpp"
#include "lfit/tensor.hpp"

namespace lfit {

using Scalar = double;
using Matrix = RowMatrix<Scalar>;
using Tensor = BasicTensor<Scalar>;
using Parameter = BasicParameter<Scalar>;
using Gradients = BasicGradients<Scalar>;
using Graph = BasicGraph<Scalar>;

struct NamedParameter {
  std::string name;
  Parameter* param;
};
using ParameterList = std::vector<NamedParameter>;

inline constexpr Scalar kEluAlpha = 1.0;
inline constexpr Scalar kLayerNormEps = 1e-9;
inline constexpr Scalar kDefaultDropout = 0.1;

/// y = x W^T + b with W stored [out x in].
class Linear {
 public:
  Linear() = default;
  Linear(Index in, Index out, std::mt19937_64& rng, bool with_bias = true);

  Tensor forward(Graph& g, const Tensor& x) const;

  Index in_features() const { return weight_.value.cols(); }
  Index out_features() const { return weight_.value.rows(); }
  bool has_bias() const { return bias_.has_value(); }

  Parameter& weight() { return weight_; }
  const Parameter& weight() const { return weight_; }
  Parameter& bias() { return *bias_; }
  const Parameter& bias() const { return *bias_; }

  void collect(const std::string& prefix, ParameterList& out);

 private:
  Parameter weight_;
  std::optional<Parameter> bias_;
};

/// GLU(x) = (x Θ1 + b1) ⊙ σ(x Θ2 + b2).
class Glu {
 public:
  Glu() = default;
  Glu(Index in, Index out, std::mt19937_64& rng);

  Tensor forward(Graph& g, const Tensor& x) const;

  Linear& value_proj() { return value_; }
  Linear& gate_proj() { return gate_; }
  void collect(const std::string& prefix, ParameterList& out);

 private:
  Linear value_;
  Linear gate_;
};

class LayerNorm {
 public:
  LayerNorm() = default;
  explicit LayerNorm(Index features);

  Tensor forward(Graph& g, const Tensor& x) const;

  Parameter& gain() { return gain_; }
  Parameter& bias() { return bias_; }
  void collect(const std::string& prefix, ParameterList& out);

 private:
  Parameter gain_;
  Parameter bias_;
};

/// Gated residual network:
///   γ2 = ELU(W2 a + W3 c + b2),  γ1 = W1 γ2 + b1,
///   out = LayerNorm(skip(a) + GLU(dropout(γ1))).
/// `skip` is the identity unless input and output extents differ.
class Grn {
 public:
  Grn() = default;
  /// `context` of 0 builds a block without a context path.
  Grn(Index input, Index hidden, Index output, Index context, Scalar dropout, std::mt19937_64& rng);

  Tensor forward(Graph& g, const Tensor& a, const std::optional<Tensor>& c = std::nullopt) const;

  bool has_context() const { return context_.has_value(); }
  Index input_size() const { return primary_.in_features(); }
  Index output_size() const { return norm_output_; }
  Scalar dropout_rate() const { return dropout_; }

  Linear& primary_proj() { return primary_; }
  Linear& context_proj() { return *context_; }
  Linear& hidden_proj() { return hidden_; }
  Glu& glu() { return glu_; }
  LayerNorm& norm() { return norm_; }
  void collect(const std::string& prefix, ParameterList& out);

 private:
  Linear primary_;
  std::optional<Linear> context_;
  Linear hidden_;
  Glu glu_;
  LayerNorm norm_;
  std::optional<Linear> skip_;
  Index norm_output_ = 0;
  Scalar dropout_ = kDefaultDropout;
};

/// Per-channel input embeddings into R^{d_m}: a 1 -> d_m projection for each
/// continuous channel and a lookup table for each categorical channel.
class InputEmbedder {
 public:
  InputEmbedder() = default;
  InputEmbedder(Index d_model, Index continuous_channels, const std::vector<Index>& cardinalities,
                std::mt19937_64& rng);

  /// `column` is [N x 1]; returns [N x d_m].
  Tensor embed_continuous(Graph& g, Index channel, const Tensor& column) const;
  /// Returns [N x d_m]; throws OutOfVocabularyError for indices outside the table.
  Tensor embed_categorical(Graph& g, Index channel, const std::vector<Index>& indices) const;

  Index d_model() const { return d_model_; }
  Index continuous_channels() const { return static_cast<Index>(continuous_.size()); }
  Index categorical_channels() const { return static_cast<Index>(tables_.size()); }
  Index cardinality(Index channel) const { return tables_.at(channel).value.rows(); }

  Linear& continuous_proj(Index channel) { return continuous_.at(channel); }
  Parameter& table(Index channel) { return tables_.at(channel); }
  void collect(const std::string& prefix, ParameterList& out);

 private:
  Index d_model_ = 0;
  std::vector<Linear> continuous_;
  std::vector<Parameter> tables_;
};

struct LstmState {
  Tensor h;
  Tensor c;
};

/// Single LSTM layer; gate blocks are stacked in the order input, forget,
/// cell, output along the 4*hidden axis.
class LstmCell {
 public:
  LstmCell() = default;
  LstmCell(Index input, Index hidden, std::mt19937_64& rng);

  LstmState step(Graph& g, const Tensor& x, const LstmState& prev) const;

  Index hidden_size() const { return hidden_; }
  Linear& input_proj() { return input_; }
  Linear& recurrent_proj() { return recurrent_; }
  void collect(const std::string& prefix, ParameterList& out);

 private:
  Index hidden_ = 0;
  Linear input_;
  Linear recurrent_;
};

}  // namespace lfit
