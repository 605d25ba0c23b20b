#pragma once

#include <vector>

#include "lfit/layers.hpp"

namespace lfit {

/// Boolean [T x T] pattern; `allowed(i, j)` means position i may attend to j.
class CausalMask {
 public:
  /// Lower-triangular mask: i attends to every j <= i.
  static CausalMask causal(Index length);
  static CausalMask full(Index length);

  Index length() const { return allowed_.rows(); }
  const MaskMatrix& allowed() const { return allowed_; }

 private:
  explicit CausalMask(MaskMatrix allowed) : allowed_(std::move(allowed)) {}
  MaskMatrix allowed_;
};

struct AttentionResult {
  Tensor output;     ///< [G*T x d_v]
  Tensor attention;  ///< [G*T x T], G stacked attention matrices
};

/// Softmax(Q K^T / sqrt(d)) V over `groups` stacked sequences of length T.
/// Masked positions receive exactly zero weight.
AttentionResult scaled_attention(const Tensor& q, const Tensor& k, const Tensor& v, const CausalMask& mask,
                                 Index groups = 1);

/// Multi-head attention whose heads share a single value projection, so
/// the head-averaged attention matrix is exactly the operator applied to the
/// values and can be read as an explanation.
class InterpretableAttention {
 public:
  InterpretableAttention() = default;
  InterpretableAttention(Index d_model, Index heads, std::mt19937_64& rng);

  /// `x` is [G*T x d_m]; returns the projected output and the head-averaged
  /// attention matrices.
  AttentionResult forward(Graph& g, const Tensor& x, const CausalMask& mask, Index groups = 1) const;

  /// Per-head attention matrices, each [G*T x T].
  std::vector<Tensor> head_attention(Graph& g, const Tensor& x, const CausalMask& mask, Index groups = 1) const;

  Index heads() const { return static_cast<Index>(query_.size()); }
  Index attention_dim() const { return attention_dim_; }

  Linear& query_proj(Index h) { return query_.at(h); }
  Linear& key_proj(Index h) { return key_.at(h); }
  Linear& value_proj() { return value_; }
  Linear& output_proj() { return output_; }
  void collect(const std::string& prefix, ParameterList& out);

 private:
  Index attention_dim_ = 0;
  std::vector<Linear> query_;
  std::vector<Linear> key_;
  Linear value_;
  Linear output_;
};

}  // namespace lfit
