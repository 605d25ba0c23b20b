#include "lfit/attention.hpp"

#include <cmath>

namespace lfit {

CausalMask CausalMask::causal(Index length) {
  MaskMatrix m(length, length);
  for (Index i = 0; i < length; ++i)
    for (Index j = 0; j < length; ++j) m(i, j) = j <= i;
  return CausalMask(std::move(m));
}

CausalMask CausalMask::full(Index length) { return CausalMask(MaskMatrix::Constant(length, length, true)); }

AttentionResult scaled_attention(const Tensor& q, const Tensor& k, const Tensor& v, const CausalMask& mask,
                                 Index groups) {
  if (q.rows() != groups * mask.length() || k.rows() != q.rows() || v.rows() != q.rows()) {
    throw DimensionError("scaled_attention: q " + shape_string(q.shape()) + ", k " + shape_string(k.shape()) +
                         ", v " + shape_string(v.shape()) + " do not match " + std::to_string(groups) +
                         " sequences of length " + std::to_string(mask.length()));
  }
  const Scalar inv_sqrt_d = 1.0 / std::sqrt(static_cast<Scalar>(q.cols()));
  const Tensor scores = scale(batched_matmul_nt(q, k, groups), inv_sqrt_d);
  Tensor attn = masked_softmax_rows(scores, mask.allowed());
  Tensor out = batched_matmul(attn, v, groups);
  return {std::move(out), std::move(attn)};
}

InterpretableAttention::InterpretableAttention(Index d_model, Index heads, std::mt19937_64& rng) {
  if (heads < 1 || d_model % heads != 0) {
    throw ConfigError("head count " + std::to_string(heads) + " must divide d_model " + std::to_string(d_model));
  }
  attention_dim_ = d_model / heads;
  for (Index h = 0; h < heads; ++h) {
    query_.emplace_back(d_model, attention_dim_, rng, false);
    key_.emplace_back(d_model, attention_dim_, rng, false);
  }
  value_ = Linear(d_model, attention_dim_, rng, false);
  output_ = Linear(attention_dim_, d_model, rng);
}

std::vector<Tensor> InterpretableAttention::head_attention(Graph& g, const Tensor& x, const CausalMask& mask,
                                                           Index groups) const {
  std::vector<Tensor> out;
  out.reserve(query_.size());
  const Scalar inv_sqrt_d = 1.0 / std::sqrt(static_cast<Scalar>(attention_dim_));
  for (std::size_t h = 0; h < query_.size(); ++h) {
    const Tensor scores =
        scale(batched_matmul_nt(query_[h].forward(g, x), key_[h].forward(g, x), groups), inv_sqrt_d);
    out.push_back(masked_softmax_rows(scores, mask.allowed()));
  }
  return out;
}

AttentionResult InterpretableAttention::forward(Graph& g, const Tensor& x, const CausalMask& mask,
                                                Index groups) const {
  if (x.rows() != groups * mask.length()) {
    throw DimensionError("interpretable attention: input " + shape_string(x.shape()) + " is not " +
                         std::to_string(groups) + " sequences of length " + std::to_string(mask.length()));
  }
  const std::vector<Tensor> per_head = head_attention(g, x, mask, groups);
  Tensor mean_attn = per_head.front();
  for (std::size_t h = 1; h < per_head.size(); ++h) mean_attn = add(mean_attn, per_head[h]);
  if (per_head.size() > 1) mean_attn = scale(mean_attn, 1.0 / static_cast<Scalar>(per_head.size()));

  const Tensor values = value_.forward(g, x);
  Tensor out = output_.forward(g, batched_matmul(mean_attn, values, groups));
  return {std::move(out), std::move(mean_attn)};
}

void InterpretableAttention::collect(const std::string& prefix, ParameterList& out) {
  for (std::size_t h = 0; h < query_.size(); ++h) {
    query_[h].collect(prefix + ".query" + std::to_string(h), out);
    key_[h].collect(prefix + ".key" + std::to_string(h), out);
  }
  value_.collect(prefix + ".value", out);
  output_.collect(prefix + ".output", out);
}

}  // namespace lfit
