#include <gtest/gtest.h>

#include <map>

#include "lfit/attention.hpp"
#include "lfit/selection.hpp"
#include "support.hpp"

namespace {

using namespace lfit;
using lfit::testing::random_matrix;

std::vector<Tensor> random_inputs(Index n, Index rows, Index d, std::mt19937_64& rng) {
  std::vector<Tensor> out;
  for (Index j = 0; j < n; ++j) out.emplace_back(random_matrix(rows, d, rng));
  return out;
}

std::map<std::string, Parameter*> by_name(VariableSelector& s) {
  ParameterList ps;
  s.collect("vsn", ps);
  std::map<std::string, Parameter*> out;
  for (auto& p : ps) out[p.name] = p.param;
  return out;
}

TEST(VariableSelection, SingletonWeightIsExactlyOne) {
  std::mt19937_64 rng(1);
  VariableSelector vsn(1, 4, false, 0.0, rng);
  Graph g;
  const auto inputs = random_inputs(1, 5, 4, rng);
  const Selection s = vsn.select(g, inputs, std::nullopt);
  EXPECT_TRUE((s.weights.value().array() == 1.0).all());
  EXPECT_EQ(s.combined.value(), vsn.variable_grn(0).forward(g, inputs[0]).value());
}

TEST(VariableSelection, WeightsLieOnSimplex) {
  std::mt19937_64 rng(2);
  VariableSelector vsn(5, 4, true, 0.0, rng);
  Graph g;
  const Selection s = vsn.select(g, random_inputs(5, 7, 4, rng), Tensor(random_matrix(7, 4, rng)));
  EXPECT_TRUE((s.weights.value().array() >= 0.0).all());
  for (Index r = 0; r < 7; ++r) EXPECT_NEAR(s.weights.value().row(r).sum(), 1.0, 1e-12);
}

TEST(VariableSelection, ContextContractEnforced) {
  std::mt19937_64 rng(3);
  VariableSelector with(2, 4, true, 0.0, rng);
  VariableSelector without(2, 4, false, 0.0, rng);
  Graph g;
  const auto inputs = random_inputs(2, 3, 4, rng);
  EXPECT_THROW(with.select(g, inputs, std::nullopt), ContractError);
  EXPECT_THROW(without.select(g, inputs, Tensor(random_matrix(3, 4, rng))), ContractError);
  EXPECT_THROW(without.select(g, random_inputs(3, 3, 4, rng), std::nullopt), ContractError);
}

TEST(VariableSelection, PermutingChannelsPermutesWeights) {
  const Index n = 3;
  const Index d = 4;
  std::mt19937_64 rng(4);
  VariableSelector a(n, d, false, 0.0, rng);
  const std::vector<Index> perm = {2, 0, 1};

  VariableSelector b = a;
  for (Index j = 0; j < n; ++j) b.variable_grn(j) = a.variable_grn(perm[j]);
  auto pa = by_name(a);
  auto pb = by_name(b);
  for (auto& [name, param] : pb) {
    if (name.rfind("vsn.weights.", 0) != 0) continue;
    const Matrix& src = pa.at(name)->value;
    Matrix& dst = param->value;
    if (src.cols() == n * d) {
      for (Index j = 0; j < n; ++j) dst.middleCols(j * d, d) = src.middleCols(perm[j] * d, d);
    }
    const Matrix col_permuted = dst;
    if (dst.rows() == n) {
      for (Index j = 0; j < n; ++j) dst.row(j) = col_permuted.row(perm[j]);
    } else if (dst.rows() == 1 && dst.cols() == n) {
      for (Index j = 0; j < n; ++j) dst(0, j) = col_permuted(0, perm[j]);
    }
  }

  Graph g;
  const auto inputs = random_inputs(n, 6, d, rng);
  std::vector<Tensor> permuted;
  for (Index j = 0; j < n; ++j) permuted.push_back(inputs[perm[j]]);
  const Selection sa = a.select(g, inputs, std::nullopt);
  const Selection sb = b.select(g, permuted, std::nullopt);
  for (Index j = 0; j < n; ++j) {
    EXPECT_TRUE(sb.weights.value().col(j).isApprox(sa.weights.value().col(perm[j]), 1e-12));
  }
  EXPECT_TRUE(sb.combined.value().isApprox(sa.combined.value(), 1e-12));
}

TEST(PriorKnowledge, SingleChannelGetsFullWeight) {
  std::mt19937_64 rng(5);
  PriorKnowledgeEncoder enc(1, 4, 0.0, rng);
  Graph g;
  const StaticContexts c = enc.encode(g, random_inputs(1, 3, 4, rng));
  EXPECT_TRUE((c.weights.value().array() == 1.0).all());
  EXPECT_EQ(c.selection.rows(), 3);
  EXPECT_EQ(c.selection.cols(), 4);
}

TEST(PriorKnowledge, IdenticalStaticsGiveIdenticalContexts) {
  std::mt19937_64 rng(6);
  PriorKnowledgeEncoder enc(2, 4, 0.0, rng);
  Graph g;
  std::vector<Tensor> inputs;
  for (int j = 0; j < 2; ++j) inputs.emplace_back(random_matrix(1, 4, rng).replicate(2, 1));
  const StaticContexts c = enc.encode(g, inputs);
  for (const Tensor* t : {&c.selection, &c.cell, &c.hidden, &c.enrichment, &c.weights}) {
    EXPECT_EQ(t->value().row(0), t->value().row(1));
  }
}

TEST(Attention, ZeroScoresAreUniformOverAllowedPositions) {
  const Index t = 4;
  const Tensor zeros(Matrix::Zero(t, 3));
  std::mt19937_64 rng(7);
  const AttentionResult r = scaled_attention(zeros, zeros, Tensor(random_matrix(t, 3, rng)), CausalMask::causal(t));
  for (Index i = 0; i < t; ++i) {
    for (Index j = 0; j < t; ++j) {
      if (j <= i) {
        EXPECT_NEAR(r.attention(i, j), 1.0 / static_cast<double>(i + 1), 1e-15);
      } else {
        EXPECT_EQ(r.attention(i, j), 0.0);
      }
    }
  }
}

TEST(Attention, SingleStepAttendsToItself) {
  std::mt19937_64 rng(8);
  const Tensor x(random_matrix(1, 3, rng));
  const AttentionResult r = scaled_attention(x, x, x, CausalMask::causal(1));
  EXPECT_EQ(r.attention.item(), 1.0);
  EXPECT_TRUE(r.output.value().isApprox(x.value(), 1e-15));
}

TEST(Attention, FirstCausalRowPutsAllWeightOnFirstPosition) {
  std::mt19937_64 rng(9);
  const Index t = 5;
  const Tensor q(random_matrix(2 * t, 3, rng));
  const Tensor k(random_matrix(2 * t, 3, rng));
  const AttentionResult r = scaled_attention(q, k, q, CausalMask::causal(t), 2);
  EXPECT_EQ(r.attention(0, 0), 1.0);
  EXPECT_EQ(r.attention(t, 0), 1.0);
  for (Index row = 0; row < 2 * t; ++row) EXPECT_NEAR(r.attention.value().row(row).sum(), 1.0, 1e-12);
}

TEST(InterpretableAttention, SingleHeadMatchesScaledAttention) {
  std::mt19937_64 rng(10);
  InterpretableAttention mha(4, 1, rng);
  Graph g;
  const Tensor x(random_matrix(6, 4, rng));
  const CausalMask mask = CausalMask::causal(3);
  const AttentionResult r = mha.forward(g, x, mask, 2);
  const AttentionResult ref = scaled_attention(mha.query_proj(0).forward(g, x), mha.key_proj(0).forward(g, x),
                                               mha.value_proj().forward(g, x), mask, 2);
  EXPECT_TRUE(r.attention.value().isApprox(ref.attention.value(), 1e-15));
  EXPECT_TRUE(r.output.value().isApprox(mha.output_proj().forward(g, ref.output).value(), 1e-12));
}

TEST(InterpretableAttention, EqualHeadsAverageToAnyHead) {
  std::mt19937_64 rng(11);
  InterpretableAttention mha(6, 3, rng);
  for (Index h = 1; h < 3; ++h) {
    mha.query_proj(h).weight().value = mha.query_proj(0).weight().value;
    mha.key_proj(h).weight().value = mha.key_proj(0).weight().value;
  }
  Graph g;
  const Tensor x(random_matrix(5, 6, rng));
  const CausalMask mask = CausalMask::causal(5);
  const AttentionResult r = mha.forward(g, x, mask);
  EXPECT_TRUE(r.attention.value().isApprox(mha.head_attention(g, x, mask)[1].value(), 1e-15));
}

TEST(InterpretableAttention, AveragingCommutesWithValuePath) {
  std::mt19937_64 rng(12);
  InterpretableAttention mha(8, 4, rng);
  Graph g;
  const Tensor x(random_matrix(7, 8, rng));
  const CausalMask mask = CausalMask::causal(7);
  const AttentionResult r = mha.forward(g, x, mask);
  const Matrix v = mha.value_proj().forward(g, x).value();
  Matrix mean_of_heads = Matrix::Zero(7, v.cols());
  for (const Tensor& a : mha.head_attention(g, x, mask)) mean_of_heads += a.value() * v;
  mean_of_heads /= 4.0;
  EXPECT_LE((r.attention.value() * v - mean_of_heads).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(InterpretableAttention, HeadsMustDivideModelWidth) {
  std::mt19937_64 rng(13);
  EXPECT_THROW(InterpretableAttention(6, 4, rng), ConfigError);
}

}  // namespace
