#include <gtest/gtest.h>

#include <cmath>

#include "lfit/gradcheck.hpp"
#include "lfit/layers.hpp"
#include "support.hpp"

namespace {

using namespace lfit;
using lfit::testing::random_matrix;

void zero_all(ParameterList& params) {
  for (auto& p : params) p.param->value.setZero();
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

TEST(Elu, Branches) {
  const Tensor y = elu(Tensor::from_values({1, 3}, {1.0, 0.0, -1.0}), kEluAlpha);
  EXPECT_DOUBLE_EQ(y(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(y(0, 1), 0.0);
  EXPECT_NEAR(y(0, 2), std::exp(-1.0) - 1.0, 1e-15);
  EXPECT_NEAR(y(0, 2), -0.6321, 1e-4);
}

TEST(Glu, ZeroWeightsGiveZero) {
  std::mt19937_64 rng(1);
  Glu glu(3, 3, rng);
  ParameterList ps;
  glu.collect("glu", ps);
  zero_all(ps);
  Graph g;
  EXPECT_TRUE(glu.forward(g, Tensor(random_matrix(4, 3, rng))).value().isZero(0.0));
}

TEST(Glu, OpenGatePassesValuePath) {
  std::mt19937_64 rng(2);
  Glu glu(3, 3, rng);
  glu.value_proj().weight().value = Matrix::Identity(3, 3);
  glu.value_proj().bias().value.setZero();
  glu.gate_proj().weight().value.setZero();
  glu.gate_proj().bias().value.setConstant(50.0);
  Graph g;
  const Matrix x = random_matrix(5, 3, rng);
  EXPECT_TRUE(glu.forward(g, Tensor(x)).value().isApprox(x, 1e-12));
}

TEST(Glu, ClosedGateBlocksEverything) {
  std::mt19937_64 rng(3);
  Glu glu(3, 3, rng);
  glu.gate_proj().weight().value.setZero();
  glu.gate_proj().bias().value.setConstant(-50.0);
  Graph g;
  const Matrix x = 100.0 * random_matrix(5, 3, rng);
  EXPECT_LT(glu.forward(g, Tensor(x)).value().cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Grn, ZeroWeightsReduceToLayerNormOfInput) {
  std::mt19937_64 rng(4);
  Grn grn(4, 6, 4, 0, 0.0, rng);
  ParameterList ps;
  grn.collect("grn", ps);
  zero_all(ps);
  grn.norm().gain().value.setOnes();
  Graph g;
  const Matrix a = random_matrix(3, 4, rng);
  const Tensor expected = layer_norm(Tensor(a), Tensor(Matrix::Ones(1, 4)), Tensor(Matrix::Zero(1, 4)), kLayerNormEps);
  EXPECT_TRUE(grn.forward(g, Tensor(a)).value().isApprox(expected.value(), 1e-12));
}

TEST(Grn, ZeroContextEqualsOmittedContext) {
  std::mt19937_64 rng(5);
  Grn grn(4, 6, 4, 3, 0.0, rng);
  grn.context_proj().weight().value.setZero();
  Graph g;
  const Tensor a(random_matrix(3, 4, rng));
  const Tensor with = grn.forward(g, a, Tensor(Matrix::Zero(3, 3)));
  const Tensor without = grn.forward(g, a);
  EXPECT_EQ(with.value(), without.value());
}

TEST(Grn, SkipProjectionWhenExtentsDiffer) {
  std::mt19937_64 rng(6);
  Grn grn(5, 4, 3, 0, 0.1, rng);
  Graph g;
  const Tensor y = grn.forward(g, Tensor(random_matrix(2, 5, rng)));
  EXPECT_EQ(y.rows(), 2);
  EXPECT_EQ(y.cols(), 3);
  EXPECT_DOUBLE_EQ(grn.dropout_rate(), 0.1);
}

TEST(Grn, ParameterGradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(7);
  Grn grn(4, 5, 4, 2, 0.0, rng);
  const Tensor a(random_matrix(3, 4, rng));
  const Tensor c(random_matrix(3, 2, rng));
  const Tensor w(random_matrix(3, 4, rng));
  ParameterList ps;
  grn.collect("grn", ps);
  std::vector<Parameter*> params;
  for (auto& p : ps) params.push_back(p.param);
  const auto loss = [&](Graph& g) { return sum(mul(grn.forward(g, a, c), w)); };
  EXPECT_LE(check_parameter_gradient<Scalar>(loss, params, 1e-5), 1e-4);
}

TEST(Grn, InputGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(8);
  Grn grn(4, 5, 4, 0, 0.0, rng);
  const Tensor w(random_matrix(3, 4, rng));
  const auto f = [&](const Tensor& a) {
    Graph g;
    return sum(mul(grn.forward(g, a), w));
  };
  EXPECT_LE(check_gradient<Scalar>(f, Tensor(random_matrix(3, 4, rng)), 1e-5), 1e-4);
}

TEST(Embedder, ContinuousZeroWithZeroBiasIsZero) {
  std::mt19937_64 rng(9);
  InputEmbedder emb(6, 2, {5}, rng);
  emb.continuous_proj(0).bias().value.setZero();
  Graph g;
  EXPECT_TRUE(emb.embed_continuous(g, 0, Tensor(Matrix::Zero(3, 1))).value().isZero(0.0));
}

TEST(Embedder, CategoricalLookupIsDeterministicAndDistinct) {
  std::mt19937_64 rng(10);
  InputEmbedder emb(6, 0, {5}, rng);
  Graph g;
  const Tensor e = emb.embed_categorical(g, 0, {2, 2, 3});
  EXPECT_EQ(e.value().row(0), e.value().row(1));
  EXPECT_NE(e.value().row(0), e.value().row(2));
}

TEST(Embedder, OutOfVocabularyRejected) {
  std::mt19937_64 rng(11);
  InputEmbedder emb(6, 0, {5}, rng);
  Graph g;
  EXPECT_THROW(emb.embed_categorical(g, 0, {5}), OutOfVocabularyError);
  EXPECT_THROW(emb.embed_categorical(g, 0, {-1}), OutOfVocabularyError);
}

TEST(Lstm, ZeroWeightsHalveCell) {
  std::mt19937_64 rng(12);
  LstmCell cell(3, 4, rng);
  ParameterList ps;
  cell.collect("lstm", ps);
  zero_all(ps);
  Graph g;
  const Matrix c_prev = random_matrix(2, 4, rng);
  const LstmState s = cell.step(g, Tensor(random_matrix(2, 3, rng)), {Tensor(random_matrix(2, 4, rng)), Tensor(c_prev)});
  const Matrix c_expected = 0.5 * c_prev;
  const Matrix h_expected = 0.5 * c_expected.array().tanh().matrix();
  EXPECT_TRUE(s.c.value().isApprox(c_expected, 1e-15));
  EXPECT_TRUE(s.h.value().isApprox(h_expected, 1e-15));
  EXPECT_DOUBLE_EQ(sigmoid(0.0), 0.5);
}

TEST(Lstm, ZeroStateZeroWeightsStaysZero) {
  std::mt19937_64 rng(13);
  LstmCell cell(3, 4, rng);
  ParameterList ps;
  cell.collect("lstm", ps);
  zero_all(ps);
  Graph g;
  const LstmState s =
      cell.step(g, Tensor(random_matrix(2, 3, rng)), {Tensor(Matrix::Zero(2, 4)), Tensor(Matrix::Zero(2, 4))});
  EXPECT_TRUE(s.h.value().isZero(0.0));
  EXPECT_TRUE(s.c.value().isZero(0.0));
}

TEST(Lstm, ThreeChainedStepsMatchFiniteDifferences) {
  std::mt19937_64 rng(14);
  LstmCell cell(3, 4, rng);
  const Tensor x0(random_matrix(2, 3, rng));
  const Tensor x1(random_matrix(2, 3, rng));
  const Tensor x2(random_matrix(2, 3, rng));
  const Tensor c0(random_matrix(2, 4, rng));
  const Tensor w(random_matrix(2, 4, rng));
  ParameterList ps;
  cell.collect("lstm", ps);
  std::vector<Parameter*> params;
  for (auto& p : ps) params.push_back(p.param);
  const auto run = [&](Graph& g, const Tensor& h0) {
    LstmState s{h0, c0};
    for (const Tensor* x : {&x0, &x1, &x2}) s = cell.step(g, *x, s);
    return sum(mul(s.h, w));
  };
  EXPECT_LE(check_parameter_gradient<Scalar>([&](Graph& g) { return run(g, Tensor(Matrix::Zero(2, 4))); }, params, 1e-5),
            1e-4);
  const auto f = [&](const Tensor& h0) {
    Graph g;
    return run(g, h0);
  };
  EXPECT_LE(check_gradient<Scalar>(f, Tensor(random_matrix(2, 4, rng)), 1e-5), 1e-4);
}

}  // namespace
