#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "routesel/autodiff.hpp"
#include "test_util.hpp"

using namespace routesel;
using namespace routesel::ad;
using routesel::testing::random_tensor;

namespace {

double checked(const ScalarGraph& f, std::vector<Tensor> point) { return grad_check(f, std::move(point)); }

// Weighted sum with fixed random weights so every output entry matters.
Var weighted(Tape& t, Var v, std::uint64_t seed) {
  Rng rng(seed);
  return sum(mul(v, t.constant(random_tensor(v.rows(), v.cols(), rng))));
}

}  // namespace

TEST(Tensor, ShapeAndAccess) {
  Tensor t(2, 3, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.rows(), 2u);
  EXPECT_EQ(t.cols(), 3u);
  EXPECT_EQ(t(1, 0), 4.0);
  EXPECT_THROW(Tensor(2, 2, {1.0, 2.0}), DimensionError);
}

TEST(Ops, MatmulMatchesHandComputation) {
  Tape t;
  Var a = t.constant(Tensor(2, 2, {1, 2, 3, 4}));
  Var b = t.constant(Tensor(2, 1, {5, 6}));
  const Tensor c = matmul(a, b).value();
  EXPECT_EQ(c[0], 17.0);
  EXPECT_EQ(c[1], 39.0);
  EXPECT_THROW(matmul(b, b), DimensionError);
}

TEST(Ops, RowSoftmaxRowsSumToOne) {
  Rng rng(3);
  Tape t;
  const Tensor s = row_softmax(t.constant(random_tensor(4, 7, rng, -30, 30))).value();
  for (std::size_t r = 0; r < 4; ++r) {
    double z = 0;
    for (std::size_t c = 0; c < 7; ++c) z += s(r, c);
    EXPECT_NEAR(z, 1.0, 1e-12);
  }
}

TEST(Ops, MaxColsTiesGoToLowestRow) {
  Tape t;
  Var a = t.leaf(Tensor(3, 1, {2.0, 2.0, 1.0}));
  Var m = max_cols(a);
  EXPECT_EQ(m.value()[0], 2.0);
  t.backward(sum(m));
  const Tensor g = t.grad(a);
  EXPECT_EQ(g[0], 1.0);
  EXPECT_EQ(g[1], 0.0);
  EXPECT_EQ(g[2], 0.0);
}

TEST(Ops, CrossEntropyOfUniformScoresIsLogM) {
  Tape t;
  for (std::size_t m : {1u, 2u, 5u, 17u}) {
    Var s = t.constant(Tensor(1, m, 0.3));
    EXPECT_NEAR(cross_entropy(s, 0).value()[0], std::log(static_cast<double>(m)), 1e-12);
  }
}

TEST(Ops, ListMleOfEqualScoresIsLogFactorial) {
  Tape t;
  Var s = t.constant(Tensor(1, 4, 1.5));
  EXPECT_NEAR(listmle(s, {2, 0, 3, 1}).value()[0], std::log(24.0), 1e-12);
  Var one = t.constant(Tensor(1, 1, 7.0));
  EXPECT_EQ(listmle(one, {0}).value()[0], 0.0);
  EXPECT_THROW(listmle(s, {0, 0, 1, 2}), LabelError);
}

TEST(Ops, ListMleMatchesDirectFormula) {
  Tape t;
  const std::vector<double> v = {0.3, -1.2, 2.0};
  Var s = t.constant(Tensor::row(v));
  const std::vector<std::size_t> pi = {2, 0, 1};
  double expect = 0.0;
  for (std::size_t j = 0; j < 3; ++j) {
    double z = 0;
    for (std::size_t k = j; k < 3; ++k) z += std::exp(v[pi[k]]);
    expect += std::log(z) - v[pi[j]];
  }
  EXPECT_NEAR(listmle(s, pi).value()[0], expect, 1e-12);
}

TEST(Ops, CrossEntropyStableForLargeScores) {
  Tape t;
  Var s = t.constant(Tensor::row({1000.0, 0.0, -1000.0}));
  EXPECT_NEAR(cross_entropy(s, 0).value()[0], 0.0, 1e-12);
  EXPECT_TRUE(std::isfinite(cross_entropy(s, 2).value()[0]));
}

class GradCheck : public ::testing::TestWithParam<std::uint64_t> {};

TEST_P(GradCheck, ElementwiseAndShapeOps) {
  Rng rng(GetParam());
  const Tensor a = random_tensor(3, 4, rng), b = random_tensor(3, 4, rng), r = random_tensor(1, 4, rng);
  const Tensor c = random_tensor(4, 2, rng), s = random_tensor(1, 1, rng), col = random_tensor(3, 1, rng);
  EXPECT_LT(checked([](Tape& t, std::span<const Var> x) { return weighted(t, matmul(x[0], x[1]), 1); }, {a, c}), 1e-6);
  EXPECT_LT(checked([](Tape& t, std::span<const Var> x) { return weighted(t, matmul_nt(x[0], x[1]), 2); }, {a, b}), 1e-6);
  EXPECT_LT(checked([](Tape& t, std::span<const Var> x) { return weighted(t, add(x[0], x[1]), 3); }, {a, b}), 1e-6);
  EXPECT_LT(checked([](Tape& t, std::span<const Var> x) { return weighted(t, add_row(x[0], x[1]), 4); }, {a, r}), 1e-6);
  EXPECT_LT(checked([](Tape& t, std::span<const Var> x) { return weighted(t, mul(x[0], x[1]), 5); }, {a, b}), 1e-6);
  EXPECT_LT(checked([](Tape& t, std::span<const Var> x) { return weighted(t, scalar_mul(x[0], x[1]), 6); }, {s, a}), 1e-6);
  EXPECT_LT(checked([](Tape& t, std::span<const Var> x) { return weighted(t, row_softmax(x[0]), 7); }, {a}), 1e-6);
  EXPECT_LT(checked([](Tape& t, std::span<const Var> x) { return weighted(t, tanh(x[0]), 8); }, {a}), 1e-6);
  EXPECT_LT(checked([](Tape& t, std::span<const Var> x) { return weighted(t, relu(x[0]), 17); }, {a}), 1e-6);
  EXPECT_LT(checked([](Tape& t, std::span<const Var> x) { return weighted(t, concat_cols(x), 9); }, {a, b}), 1e-6);
  EXPECT_LT(checked([](Tape& t, std::span<const Var> x) { return weighted(t, concat_rows(x), 10); }, {a, r}), 1e-6);
  EXPECT_LT(checked([](Tape& t, std::span<const Var> x) { return weighted(t, slice_cols(x[0], 1, 2), 11); }, {a}), 1e-6);
  EXPECT_LT(checked([](Tape& t, std::span<const Var> x) { return weighted(t, mean_rows(x[0]), 12); }, {a}), 1e-6);
  EXPECT_LT(checked([](Tape& t, std::span<const Var> x) { return weighted(t, max_cols(x[0]), 13); }, {a}), 1e-6);
  EXPECT_LT(checked([](Tape& t, std::span<const Var> x) { return weighted(t, gather_rows(x[0], {2, 0, 2}), 14); }, {a}), 1e-6);
  EXPECT_LT(checked([](Tape& t, std::span<const Var> x) { return weighted(t, broadcast_add_col(x[0], x[1]), 15); },
                    {a, col}),
            1e-6);
  EXPECT_LT(checked([](Tape& t, std::span<const Var> x) { return weighted(t, scale(x[0], -2.5), 16); }, {a}), 1e-6);
}

TEST_P(GradCheck, Losses) {
  Rng rng(GetParam());
  const Tensor s = random_tensor(1, 5, rng, -2, 2);
  EXPECT_LT(checked([](Tape&, std::span<const Var> x) { return cross_entropy(x[0], 3); }, {s}), 1e-6);
  EXPECT_LT(checked([](Tape&, std::span<const Var> x) { return listmle(x[0], {4, 1, 0, 3, 2}); }, {s}), 1e-6);
}

INSTANTIATE_TEST_SUITE_P(Seeds, GradCheck, ::testing::Range<std::uint64_t>(1, 21));

TEST(GradCheckStencil, ShrinksAcrossKinks) {
  const Tensor x = Tensor::row({3e-4, -5e-4, 0.7});
  const ScalarGraph f = [](Tape& t, std::span<const Var> p) {
    return sum(mul(relu(p[0]), t.constant(Tensor::row({1.5, -2.0, 0.25}))));
  };
  EXPECT_LT(grad_check(f, {x}, 1e-2), 1e-9);
  const ScalarGraph g = [](Tape&, std::span<const Var> p) { return sum(max_cols(p[0])); };
  Tensor m(2, 2);
  m(0, 0) = 1.0;
  m(1, 0) = 1.001;
  m(0, 1) = -0.3;
  m(1, 1) = 0.4;
  EXPECT_LT(grad_check(g, {m}, 1e-2), 1e-9);
  EXPECT_THROW(grad_check(f, {x}, 0.0), ParameterError);
}

TEST(GradCheckStencil, SignatureTracksBranches) {
  auto sig = [](const Tensor& v) {
    Tape t;
    Var a = t.constant(v);
    sum(relu(a));
    return branch_signature(t);
  };
  EXPECT_EQ(sig(Tensor::row({1.0, -1.0})), sig(Tensor::row({2.0, -0.5})));
  EXPECT_NE(sig(Tensor::row({1.0, -1.0})), sig(Tensor::row({1.0, 0.5})));
  auto arg = [](const Tensor& v) {
    Tape t;
    max_cols(t.constant(v));
    return branch_signature(t);
  };
  Tensor a(2, 1), b(2, 1);
  a(0, 0) = 1.0;
  a(1, 0) = 0.0;
  b(0, 0) = 0.0;
  b(1, 0) = 1.0;
  EXPECT_NE(arg(a), arg(b));
}

TEST(Relu, GradientAwayFromKink) {
  Tape t;
  Var a = t.leaf(Tensor::row({-1.0, 2.0}));
  t.backward(sum(relu(a)));
  EXPECT_EQ(t.grad(a)[0], 0.0);
  EXPECT_EQ(t.grad(a)[1], 1.0);
}

TEST(Backward, SharedSubexpressionAccumulates) {
  Tape t;
  Var a = t.leaf(Tensor::scalar(3.0));
  t.backward(add(mul(a, a), a));  // d/da (a^2 + a) = 2a + 1
  EXPECT_EQ(t.grad(a)[0], 7.0);
}

TEST(Backward, ConstantsReceiveNoGradient) {
  Tape t;
  Var c = t.constant(Tensor::scalar(2.0));
  Var a = t.leaf(Tensor::scalar(3.0));
  t.backward(mul(a, c));
  EXPECT_TRUE(t.node(c.id()).grad.empty());
  EXPECT_EQ(t.grad(a)[0], 2.0);
}

TEST(Backward, RejectsNonScalarLoss) {
  Tape t;
  Var a = t.leaf(Tensor(2, 2, 1.0));
  EXPECT_THROW(t.backward(a), ContractViolation);
}

TEST(Adam, MinimisesQuadratic) {
  ParameterSet ps;
  ps.add("x", Tensor::row({3.0, -2.0}));
  auto st = AdamState::for_parameters(ps, 0.05, 0.0);
  for (int i = 0; i < 2000; ++i) {
    Tape t;
    auto p = ps.bind(t);
    Var target = t.constant(Tensor::row({1.0, 1.0}));
    Var d = add(p[0], scale(target, -1.0));
    t.backward(sum(mul(d, d)));
    adam_step(ps, ParameterSet::gradients(t, p), st);
  }
  EXPECT_NEAR(ps.value(0)[0], 1.0, 1e-3);
  EXPECT_NEAR(ps.value(0)[1], 1.0, 1e-3);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  ParameterSet ps;
  ps.add("x", Tensor::row({0.0, 0.0}));
  auto st = AdamState::for_parameters(ps, 0.1, 0.0);
  adam_step(ps, std::vector<Tensor>{Tensor::row({4.0, -0.001})}, st);
  EXPECT_NEAR(ps.value(0)[0], -0.1, 1e-6);
  EXPECT_NEAR(ps.value(0)[1], 0.1, 1e-4);
}

TEST(Adam, WeightDecayPullsTowardZero) {
  ParameterSet ps;
  ps.add("x", Tensor::scalar(1.0));
  auto st = AdamState::for_parameters(ps, 0.01, 0.5);
  adam_step(ps, std::vector<Tensor>{Tensor::scalar(0.0)}, st);
  EXPECT_LT(ps.value(0)[0], 1.0);
}

TEST(Adam, RejectsNonFiniteGradient) {
  ParameterSet ps;
  ps.add("x", Tensor::scalar(1.0));
  auto st = AdamState::for_parameters(ps);
  EXPECT_THROW(adam_step(ps, std::vector<Tensor>{Tensor::scalar(std::nan(""))}, st), TrainingError);
  EXPECT_THROW(adam_step(ps, std::vector<Tensor>{Tensor(1, 2)}, st), DimensionError);
}

TEST(ParameterSet, RejectsDuplicateNames) {
  ParameterSet ps;
  ps.add("w", Tensor(1, 1));
  EXPECT_THROW(ps.add("w", Tensor(1, 1)), ContractViolation);
}
