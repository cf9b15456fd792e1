// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <random>
#include <thread>

#include "stt/autodiff.hpp"
#include "stt/conv.hpp"
#include "stt/grad_check.hpp"
#include "test_util.hpp"

using namespace stt;
using stt::testing::rand_matrix;
using stt::testing::rand_tensor;

TEST(Tape, SumGivesOnesAdjoint) {
  std::mt19937_64 rng(1);
  ad::Tape t;
  const ad::Var x = t.leaf(rand_tensor({2, 3}, rng));
  t.backward(ad::sum(x));
  EXPECT_TRUE(bitwise_equal(x.grad(), Tensor::filled({2, 3}, 1.0)));
}

TEST(Tape, SoftmaxVjpAtUniformPoint) {
  ad::Tape t;
  const ad::Var z = t.leaf(Tensor({2, 3}));
  const ad::Var s = ad::softmax_rows(z);
  const Tensor v = Matrix::from_rows({{1, 2, 6}, {-1, 0, 4}}).to_tensor();
  t.backward(s, v);
  for (std::size_t i = 0; i < 2; ++i) {
    const double mean = (v(i, 0) + v(i, 1) + v(i, 2)) / 3.0;
    for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(z.grad()(i, j), (v(i, j) - mean) / 3.0, 1e-15);
  }
}

TEST(Tape, MatmulBackwardAgainstFiniteDifferences) {
  std::mt19937_64 rng(2);
  ad::MultiScalarFn f = [](ad::Tape&, std::span<const ad::Var> v) {
    const ad::Var p = ad::matmul(v[0], v[1]);
    return ad::sum(ad::mul(p, p));
  };
  const auto r = ad::grad_check(f, {rand_tensor({3, 4}, rng), rand_tensor({4, 2}, rng)});
  EXPECT_LT(r.max_rel_err, 1e-6);
  EXPECT_EQ(r.n_checked, 20u);
}

TEST(Tape, RejectsNonScalarLossAndEmptyVars) {
  ad::Tape t;
  const ad::Var x = t.leaf(Tensor({2, 2}));
  EXPECT_THROW(t.backward(x), ShapeError);
  EXPECT_THROW(t.backward(ad::Var{}), std::logic_error);
  EXPECT_THROW(t.backward(x, Tensor({3})), ShapeError);
  ad::Tape other;
  const ad::Var y = other.leaf(Tensor({2, 2}));
  EXPECT_THROW((void)ad::add(x, y), std::logic_error);
}

TEST(Tape, ShapeMismatchInPrimitives) {
  ad::Tape t;
  const ad::Var a = t.leaf(Tensor({2, 3})), b = t.leaf(Tensor({3, 2}));
  EXPECT_THROW((void)ad::add(a, b), ShapeError);
  EXPECT_THROW((void)ad::matmul(a, a), ShapeError);
  EXPECT_THROW((void)ad::mode_product(a, b, 1), ShapeError);
  EXPECT_THROW((void)ad::reshape(a, {4}), ShapeError);
}

TEST(Tape, ForwardValuesEqualPureComputationBitwise) {
  std::mt19937_64 rng(3);
  const Tensor x = rand_tensor({3, 4, 2}, rng);
  const Tensor a = rand_matrix(5, 4, rng).to_tensor();
  const Tensor m = rand_tensor({4, 3}, rng);
  ad::Tape t;
  const ad::Var vx = t.leaf(x), va = t.leaf(a), vm = t.leaf(m);
  const ad::Var mp = ad::mode_product(vx, va, 1);
  EXPECT_TRUE(bitwise_equal(mp.value(), mode_n_product(x, Matrix::from_tensor(a), 1)));
  const ad::Var sm = ad::softmax_rows(vm);
  EXPECT_TRUE(bitwise_equal(sm.value(), softmax_rows(m)));
  EXPECT_TRUE(bitwise_equal(ad::relu(vx).value(), relu(x)));
  EXPECT_TRUE(bitwise_equal(ad::matmul(vm, ad::transpose(vm)).value(), matmul(m, transpose(m))));
  EXPECT_EQ(ad::sum(vx).value()[0], sum(x));
  EXPECT_EQ(ad::cross_entropy(ad::reshape(vm, {12}), 5).value()[0], cross_entropy(m.reshaped({12}), 5));
}

TEST(Tape, NodeOrderIsTopological) {
  ad::Tape t;
  const ad::Var a = t.leaf(Tensor({2})), b = t.leaf(Tensor({2}));
  const ad::Var c = ad::add(a, b);
  const ad::Var d = ad::scale(c, 2.0);
  for (std::size_t id = 0; id < t.size(); ++id)
    for (std::size_t p : t.node(id).parents) EXPECT_LT(p, id);
  EXPECT_EQ(d.op(), ad::Op::Scale);
}

TEST(Tape, SharedSubexpressionAccumulates) {
  ad::Tape t;
  const ad::Var x = t.leaf(Tensor({1}, {3.0}));
  t.backward(ad::mul(x, x));
  EXPECT_EQ(x.grad()[0], 6.0);
}

TEST(Tape, ConstantsReceiveNoGradient) {
  ad::Tape t;
  const ad::Var c = t.constant(Tensor({2}, {1, 2}));
  const ad::Var x = t.leaf(Tensor({2}, {3, 4}));
  t.backward(ad::sum(ad::mul(c, x)));
  EXPECT_TRUE(bitwise_equal(c.grad(), Tensor({2})));
  EXPECT_TRUE(bitwise_equal(x.grad(), Tensor({2}, {1, 2})));
}

TEST(GradCheck, SumOfSquares) {
  std::mt19937_64 rng(4);
  ad::ScalarFn f = [](ad::Tape&, ad::Var x) { return ad::sum(ad::mul(x, x)); };
  const auto r = ad::grad_check(f, rand_tensor({3, 3}, rng));
  EXPECT_TRUE(r.pass);
  EXPECT_LT(r.max_rel_err, 1e-7);
}

TEST(GradCheck, ConstantFunctionHasZeroGradients) {
  std::mt19937_64 rng(5);
  ad::ScalarFn f = [](ad::Tape& t, ad::Var) { return t.constant(Tensor({1}, {2.5})); };
  const auto r = ad::grad_check(f, rand_tensor({2, 2}, rng));
  EXPECT_TRUE(r.pass);
  EXPECT_EQ(r.max_abs_err, 0.0);
  ad::Tape t;
  const ad::Var x = t.leaf(rand_tensor({2, 2}, rng));
  t.backward(ad::scale(ad::sum(x), 0.0));
  EXPECT_TRUE(bitwise_equal(x.grad(), Tensor({2, 2})));
}

TEST(GradCheck, RejectsNonPositiveEps) {
  ad::ScalarFn f = [](ad::Tape&, ad::Var x) { return ad::sum(x); };
  EXPECT_THROW((void)ad::grad_check(f, Tensor({2}), 0.0), std::invalid_argument);
}

TEST(GradCheck, EveryPrimitiveInIsolation) {
  std::mt19937_64 rng(6);
  struct Case {
    const char* name;
    ad::MultiFn f;
    std::vector<Tensor> in;
  };
  std::vector<Case> cases;
  cases.push_back({"add", [](ad::Tape&, std::span<const ad::Var> v) { return ad::add(v[0], v[1]); },
                   {rand_tensor({2, 3}, rng), rand_tensor({2, 3}, rng)}});
  cases.push_back({"scale", [](ad::Tape&, std::span<const ad::Var> v) { return ad::scale(v[0], -1.7); },
                   {rand_tensor({4}, rng)}});
  cases.push_back({"mul", [](ad::Tape&, std::span<const ad::Var> v) { return ad::mul(v[0], v[1]); },
                   {rand_tensor({3}, rng), rand_tensor({3}, rng)}});
  cases.push_back({"matmul", [](ad::Tape&, std::span<const ad::Var> v) { return ad::matmul(v[0], v[1]); },
                   {rand_tensor({3, 4}, rng), rand_tensor({4, 2}, rng)}});
  cases.push_back({"transpose", [](ad::Tape&, std::span<const ad::Var> v) { return ad::transpose(v[0]); },
                   {rand_tensor({2, 5}, rng)}});
  for (std::size_t mode = 0; mode < 3; ++mode)
    cases.push_back({"mode_product",
                     [mode](ad::Tape&, std::span<const ad::Var> v) { return ad::mode_product(v[0], v[1], mode); },
                     {rand_tensor({2, 3, 4}, rng), rand_tensor({3, std::size_t(2 + mode)}, rng)}});
  cases.push_back({"softmax_rows", [](ad::Tape&, std::span<const ad::Var> v) { return ad::softmax_rows(v[0]); },
                   {rand_tensor({3, 4}, rng, -3, 3)}});
  cases.push_back({"relu", [](ad::Tape&, std::span<const ad::Var> v) { return ad::relu(v[0]); },
                   {Tensor({4}, {-0.7, 0.3, 1.2, -0.1})}});
  cases.push_back({"reshape", [](ad::Tape&, std::span<const ad::Var> v) { return ad::reshape(v[0], {3, 2}); },
                   {rand_tensor({2, 3}, rng)}});
  cases.push_back({"sum", [](ad::Tape&, std::span<const ad::Var> v) { return ad::sum(v[0]); },
                   {rand_tensor({2, 2}, rng)}});
  cases.push_back({"cross_entropy",
                   [](ad::Tape&, std::span<const ad::Var> v) { return ad::cross_entropy(v[0], 2); },
                   {rand_tensor({5}, rng, -2, 2)}});
  cases.push_back({"conv2d",
                   [](ad::Tape&, std::span<const ad::Var> v) { return ad::conv2d(v[0], v[1], v[2]); },
                   {rand_tensor({4, 3, 2}, rng), rand_tensor({3, 3, 2, 2}, rng), rand_tensor({2}, rng)}});
  cases.push_back({"avg_pool", [](ad::Tape&, std::span<const ad::Var> v) { return ad::avg_pool(v[0], 2); },
                   {rand_tensor({5, 4, 2}, rng)}});
  cases.push_back({"kron", [](ad::Tape&, std::span<const ad::Var> v) { return ad::kron(v[0], v[1]); },
                   {rand_tensor({2, 3}, rng), rand_tensor({3, 2}, rng)}});
  cases.push_back({"stack",
                   [](ad::Tape&, std::span<const ad::Var> v) { return ad::stack(v.subspan(0, 3)); },
                   {rand_tensor({2, 2}, rng), rand_tensor({2, 2}, rng), rand_tensor({2, 2}, rng)}});
  for (Case& c : cases) {
    const Tensor out = ad::detail::evaluate(c.f, c.in);
    const Tensor cot = rand_tensor(out.shape(), rng);
    const auto r = ad::vjp_check(c.f, c.in, cot);
    EXPECT_TRUE(r.pass) << c.name << " max_rel_err=" << r.max_rel_err;
  }
}

TEST(GradCheck, FaultInjectionIsDetected) {
  std::mt19937_64 rng(7);
  // The rows of a softmax sum to a constant, so weight the output first.
  ad::MultiScalarFn g = [](ad::Tape&, std::span<const ad::Var> v) {
    const ad::Var s = ad::softmax_rows(ad::matmul(v[0], v[1]));
    return ad::sum(ad::mul(s, v[2]));
  };
  std::vector<Tensor> in{rand_tensor({3, 2}, rng), rand_tensor({2, 4}, rng), rand_tensor({3, 4}, rng)};
  EXPECT_TRUE(ad::grad_check(g, in).pass);
  ad::GradCheckOptions opts;
  opts.fault = ad::Op::MatMul;
  EXPECT_FALSE(ad::grad_check(g, in, opts).pass);
}

TEST(Softmax, GradientRowSumsVanishForRowConstantUpstream) {
  std::mt19937_64 rng(8);
  for (int t = 0; t < 20; ++t) {
    ad::Tape tape;
    const ad::Var z = tape.leaf(rand_tensor({4, 5}, rng, -4, 4));
    Tensor up({4, 5});
    for (std::size_t i = 0; i < 4; ++i) {
      const double c = std::uniform_real_distribution<double>(-3, 3)(rng);
      for (std::size_t j = 0; j < 5; ++j) up(i, j) = c;
    }
    tape.backward(ad::softmax_rows(z), up);
    for (std::size_t i = 0; i < 4; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < 5; ++j) s += z.grad()(i, j);
      EXPECT_LT(std::abs(s), 1e-12);
    }
  }
}

TEST(KronModeProduct, MatchesMaterializedAndGradChecks) {
  std::mt19937_64 rng(9);
  const Tensor x = rand_tensor({3, 6, 2}, rng);
  const Tensor a = rand_tensor({2, 3}, rng), b = rand_tensor({2, 2}, rng);
  ad::Tape t;
  std::vector<ad::Var> fs{t.leaf(a), t.leaf(b)};
  const ad::Var y = ad::kron_mode_product(t.leaf(x), fs, 1);
  const Matrix full = kronecker(Matrix::from_tensor(a), Matrix::from_tensor(b));
  EXPECT_LT(max_abs_diff(y.value(), mode_n_product(x, full, 1)), 1e-12);

  ad::MultiFn f = [](ad::Tape&, std::span<const ad::Var> v) {
    return ad::kron_mode_product(v[0], v.subspan(1, 2), 1);
  };
  const auto r = ad::vjp_check(f, {x, a, b}, rand_tensor({3, 4, 2}, rng));
  EXPECT_TRUE(r.pass) << r.max_rel_err;
}

TEST(Concurrency, TwoThreadsGiveBitwiseIdenticalGradients) {
  auto run = [](Tensor* out) {
    std::mt19937_64 rng(10);
    const Tensor x = rand_tensor({4, 4}, rng), w = rand_tensor({4, 3}, rng);
    ad::Tape t;
    const ad::Var vx = t.leaf(x), vw = t.leaf(w);
    const ad::Var s = ad::softmax_rows(ad::matmul(vx, vw));
    t.backward(ad::cross_entropy(ad::reshape(s, {12}), 4));
    *out = vw.grad();
  };
  Tensor g1, g2;
  std::thread a(run, &g1), b(run, &g2);
  a.join();
  b.join();
  EXPECT_TRUE(bitwise_equal(g1, g2));
  EXPECT_GT(max_abs(g1), 0.0);
}
