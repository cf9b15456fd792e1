// SPDX-License-Identifier: Apache-2.0
//
// Self-check suite: identities the library must satisfy, each reported with
// the largest observed error against its tolerance.

#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "stt/attention.hpp"
#include "stt/autodiff.hpp"
#include "stt/grad_check.hpp"
#include "stt/kron.hpp"
#include "stt/perturb.hpp"
#include "stt/tensor.hpp"

namespace stt {

struct CheckResult {
  std::string name;
  double max_error = 0.0;
  double tolerance = 0.0;
  bool pass = false;
  std::string detail;
};

struct VerifyReport {
  std::vector<CheckResult> checks;
  double seconds = 0.0;

  bool ok() const {
    for (const CheckResult& c : checks)
      if (!c.pass) return false;
    return !checks.empty();
  }
};

struct VerifyOptions {
  std::uint64_t seed = 7;
  /// Corrupts one backward rule before the gradient checks run.
  std::optional<ad::Op> fault;
};

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (double& v : t.data()) v = u(rng);
  return t;
}

inline Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng) {
  return Matrix::from_tensor(random_tensor({r, c}, rng));
}

struct PrimitiveCase {
  ad::Op op;
  std::vector<Tensor> inputs;
  ad::MultiFn fn;
};

/// One small instance per primitive; each case's function ends in that
/// primitive so its backward rule is checked in isolation.
inline std::vector<PrimitiveCase> primitive_cases(std::mt19937_64& rng) {
  using namespace ad;
  auto rt = [&](Shape s) { return random_tensor(std::move(s), rng); };
  // Entries bounded away from zero so differences never straddle the kink.
  Tensor away = rt({3, 4});
  for (double& v : away.data()) v = (v < 0 ? -0.2 : 0.2) + 0.8 * v;

  std::vector<PrimitiveCase> cs;
  cs.push_back({Op::Add, {rt({3, 4}), rt({3, 4})},
                [](Tape&, std::span<const Var> v) { return add(v[0], v[1]); }});
  cs.push_back({Op::Scale, {rt({3, 4})},
                [](Tape&, std::span<const Var> v) { return scale(v[0], -1.7); }});
  cs.push_back({Op::Mul, {rt({3, 4}), rt({3, 4})},
                [](Tape&, std::span<const Var> v) { return mul(v[0], v[1]); }});
  cs.push_back({Op::MatMul, {rt({3, 4}), rt({4, 2})},
                [](Tape&, std::span<const Var> v) { return matmul(v[0], v[1]); }});
  cs.push_back({Op::Transpose, {rt({3, 4})},
                [](Tape&, std::span<const Var> v) { return transpose(v[0]); }});
  cs.push_back({Op::ModeProduct, {rt({2, 3, 4}), rt({5, 3})},
                [](Tape&, std::span<const Var> v) { return mode_product(v[0], v[1], 1); }});
  cs.push_back({Op::SoftmaxRows, {rt({3, 5})},
                [](Tape&, std::span<const Var> v) { return softmax_rows(v[0]); }});
  cs.push_back({Op::Relu, {away},
                [](Tape&, std::span<const Var> v) { return relu(v[0]); }});
  cs.push_back({Op::Reshape, {rt({2, 6})},
                [](Tape&, std::span<const Var> v) { return reshape(v[0], {3, 4}); }});
  cs.push_back({Op::Sum, {rt({3, 4})},
                [](Tape&, std::span<const Var> v) { return sum(v[0]); }});
  cs.push_back({Op::CrossEntropy, {rt({5})},
                [](Tape&, std::span<const Var> v) { return cross_entropy(v[0], 2); }});
  cs.push_back({Op::Conv2d, {rt({4, 5, 2}), rt({3, 3, 2, 3}), rt({3})},
                [](Tape&, std::span<const Var> v) { return conv2d(v[0], v[1], v[2], 1); }});
  cs.push_back({Op::AvgPool, {rt({4, 6, 2})},
                [](Tape&, std::span<const Var> v) { return avg_pool(v[0], 2); }});
  cs.push_back({Op::Kron, {rt({2, 3}), rt({3, 2})},
                [](Tape&, std::span<const Var> v) { return kron(v[0], v[1]); }});
  cs.push_back({Op::Stack, {rt({2, 3}), rt({2, 3}), rt({2, 3})},
                [](Tape&, std::span<const Var> v) { return stack(v); }});
  return cs;
}

/// Graph forward of an attention block as a function of (params..., features).
inline ad::MultiFn attention_fn(const AttentionBlock& block) {
  return [&block](ad::Tape&, std::span<const ad::Var> v) {
    return block.forward(v.first(v.size() - 1), v.back()).Y;
  };
}

inline SynthesizerSpec small_spec(SynthKind kind, std::size_t h, std::size_t w, std::size_t d) {
  SynthesizerSpec s;
  s.kind = kind;
  s.height = h;
  s.width = w;
  s.channels = d;
  s.dim = d;
  return s;
}

namespace detail {

inline CheckResult bounded(std::string name, double err, double tol, std::string detail = {}) {
  return {std::move(name), err, tol, err < tol, std::move(detail)};
}

/// Max residual of vec(X x_0 A_0 ... x_{k-1} A_{k-1}) against
/// (A_{k-1} (x) ... (x) A_0) vec(X) over random instances.
inline double vec_kron_residual(std::size_t instances, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> order_d(2, 4), dim_d(1, 5);
  double worst = 0.0;
  for (std::size_t t = 0; t < instances; ++t) {
    const std::size_t n = order_d(rng);
    Shape shape;
    std::vector<Matrix> maps;
    for (std::size_t k = 0; k < n; ++k) shape.push_back(dim_d(rng));
    for (std::size_t k = 0; k < n; ++k) maps.push_back(random_matrix(dim_d(rng), shape[k], rng));
    const Tensor x = random_tensor(shape, rng);
    Tensor y = x;
    for (std::size_t k = 0; k < n; ++k) y = mode_n_product(y, maps[k], k);
    Matrix big = maps[n - 1];
    for (std::size_t k = n - 1; k-- > 0;) big = kronecker(big, maps[k]);
    const Matrix col = Matrix(x.size(), 1, std::vector<double>(x.data().begin(), x.data().end()));
    const Matrix expect = matmul(big, col);
    for (std::size_t i = 0; i < y.size(); ++i)
      worst = std::max(worst, std::abs(y[i] - expect.data()[i]));
  }
  return worst;
}

inline std::vector<Matrix> random_factors(const std::vector<FactorShape>& shapes,
                                          std::mt19937_64& rng) {
  std::vector<Matrix> fs;
  for (const FactorShape& s : shapes) fs.push_back(random_matrix(s.rows, s.cols, rng));
  return fs;
}

inline double max_diff(const AttentionOutput& a, const AttentionOutput& b) {
  return std::max(max_abs_diff(a.S.to_tensor(), b.S.to_tensor()),
                  max_abs_diff(a.Y.to_tensor(), b.Y.to_tensor()));
}

}  // namespace detail

/// Factored-dense output vs dense output on materialized factors.
inline double factored_dense_residual(std::size_t instances, std::mt19937_64& rng) {
  const std::size_t sizes[][3] = {{2, 2, 4}, {2, 3, 4}, {3, 3, 4}, {4, 4, 8}, {2, 4, 6}};
  double worst = 0.0;
  for (std::size_t t = 0; t < instances; ++t) {
    const auto& sz = sizes[t % std::size(sizes)];
    const std::size_t h = sz[0], w = sz[1], d = sz[2], hw = h * w;
    const Tensor o = random_tensor({h, w, d}, rng);
    const Matrix v = random_matrix(hw, d, rng);
    const KroneckerFactoredMap fh(detail::random_factors(factor_shapes(hw, h, 2), rng));
    const KroneckerFactoredMap fw(detail::random_factors(factor_shapes(hw, w, 2), rng));
    const KroneckerFactoredMap fc(detail::random_factors(factor_shapes(1, d, 2), rng));
    const auto fact = factored_dense_synthesizer(o, fh, fw, fc, v);
    const auto dense =
        dense_synthesizer(o, fh.materialize(), fw.materialize(), fc.materialize(), v);
    worst = std::max(worst, detail::max_diff(fact, dense));
  }
  return worst;
}

/// Factored-random output vs random output on the materialized R.
inline double factored_random_residual(std::size_t instances, std::mt19937_64& rng) {
  double worst = 0.0;
  for (std::size_t t = 0; t < instances; ++t) {
    const std::size_t h = 2 + t % 3, w = 2 + (t / 3) % 3, d = 2 + t % 4, hw = h * w;
    const KroneckerFactoredMap r(
        detail::random_factors({{w, w}, {h, h}}, rng));
    const Matrix v = random_matrix(hw, d, rng);
    worst = std::max(worst, detail::max_diff(factored_random_synthesizer(r, v),
                                             random_synthesizer(r.materialize(), v)));
  }
  return worst;
}

/// Runs every check; never throws on a failed check.
inline VerifyReport verify(const VerifyOptions& opts = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  VerifyReport rep;
  std::mt19937_64 rng(opts.seed);

  rep.checks.push_back(detail::bounded("vec-kronecker identity",
                                       detail::vec_kron_residual(100, rng), 1e-10,
                                       "100 instances, orders 2-4"));
  {
    const KroneckerFactoredMap m({random_matrix(4, 3, rng), random_matrix(2, 5, rng),
                                  random_matrix(3, 2, rng)});
    const Tensor x = random_tensor({m.in_dim()}, rng);
    const auto y = m.apply(x.data());
    const Matrix ref =
        matmul(m.materialize(), Matrix(m.in_dim(), 1, std::vector(x.data().begin(), x.data().end())));
    double err = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) err = std::max(err, std::abs(y[i] - ref.data()[i]));
    rep.checks.push_back(detail::bounded("kronecker apply vs materialized", err, 1e-10));
  }
  rep.checks.push_back(detail::bounded("factored dense == dense",
                                       factored_dense_residual(20, rng), 1e-10));
  rep.checks.push_back(detail::bounded("factored random == random",
                                       factored_random_residual(20, rng), 1e-10));

  ad::GradCheckOptions gopts;
  gopts.fault = opts.fault;
  for (PrimitiveCase& c : primitive_cases(rng)) {
    const Tensor out = ad::detail::evaluate(c.fn, c.inputs);
    const Tensor cot = random_tensor(out.shape(), rng);
    const auto r = ad::vjp_check(c.fn, c.inputs, cot, gopts);
    rep.checks.push_back(detail::bounded(
        "grad " + std::string(ad::op_name(c.op)), r.max_rel_err, gopts.tol,
        std::to_string(r.n_checked) + " entries"));
  }

  for (SynthKind kind : kAllSynthKinds) {
    const AttentionBlock block(small_spec(kind, 2, 3, 4));
    std::vector<Tensor> inputs = block.init(rng);
    for (Tensor& t : inputs)
      for (double& v : t.data()) v += std::uniform_real_distribution<double>(-0.5, 0.5)(rng);
    inputs.push_back(random_tensor({2, 3, 4}, rng));
    const auto fn = attention_fn(block);
    const Tensor cot = random_tensor({6, 4}, rng);
    const auto r = ad::vjp_check(fn, inputs, cot, gopts);
    rep.checks.push_back(detail::bounded("grad synthesizer " + std::string(kind_name(kind)),
                                         r.max_rel_err, gopts.tol,
                                         std::to_string(r.n_checked) + " entries"));

    inputs.pop_back();
    double err = 0.0;
    bool negative = false;
    for (int t = 0; t < 10; ++t) {
      const auto out = block.forward(inputs, random_tensor({2, 3, 4}, rng));
      for (std::size_t i = 0; i < out.S.rows(); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < out.S.cols(); ++j) {
          s += out.S(i, j);
          negative = negative || out.S(i, j) < 0.0;
        }
        err = std::max(err, std::abs(s - 1.0));
      }
    }
    if (negative) err = std::max(err, 1.0);
    rep.checks.push_back(detail::bounded(
        "row-stochastic " + std::string(kind_name(kind)), err, 1e-12));
  }

  {
    const Tensor img = random_tensor({5, 5, 3}, rng, 0.0, 1.0);
    const Tensor rect = random_tensor({4, 6, 2}, rng, 0.0, 1.0);
    double err = 0.0;
    Tensor r = img;
    for (int k = 0; k < 4; ++k) r = rotate(r, 90);
    err = std::max(err, bitwise_equal(r, img) ? 0.0 : max_abs_diff(r, img) + 1.0);
    for (FlipMode m : {FlipMode::Horizontal, FlipMode::Vertical, FlipMode::Both}) {
      const Tensor f = flip(flip(rect, m), m);
      err = std::max(err, bitwise_equal(f, rect) ? 0.0 : max_abs_diff(f, rect) + 1.0);
    }
    const Tensor hv = flip(flip(img, FlipMode::Horizontal), FlipMode::Vertical);
    err = std::max(err, bitwise_equal(rotate(img, 180), hv) ? 0.0 : 1.0);
    rep.checks.push_back({"perturbation involutions", err, 0.0, err == 0.0,
                          "bitwise: 4x90 rotation, double flips, 180 == both flips"});
  }

  rep.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

}  // namespace stt
