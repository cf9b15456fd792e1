// SPDX-License-Identifier: Apache-2.0
//
// Central finite-difference check of tape gradients.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "stt/autodiff.hpp"

namespace stt::ad {

struct GradCheckReport {
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  std::size_t n_checked = 0;
  bool pass = true;
};

/// Scalar-valued function of several tensors, expressed on a tape.
using MultiScalarFn = std::function<Var(Tape&, std::span<const Var>)>;
using ScalarFn = std::function<Var(Tape&, Var)>;

struct GradCheckOptions {
  double eps = 1e-5;
  double tol = 1e-4;
  /// Corrupts one backward rule on the analytic tape (fault-injection runs).
  std::optional<Op> fault;
};

/// Any-shaped function of several tensors, expressed on a tape.
using MultiFn = std::function<Var(Tape&, std::span<const Var>)>;

namespace detail {

inline Tensor evaluate(const MultiFn& f, std::span<const Tensor> inputs) {
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(inputs.size());
  for (const Tensor& x : inputs) vars.push_back(tape.leaf(x, false));
  return f(tape, vars).value();
}

inline double dot(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline GradCheckReport check(const MultiFn& f, std::vector<Tensor> inputs,
                             const std::optional<Tensor>& cotangent,
                             const GradCheckOptions& opts) {
  if (!(opts.eps > 0.0)) throw std::invalid_argument("grad_check: eps must be positive");

  std::vector<Tensor> analytic;
  Tensor seed;
  {
    Tape tape;
    if (opts.fault) tape.inject_fault(*opts.fault);
    std::vector<Var> vars;
    for (const Tensor& x : inputs) vars.push_back(tape.leaf(x, true));
    const Var out = f(tape, vars);
    if (cotangent) {
      seed = *cotangent;
      tape.backward(out, seed);
    } else {
      if (out.value().size() != 1)
        throw ShapeError("grad_check: function must return a scalar, got shape " +
                         shape_string(out.value().shape()));
      seed = Tensor::filled(out.value().shape(), 1.0);
      tape.backward(out);
    }
    for (const Var& v : vars) analytic.push_back(v.grad());
  }

  GradCheckReport report;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const double orig = inputs[k][i];
      inputs[k][i] = orig + opts.eps;
      const double up = dot(evaluate(f, inputs), seed);
      inputs[k][i] = orig - opts.eps;
      const double down = dot(evaluate(f, inputs), seed);
      inputs[k][i] = orig;
      const double numeric = (up - down) / (2.0 * opts.eps);
      const double a = analytic[k][i];
      const double abs_err = std::abs(a - numeric);
      const double rel = abs_err / std::max({1.0, std::abs(a), std::abs(numeric)});
      report.max_abs_err = std::max(report.max_abs_err, abs_err);
      if (rel > report.max_rel_err || report.n_checked == 0) {
        report.max_rel_err = std::max(report.max_rel_err, rel);
        report.worst_input = k;
        report.worst_index = i;
      }
      ++report.n_checked;
    }
  }
  report.pass = report.max_rel_err < opts.tol;
  return report;
}

}  // namespace detail

/// Compares backward() against (f(x + eps e_i) - f(x - eps e_i)) / 2 eps for
/// every entry of every input. Relative error is |a - b| / max(1, |a|, |b|).
inline GradCheckReport grad_check(const MultiScalarFn& f, std::vector<Tensor> inputs,
                                  const GradCheckOptions& opts = {}) {
  return detail::check(f, std::move(inputs), std::nullopt, opts);
}

/// Same check for a non-scalar f, projected onto `cotangent`: compares the
/// tape's vector-Jacobian product with differences of <cotangent, f>.
inline GradCheckReport vjp_check(const MultiFn& f, std::vector<Tensor> inputs,
                                 const Tensor& cotangent, const GradCheckOptions& opts = {}) {
  return detail::check(f, std::move(inputs), cotangent, opts);
}

inline GradCheckReport grad_check(const ScalarFn& f, Tensor x, double eps = 1e-5,
                                  double tol = 1e-4) {
  GradCheckOptions opts;
  opts.eps = eps;
  opts.tol = tol;
  MultiScalarFn g = [&f](Tape& t, std::span<const Var> v) { return f(t, v[0]); };
  return grad_check(g, {std::move(x)}, opts);
}

}  // namespace stt::ad
