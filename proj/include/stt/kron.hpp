// SPDX-License-Identifier: Apache-2.0
//
// Implicit Kronecker-factored linear maps A1 (x) A2 (x) ... (x) AN.
//
// Factors are stored in materialization order. apply() never forms the full
// matrix: the input is reshaped to a tensor of shape (bN, ..., b1) and each
// factor acts on its own mode, which by the vec/Kronecker identity equals
// multiplying by the materialized matrix.

#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <span>
#include <utility>
#include <vector>

#include "stt/tensor.hpp"

namespace stt {

/// Raised when materializing would exceed the configured entry budget.
class GuardLimitError : public std::length_error {
 public:
  using std::length_error::length_error;
};

class KroneckerFactoredMap {
 public:
  static constexpr std::size_t kDefaultGuardLimit = 100'000'000;

  explicit KroneckerFactoredMap(std::vector<Matrix> factors)
      : factors_(std::move(factors)) {
    if (factors_.empty())
      throw ShapeError("a Kronecker-factored map needs at least one factor");
    out_dim_ = in_dim_ = 1;
    for (const Matrix& f : factors_) {
      out_dim_ *= f.rows();
      in_dim_ *= f.cols();
    }
  }

  const std::vector<Matrix>& factors() const noexcept { return factors_; }
  std::size_t out_dim() const noexcept { return out_dim_; }
  std::size_t in_dim() const noexcept { return in_dim_; }

  std::size_t param_count() const noexcept {
    std::size_t n = 0;
    for (const Matrix& f : factors_) n += f.size();
    return n;
  }

  Matrix materialize(std::size_t guard_limit = kDefaultGuardLimit) const {
    if (out_dim_ > guard_limit / in_dim_)
      throw GuardLimitError("materializing a " + std::to_string(out_dim_) +
                            "x" + std::to_string(in_dim_) +
                            " Kronecker map exceeds the guard limit of " +
                            std::to_string(guard_limit) + " entries");
    Matrix m = factors_.front();
    for (std::size_t i = 1; i < factors_.size(); ++i)
      m = kronecker(m, factors_[i]);
    return m;
  }

  /// y = (A1 (x) ... (x) AN) x without materializing.
  std::vector<double> apply(std::span<const double> x,
                            OpCount* count = nullptr) const {
    if (x.size() != in_dim_)
      throw ShapeError("Kronecker apply: input length " +
                       std::to_string(x.size()) + " but map expects " +
                       std::to_string(in_dim_));
    Tensor t({in_dim_}, std::vector<double>(x.begin(), x.end()));
    Tensor y = mode_product(t, 0, count);
    return std::vector<double>(y.data().begin(), y.data().end());
  }

  /// X x_mode (A1 (x) ... (x) AN), applied factor by factor.
  Tensor mode_product(const Tensor& x, std::size_t mode,
                      OpCount* count = nullptr) const {
    if (mode >= x.order())
      throw ShapeError("Kronecker mode product: mode " + std::to_string(mode) +
                       " out of range for order-" + std::to_string(x.order()) +
                       " tensor");
    if (x.shape()[mode] != in_dim_)
      throw ShapeError("Kronecker mode product: mode " + std::to_string(mode) +
                       " has size " + std::to_string(x.shape()[mode]) +
                       " but map expects " + std::to_string(in_dim_));
    const std::size_t n = factors_.size();
    Shape expanded(x.shape().begin(), x.shape().begin() + mode);
    for (std::size_t k = n; k-- > 0;) expanded.push_back(factors_[k].cols());
    expanded.insert(expanded.end(), x.shape().begin() + mode + 1,
                    x.shape().end());

    Tensor y = x.reshaped(expanded);
    for (std::size_t k = 0; k < n; ++k)
      y = mode_n_product(y, factors_[n - 1 - k], mode + k, count);

    Shape out(x.shape());
    out[mode] = out_dim_;
    return std::move(y).reshaped(std::move(out));
  }

 private:
  std::vector<Matrix> factors_;
  std::size_t out_dim_ = 1;
  std::size_t in_dim_ = 1;
};

/// Splits n into `parts` factors as evenly as possible, ascending.
/// Prime factors are dealt largest-first to the currently smallest bin.
inline std::vector<std::size_t> balanced_split(std::size_t n,
                                               std::size_t parts) {
  if (n == 0 || parts == 0)
    throw std::invalid_argument("balanced_split needs positive arguments");
  std::vector<std::size_t> primes;
  for (std::size_t p = 2, m = n; m > 1;) {
    if (p * p > m) {
      primes.push_back(m);
      break;
    }
    if (m % p == 0) {
      primes.push_back(p);
      m /= p;
    } else {
      ++p;
    }
  }
  std::vector<std::size_t> bins(parts, 1);
  for (auto it = primes.rbegin(); it != primes.rend(); ++it)
    *std::min_element(bins.begin(), bins.end()) *= *it;
  std::sort(bins.begin(), bins.end());
  return bins;
}

struct FactorShape {
  std::size_t rows;
  std::size_t cols;
  bool operator==(const FactorShape&) const = default;
};

/// Factor shapes for an out x in map split into `parts` Kronecker factors.
/// With more than one part, every factor must hold more than one entry;
/// otherwise the dimensions are not factorable and a config error results.
inline std::vector<FactorShape> factor_shapes(std::size_t out, std::size_t in,
                                              std::size_t parts) {
  const auto rows = balanced_split(out, parts);
  const auto cols = balanced_split(in, parts);
  std::vector<FactorShape> shapes;
  for (std::size_t i = 0; i < parts; ++i) shapes.push_back({rows[i], cols[i]});
  if (parts > 1)
    for (const FactorShape& s : shapes)
      if (s.rows * s.cols < 2)
        throw std::invalid_argument(
            "a " + std::to_string(out) + "x" + std::to_string(in) +
            " map cannot be split into " + std::to_string(parts) +
            " non-trivial Kronecker factors");
  return shapes;
}

}  // namespace stt
