// SPDX-License-Identifier: Apache-2.0
//
// Dense k-order tensors of doubles and the multilinear algebra built on them:
// n-mode products, unfolding/folding, vec and Kronecker products.
//
// Layout: first index varies fastest. For a tensor of shape (I1, ..., Ik) the
// entry (i1, ..., ik) lives at i1 + I1*(i2 + I2*(i3 + ...)). Under this layout
// vec() is a no-op on the data and
//
//     vec(X x1 A1 x2 A2 ... xk Ak) == (Ak (x) ... (x) A1) vec(X).
//
// Matrix uses the same convention (column-major), so a Matrix and an order-2
// Tensor share the exact same data ordering.
//
// Mode indices are 0-based throughout.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <functional>
#include <initializer_list>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace stt {

/// Thrown when operand shapes do not conform.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

using Shape = std::vector<std::size_t>;

/// Multiply-add counter for instrumented kernels.
struct OpCount {
  std::uint64_t multiply_adds = 0;
};

inline std::size_t shape_size(std::span<const std::size_t> shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_string(std::span<const std::size_t> shape) {
  std::string out;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += 'x';
    out += std::to_string(shape[i]);
  }
  return out;
}

namespace detail {

inline void check_shape(const Shape& shape) {
  if (shape.empty()) throw ShapeError("tensor order must be at least 1");
  for (std::size_t i = 0; i < shape.size(); ++i)
    if (shape[i] == 0)
      throw ShapeError("tensor dimension " + std::to_string(i) +
                       " is zero in shape " + shape_string(shape));
}

// C(m x n) += A(m x k) * B(k x n), all column-major. Each C(i, j) accumulates
// over p in ascending order.
inline void gemm_acc(std::size_t m, std::size_t k, std::size_t n,
                     const double* a, const double* b, double* c) {
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t p = 0; p < k; ++p) {
      const double bpj = b[p + k * j];
      const double* acol = a + m * p;
      double* ccol = c + m * j;
      for (std::size_t i = 0; i < m; ++i) ccol[i] += acol[i] * bpj;
    }
}

}  // namespace detail

class Tensor {
 public:
  /// A single zero; shape {1}.
  Tensor() : shape_{1}, data_(1, 0.0) {}

  explicit Tensor(Shape shape) : shape_(std::move(shape)) {
    detail::check_shape(shape_);
    data_.assign(shape_size(shape_), 0.0);
  }

  Tensor(Shape shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    detail::check_shape(shape_);
    if (data_.size() != shape_size(shape_))
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_string(shape_));
  }

  static Tensor filled(Shape shape, double value) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), value);
    return t;
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t order() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t dim(std::size_t mode) const {
    if (mode >= shape_.size())
      throw ShapeError("mode " + std::to_string(mode) +
                       " out of range for order-" +
                       std::to_string(shape_.size()) + " tensor");
    return shape_[mode];
  }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  double& operator[](std::size_t flat) { return data_[flat]; }
  double operator[](std::size_t flat) const { return data_[flat]; }

  template <typename... Idx>
  double& operator()(Idx... idx) {
    return data_[offset({static_cast<std::size_t>(idx)...})];
  }
  template <typename... Idx>
  double operator()(Idx... idx) const {
    return data_[offset({static_cast<std::size_t>(idx)...})];
  }

  std::size_t offset(std::initializer_list<std::size_t> idx) const {
    if (idx.size() != shape_.size())
      throw ShapeError("index arity " + std::to_string(idx.size()) +
                       " does not match tensor order " +
                       std::to_string(shape_.size()));
    std::size_t off = 0, stride = 1, m = 0;
    for (std::size_t i : idx) {
      off += i * stride;
      stride *= shape_[m++];
    }
    return off;
  }

  Tensor reshaped(Shape shape) const& {
    Tensor t = *this;
    return std::move(t).reshaped(std::move(shape));
  }
  Tensor reshaped(Shape shape) && {
    detail::check_shape(shape);
    if (shape_size(shape) != data_.size())
      throw ShapeError("cannot reshape " + shape_string(shape_) + " to " +
                       shape_string(shape));
    shape_ = std::move(shape);
    return std::move(*this);
  }

  Tensor& operator+=(const Tensor& o) {
    require_same_shape(o, "+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  Tensor& operator-=(const Tensor& o) {
    require_same_shape(o, "-=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
  }
  Tensor& operator*=(double s) {
    for (double& v : data_) v *= s;
    return *this;
  }

  friend Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
  friend Tensor operator-(Tensor a, const Tensor& b) { return a -= b; }
  friend Tensor operator*(Tensor a, double s) { return a *= s; }
  friend Tensor operator*(double s, Tensor a) { return a *= s; }

  bool operator==(const Tensor&) const = default;

  void require_same_shape(const Tensor& o, std::string_view what) const {
    if (o.shape_ != shape_)
      throw ShapeError(std::string(what) + ": shape " + shape_string(shape_) +
                       " vs " + shape_string(o.shape_));
  }

 private:
  Shape shape_;
  std::vector<double> data_;
};

/// Exact bit-pattern equality of shape and data.
inline bool bitwise_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.data().data(), b.data().data(),
                     a.size() * sizeof(double)) == 0;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  a.require_same_shape(b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline double max_abs(const Tensor& a) {
  double m = 0.0;
  for (double v : a.data()) m = std::max(m, std::abs(v));
  return m;
}

/// Column-major dense matrix. Interchangeable with an order-2 Tensor.
class Matrix {
 public:
  Matrix() : Matrix(1, 1) {}
  Matrix(std::size_t rows, std::size_t cols)
      : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {
    if (rows == 0 || cols == 0)
      throw ShapeError("matrix dimensions must be positive, got " +
                       std::to_string(rows) + "x" + std::to_string(cols));
  }
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> col_major)
      : rows_(rows), cols_(cols), data_(std::move(col_major)) {
    if (rows == 0 || cols == 0)
      throw ShapeError("matrix dimensions must be positive, got " +
                       std::to_string(rows) + "x" + std::to_string(cols));
    if (data_.size() != rows * cols)
      throw ShapeError("matrix data length " + std::to_string(data_.size()) +
                       " does not match " + std::to_string(rows) + "x" +
                       std::to_string(cols));
  }

  /// Builds from row lists, e.g. from_rows({{1, 2}, {3, 4}}).
  static Matrix from_rows(
      std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    Matrix m(r, c);
    std::size_t i = 0;
    for (const auto& row : rows) {
      if (row.size() != c) throw ShapeError("ragged row list");
      std::size_t j = 0;
      for (double v : row) m(i, j++) = v;
      ++i;
    }
    return m;
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  static Matrix from_tensor(const Tensor& t) {
    if (t.order() != 2)
      throw ShapeError("matrix conversion needs an order-2 tensor, got " +
                       shape_string(t.shape()));
    return Matrix(t.shape()[0], t.shape()[1], t.values());
  }
  Tensor to_tensor() const& { return Tensor({rows_, cols_}, data_); }
  Tensor to_tensor() && {
    return Tensor({rows_, cols_}, std::move(data_));
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }

  double& operator()(std::size_t i, std::size_t j) { return data_[i + rows_ * j]; }
  double operator()(std::size_t i, std::size_t j) const {
    return data_[i + rows_ * j];
  }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_;
  std::size_t cols_;
  std::vector<double> data_;
};

inline std::string dims_string(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows())
    throw ShapeError("matmul: inner dimensions differ, " + dims_string(a) +
                     " times " + dims_string(b));
  Matrix c(a.rows(), b.cols());
  detail::gemm_acc(a.rows(), a.cols(), b.cols(), a.data().data(),
                   b.data().data(), c.data().data());
  return c;
}

inline Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t j = 0; j < a.cols(); ++j)
    for (std::size_t i = 0; i < a.rows(); ++i) t(j, i) = a(i, j);
  return t;
}

/// Matrix product of two order-2 tensors; same kernel as matmul(Matrix).
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.order() != 2 || b.order() != 2)
    throw ShapeError("matmul needs order-2 operands, got " +
                     shape_string(a.shape()) + " and " +
                     shape_string(b.shape()));
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k)
    throw ShapeError("matmul: inner dimensions differ, " +
                     shape_string(a.shape()) + " times " +
                     shape_string(b.shape()));
  Tensor c({m, n});
  detail::gemm_acc(m, k, n, a.data().data(), b.data().data(), c.data().data());
  return c;
}

inline Tensor transpose(const Tensor& a) {
  if (a.order() != 2)
    throw ShapeError("transpose needs an order-2 tensor, got " +
                     shape_string(a.shape()));
  const std::size_t r = a.shape()[0], c = a.shape()[1];
  Tensor t({c, r});
  for (std::size_t j = 0; j < c; ++j)
    for (std::size_t i = 0; i < r; ++i) t[j + c * i] = a[i + r * j];
  return t;
}

// ---------------------------------------------------------------------------
// n-mode products

/// Y = X x_mode A, with A of shape J x I_mode. Entry-wise
///   Y(i1..j..ik) = sum_i X(i1..i..ik) * A(j, i), summed in ascending i.
inline Tensor mode_n_product(const Tensor& x, const Matrix& a, std::size_t mode,
                             OpCount* count = nullptr) {
  if (mode >= x.order())
    throw ShapeError("mode_n_product: mode " + std::to_string(mode) +
                     " out of range for order-" + std::to_string(x.order()) +
                     " tensor");
  const std::size_t in = x.shape()[mode];
  if (a.cols() != in)
    throw ShapeError("mode_n_product: mode " + std::to_string(mode) +
                     " has size " + std::to_string(in) + " but matrix is " +
                     dims_string(a) + " (needs " + std::to_string(in) +
                     " columns)");
  const std::size_t out = a.rows();
  std::size_t left = 1, right = 1;
  for (std::size_t m = 0; m < mode; ++m) left *= x.shape()[m];
  for (std::size_t m = mode + 1; m < x.order(); ++m) right *= x.shape()[m];

  Shape yshape = x.shape();
  yshape[mode] = out;
  Tensor y(std::move(yshape));
  const double* xd = x.data().data();
  double* yd = y.data().data();
  for (std::size_t r = 0; r < right; ++r)
    for (std::size_t j = 0; j < out; ++j) {
      double* yrow = yd + left * (j + out * r);
      for (std::size_t i = 0; i < in; ++i) {
        const double aji = a(j, i);
        const double* xrow = xd + left * (i + in * r);
        for (std::size_t l = 0; l < left; ++l) yrow[l] += aji * xrow[l];
      }
    }
  if (count) count->multiply_adds += std::uint64_t(out) * in * left * right;
  return y;
}

/// Mode product with an order-2 tensor in place of a Matrix.
inline Tensor mode_n_product(const Tensor& x, const Tensor& a, std::size_t mode,
                             OpCount* count = nullptr) {
  return mode_n_product(x, Matrix::from_tensor(a), mode, count);
}

/// Mode-n unfolding: an I_n x (prod of other dims) matrix whose columns run
/// over the remaining indices with the lowest mode fastest.
inline Matrix unfold(const Tensor& x, std::size_t mode) {
  if (mode >= x.order())
    throw ShapeError("unfold: mode " + std::to_string(mode) +
                     " out of range for order-" + std::to_string(x.order()) +
                     " tensor");
  const std::size_t in = x.shape()[mode];
  std::size_t left = 1, right = 1;
  for (std::size_t m = 0; m < mode; ++m) left *= x.shape()[m];
  for (std::size_t m = mode + 1; m < x.order(); ++m) right *= x.shape()[m];
  Matrix u(in, left * right);
  for (std::size_t r = 0; r < right; ++r)
    for (std::size_t i = 0; i < in; ++i)
      for (std::size_t l = 0; l < left; ++l)
        u(i, l + left * r) = x[l + left * (i + in * r)];
  return u;
}

/// Inverse of unfold: rebuilds a tensor of `shape` from its mode-n unfolding.
inline Tensor fold(const Matrix& u, std::size_t mode, const Shape& shape) {
  if (mode >= shape.size())
    throw ShapeError("fold: mode " + std::to_string(mode) +
                     " out of range for shape " + shape_string(shape));
  Tensor x(shape);
  const std::size_t in = shape[mode];
  std::size_t left = 1, right = 1;
  for (std::size_t m = 0; m < mode; ++m) left *= shape[m];
  for (std::size_t m = mode + 1; m < shape.size(); ++m) right *= shape[m];
  if (u.rows() != in || u.cols() != left * right)
    throw ShapeError("fold: matrix " + dims_string(u) +
                     " does not unfold shape " + shape_string(shape) +
                     " at mode " + std::to_string(mode));
  for (std::size_t r = 0; r < right; ++r)
    for (std::size_t i = 0; i < in; ++i)
      for (std::size_t l = 0; l < left; ++l)
        x[l + left * (i + in * r)] = u(i, l + left * r);
  return x;
}

/// Column-stacking vectorization (a no-op on the first-index-fastest data).
inline Tensor vec(const Tensor& x) { return x.reshaped({x.size()}); }

inline Matrix kronecker(const Matrix& a, const Matrix& b) {
  const std::size_t br = b.rows(), bc = b.cols();
  Matrix k(a.rows() * br, a.cols() * bc);
  for (std::size_t j = 0; j < a.cols(); ++j)
    for (std::size_t q = 0; q < bc; ++q)
      for (std::size_t i = 0; i < a.rows(); ++i) {
        const double aij = a(i, j);
        for (std::size_t p = 0; p < br; ++p)
          k(i * br + p, j * bc + q) = aij * b(p, q);
      }
  return k;
}

/// X x_1 maps[0] x_2 maps[1] ... applied in the given mode order.
inline Tensor multi_mode_product(const Tensor& x, std::span<const Matrix> maps,
                                 std::span<const std::size_t> order,
                                 OpCount* count = nullptr) {
  if (maps.size() != x.order())
    throw ShapeError("multi_mode_product: " + std::to_string(maps.size()) +
                     " maps for an order-" + std::to_string(x.order()) +
                     " tensor");
  for (std::size_t m = 0; m < maps.size(); ++m)
    if (maps[m].cols() != x.shape()[m])
      throw ShapeError("multi_mode_product: mode " + std::to_string(m) +
                       " has size " + std::to_string(x.shape()[m]) +
                       " but map is " + dims_string(maps[m]));
  if (order.size() != maps.size())
    throw ShapeError("multi_mode_product: order lists " +
                     std::to_string(order.size()) + " modes, expected " +
                     std::to_string(maps.size()));
  std::vector<bool> seen(maps.size(), false);
  Tensor y = x;
  for (std::size_t m : order) {
    if (m >= maps.size() || seen[m])
      throw ShapeError("multi_mode_product: application order is not a "
                       "permutation of the modes");
    seen[m] = true;
    y = mode_n_product(y, maps[m], m, count);
  }
  return y;
}

inline Tensor multi_mode_product(const Tensor& x, std::span<const Matrix> maps,
                                 OpCount* count = nullptr) {
  std::vector<std::size_t> order(maps.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  return multi_mode_product(x, maps, order, count);
}

// ---------------------------------------------------------------------------
// Pointwise and reduction ops shared by the gradient engine and the models.

inline Tensor hadamard(const Tensor& a, const Tensor& b) {
  a.require_same_shape(b, "hadamard");
  Tensor c(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) c[i] = a[i] * b[i];
  return c;
}

inline Tensor relu(const Tensor& a) {
  Tensor c(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) c[i] = a[i] > 0.0 ? a[i] : 0.0;
  return c;
}

/// Softmax along the second index of an order-2 tensor: every row sums to 1.
inline Tensor softmax_rows(const Tensor& z) {
  if (z.order() != 2)
    throw ShapeError("softmax_rows needs an order-2 tensor, got " +
                     shape_string(z.shape()));
  const std::size_t r = z.shape()[0], c = z.shape()[1];
  Tensor s(z.shape());
  for (std::size_t i = 0; i < r; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, z[i + r * j]);
    double total = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double e = std::exp(z[i + r * j] - mx);
      s[i + r * j] = e;
      total += e;
    }
    for (std::size_t j = 0; j < c; ++j) s[i + r * j] /= total;
  }
  return s;
}

inline Matrix softmax_rows(const Matrix& z) {
  return Matrix::from_tensor(softmax_rows(z.to_tensor()));
}

inline double sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return s;
}

/// -log softmax(logits)[label] using the log-sum-exp shift.
inline double cross_entropy(const Tensor& logits, std::size_t label) {
  if (label >= logits.size())
    throw std::out_of_range("cross_entropy: label " + std::to_string(label) +
                            " out of range for " +
                            std::to_string(logits.size()) + " classes");
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : logits.data()) mx = std::max(mx, v);
  double total = 0.0;
  for (double v : logits.data()) total += std::exp(v - mx);
  return std::log(total) + mx - logits[label];
}

/// Index of the largest entry; ties go to the lowest index.
inline std::size_t argmax(const Tensor& a) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < a.size(); ++i)
    if (a[i] > a[best]) best = i;
  return best;
}

// ---------------------------------------------------------------------------
// Debug text dump: one line of dims, one line of values.

inline void write_text(std::ostream& os, const Tensor& t) {
  for (std::size_t i = 0; i < t.order(); ++i)
    os << (i ? " " : "") << t.shape()[i];
  os << '\n';
  char buf[32];
  for (std::size_t i = 0; i < t.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g", t[i]);
    os << (i ? " " : "") << buf;
  }
  os << '\n';
}

inline Tensor read_text(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw ShapeError("tensor text: missing shape line");
  std::istringstream dims(line);
  Shape shape;
  for (std::size_t d; dims >> d;) shape.push_back(d);
  if (!dims.eof()) throw ShapeError("tensor text: malformed shape line");
  detail::check_shape(shape);
  std::vector<double> data;
  data.reserve(shape_size(shape));
  if (!std::getline(is, line)) throw ShapeError("tensor text: missing value line");
  std::istringstream vals(line);
  for (double v; vals >> v;) data.push_back(v);
  return Tensor(std::move(shape), std::move(data));
}

inline std::string to_text(const Tensor& t) {
  std::ostringstream os;
  write_text(os, t);
  return os.str();
}

inline Tensor from_text(std::string_view text) {
  std::istringstream is{std::string(text)};
  return read_text(is);
}

}  // namespace stt
