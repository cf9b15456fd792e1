// SPDX-License-Identifier: Apache-2.0
//
// Minimal tape-based reverse-mode differentiation over stt::Tensor.
//
// Every primitive evaluates its forward value eagerly with the same kernel the
// pure tensor API uses, then records a node holding that value, a zeroed
// adjoint, its parents and a backward rule. Node ids are assigned in creation
// order, which is a topological order, so backward() is a single reverse
// sweep. There is no broadcasting: operands must agree exactly.
//
// A Tape and its Vars belong to one thread at a time.

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "stt/conv.hpp"
#include "stt/tensor.hpp"

namespace stt::ad {

enum class Op : std::uint8_t {
  Leaf,
  Add,
  Scale,
  Mul,
  MatMul,
  Transpose,
  ModeProduct,
  SoftmaxRows,
  Relu,
  Reshape,
  Sum,
  CrossEntropy,
  Conv2d,
  AvgPool,
  Kron,
  Stack,
};

inline constexpr std::array kPrimitiveOps = {
    Op::Add,  Op::Scale,        Op::Mul,    Op::MatMul,  Op::Transpose,
    Op::ModeProduct, Op::SoftmaxRows, Op::Relu, Op::Reshape, Op::Sum,
    Op::CrossEntropy, Op::Conv2d, Op::AvgPool, Op::Kron, Op::Stack,
};

constexpr std::string_view op_name(Op op) {
  switch (op) {
    case Op::Leaf: return "leaf";
    case Op::Add: return "add";
    case Op::Scale: return "scale";
    case Op::Mul: return "mul";
    case Op::MatMul: return "matmul";
    case Op::Transpose: return "transpose";
    case Op::ModeProduct: return "mode_product";
    case Op::SoftmaxRows: return "softmax_rows";
    case Op::Relu: return "relu";
    case Op::Reshape: return "reshape";
    case Op::Sum: return "sum";
    case Op::CrossEntropy: return "cross_entropy";
    case Op::Conv2d: return "conv2d";
    case Op::AvgPool: return "avg_pool";
    case Op::Kron: return "kron";
    case Op::Stack: return "stack";
  }
  return "?";
}

inline std::optional<Op> op_from_name(std::string_view name) {
  for (Op op : kPrimitiveOps)
    if (op_name(op) == name) return op;
  return std::nullopt;
}

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while its Tape lives.
class Var {
 public:
  Var() = default;

  bool valid() const noexcept { return tape_ != nullptr; }
  std::size_t id() const noexcept { return id_; }
  Tape* tape() const noexcept { return tape_; }

  const Tensor& value() const;
  const Tensor& grad() const;
  const Shape& shape() const { return value().shape(); }
  Op op() const;

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  struct Node {
    Tensor value;
    Tensor adjoint;
    Op op;
    std::vector<std::size_t> parents;
    bool requires_grad;
    BackwardFn backward;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = true) {
    Tensor adj(value.shape());
    nodes_.push_back(
        Node{std::move(value), std::move(adj), Op::Leaf, {}, requires_grad, {}});
    return Var(this, nodes_.size() - 1);
  }

  Var constant(Tensor value) { return leaf(std::move(value), false); }

  /// Appends a node produced by a primitive. The node needs gradients when
  /// any parent does.
  Var record(Op op, Tensor value, std::initializer_list<Var> parents,
             BackwardFn fn) {
    return record(op, std::move(value), std::span<const Var>(parents.begin(), parents.size()),
                  std::move(fn));
  }

  Var record(Op op, Tensor value, std::span<const Var> parents, BackwardFn fn) {
    std::vector<std::size_t> ids;
    bool needs = false;
    for (const Var& p : parents) {
      check_owned(p);
      ids.push_back(p.id());
      needs = needs || nodes_[p.id()].requires_grad;
    }
    Tensor adj(value.shape());
    nodes_.push_back(Node{std::move(value), std::move(adj), op, std::move(ids),
                          needs, needs ? std::move(fn) : BackwardFn{}});
    return Var(this, nodes_.size() - 1);
  }

  /// Seeds d(loss)/d(loss) = 1 and sweeps nodes in reverse creation order.
  void backward(Var loss) {
    if (!loss.valid())
      throw std::logic_error("backward called on a variable with no graph");
    check_owned(loss);
    const Shape& s = nodes_[loss.id()].value.shape();
    for (std::size_t d : s)
      if (d != 1)
        throw ShapeError("backward needs a scalar loss, got shape " + shape_string(s));
    backward(loss, Tensor::filled(s, 1.0));
  }

  /// Vector-Jacobian product: seeds the adjoint of `out` with `seed`.
  void backward(Var out, const Tensor& seed) {
    if (!out.valid())
      throw std::logic_error("backward called on a variable with no graph");
    check_owned(out);
    Node& root = nodes_[out.id()];
    root.value.require_same_shape(seed, "backward seed");
    root.adjoint += seed;
    for (std::size_t id = out.id() + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (!n.requires_grad || !n.backward) continue;
      if (fault_ && n.op == *fault_) {
        Tensor saved = n.adjoint;
        n.adjoint *= fault_factor_;
        n.backward(*this, id);
        nodes_[id].adjoint = std::move(saved);
      } else {
        n.backward(*this, id);
      }
    }
  }

  void zero_grad() {
    for (Node& n : nodes_) std::fill(n.adjoint.data().begin(), n.adjoint.data().end(), 0.0);
  }

  /// Test hook: the backward rule of `op` sees its upstream adjoint scaled
  /// by `factor`, which corrupts every gradient flowing through it.
  void inject_fault(Op op, double factor = 1.5) {
    fault_ = op;
    fault_factor_ = factor;
  }

  std::size_t size() const noexcept { return nodes_.size(); }
  const Node& node(std::size_t id) const { return nodes_[id]; }
  Node& node(std::size_t id) { return nodes_[id]; }

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  const Tensor& adjoint(std::size_t id) const { return nodes_[id].adjoint; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  /// Adds g into the adjoint of node `id` if it takes gradients.
  void accumulate(std::size_t id, const Tensor& g) {
    Node& n = nodes_[id];
    if (n.requires_grad) n.adjoint += g;
  }

  void check_owned(const Var& v) const {
    if (v.tape() != this || v.id() >= nodes_.size())
      throw std::logic_error("variable does not belong to this tape");
  }

 private:
  std::deque<Node> nodes_;
  std::optional<Op> fault_;
  double fault_factor_ = 1.0;
};

inline const Tensor& Var::value() const {
  if (!tape_) throw std::logic_error("value() on an empty variable");
  return tape_->value(id_);
}
inline const Tensor& Var::grad() const {
  if (!tape_) throw std::logic_error("grad() on an empty variable");
  return tape_->adjoint(id_);
}
inline Op Var::op() const {
  if (!tape_) throw std::logic_error("op() on an empty variable");
  return tape_->node(id_).op;
}

namespace detail {

inline Tape& tape_of(std::initializer_list<Var> vars, std::string_view what) {
  Tape* t = nullptr;
  for (const Var& v : vars) {
    if (!v.valid())
      throw std::logic_error(std::string(what) + ": empty variable operand");
    if (t && v.tape() != t)
      throw std::logic_error(std::string(what) +
                             ": operands belong to different tapes");
    t = v.tape();
  }
  return *t;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Primitives

inline Var add(Var a, Var b) {
  Tape& t = detail::tape_of({a, b}, "add");
  a.value().require_same_shape(b.value(), "add");
  return t.record(Op::Add, a.value() + b.value(), {a, b},
                  [ia = a.id(), ib = b.id()](Tape& t, std::size_t self) {
                    const Tensor& g = t.adjoint(self);
                    t.accumulate(ia, g);
                    t.accumulate(ib, g);
                  });
}

inline Var scale(Var a, double s) {
  Tape& t = detail::tape_of({a}, "scale");
  return t.record(Op::Scale, a.value() * s, {a},
                  [ia = a.id(), s](Tape& t, std::size_t self) {
                    t.accumulate(ia, t.adjoint(self) * s);
                  });
}

/// Elementwise product.
inline Var mul(Var a, Var b) {
  Tape& t = detail::tape_of({a, b}, "mul");
  return t.record(Op::Mul, hadamard(a.value(), b.value()), {a, b},
                  [ia = a.id(), ib = b.id()](Tape& t, std::size_t self) {
                    const Tensor& g = t.adjoint(self);
                    if (t.requires_grad(ia)) t.accumulate(ia, hadamard(g, t.value(ib)));
                    if (t.requires_grad(ib)) t.accumulate(ib, hadamard(g, t.value(ia)));
                  });
}

inline Var matmul(Var a, Var b) {
  Tape& t = detail::tape_of({a, b}, "matmul");
  return t.record(Op::MatMul, stt::matmul(a.value(), b.value()), {a, b},
                  [ia = a.id(), ib = b.id()](Tape& t, std::size_t self) {
                    const Tensor& g = t.adjoint(self);
                    if (t.requires_grad(ia))
                      t.accumulate(ia, stt::matmul(g, stt::transpose(t.value(ib))));
                    if (t.requires_grad(ib))
                      t.accumulate(ib, stt::matmul(stt::transpose(t.value(ia)), g));
                  });
}

inline Var transpose(Var a) {
  Tape& t = detail::tape_of({a}, "transpose");
  return t.record(Op::Transpose, stt::transpose(a.value()), {a},
                  [ia = a.id()](Tape& t, std::size_t self) {
                    t.accumulate(ia, stt::transpose(t.adjoint(self)));
                  });
}

/// x x_mode a, with a an order-2 J x I_mode variable.
inline Var mode_product(Var x, Var a, std::size_t mode) {
  Tape& t = detail::tape_of({x, a}, "mode_product");
  const Matrix am = Matrix::from_tensor(a.value());
  return t.record(
      Op::ModeProduct, stt::mode_n_product(x.value(), am, mode), {x, a},
      [ix = x.id(), ia = a.id(), mode](Tape& t, std::size_t self) {
        const Tensor& g = t.adjoint(self);
        const Matrix am = Matrix::from_tensor(t.value(ia));
        if (t.requires_grad(ix))
          t.accumulate(ix, stt::mode_n_product(g, stt::transpose(am), mode));
        if (t.requires_grad(ia)) {
          const Matrix ga = stt::matmul(stt::unfold(g, mode),
                                        stt::transpose(stt::unfold(t.value(ix), mode)));
          t.accumulate(ia, ga.to_tensor());
        }
      });
}

/// Softmax along the second index of an order-2 variable.
inline Var softmax_rows(Var z) {
  Tape& t = detail::tape_of({z}, "softmax_rows");
  return t.record(Op::SoftmaxRows, stt::softmax_rows(z.value()), {z},
                  [iz = z.id()](Tape& t, std::size_t self) {
                    const Tensor& g = t.adjoint(self);
                    const Tensor& s = t.value(self);
                    const std::size_t r = s.shape()[0], c = s.shape()[1];
                    Tensor gz(s.shape());
                    for (std::size_t i = 0; i < r; ++i) {
                      double dot = 0.0;
                      for (std::size_t j = 0; j < c; ++j) dot += g[i + r * j] * s[i + r * j];
                      for (std::size_t j = 0; j < c; ++j)
                        gz[i + r * j] = s[i + r * j] * (g[i + r * j] - dot);
                    }
                    t.accumulate(iz, gz);
                  });
}

inline Var relu(Var a) {
  Tape& t = detail::tape_of({a}, "relu");
  return t.record(Op::Relu, stt::relu(a.value()), {a},
                  [ia = a.id()](Tape& t, std::size_t self) {
                    const Tensor& g = t.adjoint(self);
                    const Tensor& x = t.value(ia);
                    Tensor gx(x.shape());
                    for (std::size_t i = 0; i < x.size(); ++i)
                      gx[i] = x[i] > 0.0 ? g[i] : 0.0;
                    t.accumulate(ia, gx);
                  });
}

inline Var reshape(Var a, Shape shape) {
  Tape& t = detail::tape_of({a}, "reshape");
  return t.record(Op::Reshape, a.value().reshaped(std::move(shape)), {a},
                  [ia = a.id()](Tape& t, std::size_t self) {
                    t.accumulate(ia, t.adjoint(self).reshaped(t.value(ia).shape()));
                  });
}

/// Sum of all entries as a shape-{1} tensor.
inline Var sum(Var a) {
  Tape& t = detail::tape_of({a}, "sum");
  return t.record(Op::Sum, Tensor({1}, {stt::sum(a.value())}), {a},
                  [ia = a.id()](Tape& t, std::size_t self) {
                    const double g = t.adjoint(self)[0];
                    t.accumulate(ia, Tensor::filled(t.value(ia).shape(), g));
                  });
}

/// Softmax cross-entropy of flat logits against `label`, as shape {1}.
inline Var cross_entropy(Var logits, std::size_t label) {
  Tape& t = detail::tape_of({logits}, "cross_entropy");
  const double loss = stt::cross_entropy(logits.value(), label);
  return t.record(Op::CrossEntropy, Tensor({1}, {loss}), {logits},
                  [il = logits.id(), label](Tape& t, std::size_t self) {
                    const double g = t.adjoint(self)[0];
                    const Tensor& z = t.value(il);
                    const Tensor p =
                        stt::softmax_rows(z.reshaped({1, z.size()})).reshaped(z.shape());
                    Tensor gz(z.shape());
                    for (std::size_t k = 0; k < z.size(); ++k)
                      gz[k] = g * (p[k] - (k == label ? 1.0 : 0.0));
                    t.accumulate(il, gz);
                  });
}

inline Var conv2d(Var x, Var kernels, Var bias, std::size_t stride = 1) {
  Tape& t = detail::tape_of({x, kernels, bias}, "conv2d");
  return t.record(
      Op::Conv2d, stt::conv2d(x.value(), kernels.value(), bias.value(), stride),
      {x, kernels, bias},
      [ix = x.id(), ik = kernels.id(), ib = bias.id(), stride](Tape& t, std::size_t self) {
        Tensor* gx = t.requires_grad(ix) ? &t.node(ix).adjoint : nullptr;
        Tensor* gk = t.requires_grad(ik) ? &t.node(ik).adjoint : nullptr;
        Tensor* gb = t.requires_grad(ib) ? &t.node(ib).adjoint : nullptr;
        stt::conv2d_backward(t.value(ix), t.value(ik), t.value(ib), stride,
                             t.adjoint(self), gx, gk, gb);
      });
}

inline Var avg_pool(Var x, std::size_t window) {
  Tape& t = detail::tape_of({x}, "avg_pool");
  return t.record(Op::AvgPool, stt::avg_pool(x.value(), window), {x},
                  [ix = x.id(), window](Tape& t, std::size_t self) {
                    if (!t.requires_grad(ix)) return;
                    stt::avg_pool_backward(t.value(ix).shape(), window,
                                           t.adjoint(self), t.node(ix).adjoint);
                  });
}

/// Kronecker product of two order-2 variables.
inline Var kron(Var a, Var b) {
  Tape& t = detail::tape_of({a, b}, "kron");
  const Matrix am = Matrix::from_tensor(a.value());
  const Matrix bm = Matrix::from_tensor(b.value());
  return t.record(
      Op::Kron, stt::kronecker(am, bm).to_tensor(), {a, b},
      [ia = a.id(), ib = b.id()](Tape& t, std::size_t self) {
        const Matrix g = Matrix::from_tensor(t.adjoint(self));
        const Matrix am = Matrix::from_tensor(t.value(ia));
        const Matrix bm = Matrix::from_tensor(t.value(ib));
        const std::size_t br = bm.rows(), bc = bm.cols();
        Matrix ga(am.rows(), am.cols()), gb(br, bc);
        for (std::size_t j = 0; j < am.cols(); ++j)
          for (std::size_t i = 0; i < am.rows(); ++i)
            for (std::size_t q = 0; q < bc; ++q)
              for (std::size_t p = 0; p < br; ++p) {
                const double gv = g(i * br + p, j * bc + q);
                ga(i, j) += gv * bm(p, q);
                gb(p, q) += gv * am(i, j);
              }
        t.accumulate(ia, ga.to_tensor());
        t.accumulate(ib, gb.to_tensor());
      });
}

/// Stacks equally shaped variables along a new trailing mode.
inline Var stack(std::span<const Var> xs) {
  if (xs.empty()) throw ShapeError("stack needs at least one operand");
  Tape* t = xs.front().tape();
  if (!t) throw std::logic_error("stack: empty variable operand");
  const Shape& s = xs.front().value().shape();
  const std::size_t n = xs.front().value().size();
  std::vector<double> data;
  data.reserve(n * xs.size());
  for (const Var& x : xs) {
    if (x.tape() != t) throw std::logic_error("stack: operands belong to different tapes");
    x.value().require_same_shape(xs.front().value(), "stack");
    data.insert(data.end(), x.value().data().begin(), x.value().data().end());
  }
  Shape out = s;
  out.push_back(xs.size());
  std::vector<std::size_t> ids;
  for (const Var& x : xs) ids.push_back(x.id());
  return t->record(Op::Stack, Tensor(std::move(out), std::move(data)), xs,
                   [ids = std::move(ids), n, s](Tape& t, std::size_t self) {
                     const Tensor& g = t.adjoint(self);
                     for (std::size_t k = 0; k < ids.size(); ++k) {
                       if (!t.requires_grad(ids[k])) continue;
                       std::vector<double> part(g.data().begin() + k * n,
                                                g.data().begin() + (k + 1) * n);
                       t.accumulate(ids[k], Tensor(s, std::move(part)));
                     }
                   });
}

/// x x_mode (F1 (x) ... (x) FN) for factor variables F1..FN, evaluated
/// factor by factor without forming the Kronecker product.
inline Var kron_mode_product(Var x, std::span<const Var> factors,
                             std::size_t mode) {
  if (factors.empty()) throw ShapeError("kron_mode_product needs factors");
  const Shape& xs = x.value().shape();
  if (mode >= xs.size())
    throw ShapeError("kron_mode_product: mode " + std::to_string(mode) +
                     " out of range for shape " + shape_string(xs));
  std::size_t in = 1, out = 1;
  for (const Var& f : factors) {
    if (f.value().order() != 2)
      throw ShapeError("kron_mode_product: factors must be matrices");
    out *= f.value().shape()[0];
    in *= f.value().shape()[1];
  }
  if (xs[mode] != in)
    throw ShapeError("kron_mode_product: mode " + std::to_string(mode) +
                     " has size " + std::to_string(xs[mode]) +
                     " but factors expect " + std::to_string(in));
  const std::size_t n = factors.size();
  Shape expanded(xs.begin(), xs.begin() + mode);
  for (std::size_t k = n; k-- > 0;) expanded.push_back(factors[k].value().shape()[1]);
  expanded.insert(expanded.end(), xs.begin() + mode + 1, xs.end());
  Shape final_shape = xs;
  final_shape[mode] = out;

  Var y = reshape(x, std::move(expanded));
  for (std::size_t k = 0; k < n; ++k) y = mode_product(y, factors[n - 1 - k], mode + k);
  return reshape(y, std::move(final_shape));
}

}  // namespace stt::ad
