// Copyright 2026 The Prefrac Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "prefrac/common.hpp"

namespace prefrac::ad {

// Dense row-major tensor of 64-bit reals.
class Tensor {
 public:
  Tensor() = default;

  Tensor(std::vector<std::size_t> shape, std::vector<double> data, bool requires_grad = false)
      : shape_(std::move(shape)), data_(std::move(data)), requires_grad_(requires_grad) {
    if (numel_of(shape_) != data_.size())
      throw ShapeError("Tensor: shape does not match data length");
  }

  static std::size_t numel_of(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
  }

  static Tensor zeros(std::vector<std::size_t> shape, bool requires_grad = false) {
    std::size_t n = numel_of(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
  }

  static Tensor full(std::vector<std::size_t> shape, double v, bool requires_grad = false) {
    std::size_t n = numel_of(shape);
    return Tensor(std::move(shape), std::vector<double>(n, v), requires_grad);
  }

  static Tensor scalar(double v, bool requires_grad = false) {
    return Tensor({}, {v}, requires_grad);
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t numel() const { return data_.size(); }
  const std::vector<double>& data() const { return data_; }
  std::vector<double>& data() { return data_; }
  bool requires_grad() const { return requires_grad_; }
  void set_requires_grad(bool b) { requires_grad_ = b; }

  bool is_matrix() const { return shape_.size() == 2; }
  std::size_t rows() const {
    require_matrix("rows");
    return shape_[0];
  }
  std::size_t cols() const {
    require_matrix("cols");
    return shape_[1];
  }
  double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

  double item() const {
    if (numel() != 1) throw ContractError("Tensor::item: tensor is not a scalar");
    return data_[0];
  }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

 private:
  void require_matrix(const char* what) const {
    if (!is_matrix()) throw ShapeError(std::string("Tensor::") + what + ": tensor is not 2-D");
  }

  std::vector<std::size_t> shape_;
  std::vector<double> data_;
  bool requires_grad_ = false;
};

class Tape;

// Handle to a node on a tape.
struct Var {
  Tape* tape = nullptr;
  int id = -1;
  const Tensor& value() const;
};

namespace detail {
inline void matmul_raw(const double* a, std::size_t m, std::size_t n, const double* b,
                       std::size_t p, double* out) {
  std::fill(out, out + m * p, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * n;
    double* orow = out + i * p;
    for (std::size_t k = 0; k < n; ++k) {
      const double aik = arow[k];
      if (aik == 0.0) continue;
      const double* brow = b + k * p;
      for (std::size_t j = 0; j < p; ++j) orow[j] += aik * brow[j];
    }
  }
}
}  // namespace detail

// Record of one forward pass. Nodes are appended in execution order, so
// operands always precede their consumers; the backward sweep walks the
// record once in reverse. A tape is built fresh for every forward pass.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor t) {
    const bool req = t.requires_grad();
    return push(std::move(t), -1, -1, req, nullptr);
  }

  Var constant(Tensor t) {
    t.set_requires_grad(false);
    return push(std::move(t), -1, -1, false, nullptr);
  }

  const Tensor& value(Var v) const { return nodes_[check(v)].value; }

  Tensor grad(Var v) const {
    const Node& n = nodes_[check(v)];
    if (!n.requires_grad) throw ContractError("Tape::grad: node does not track gradients");
    if (!backward_done_) throw ContractError("Tape::grad: backward has not run");
    return Tensor(n.value.shape(), grads_[v.id]);
  }

  // Seeds d(loss)/d(loss) = 1 and propagates through the record in reverse.
  // A tape can only be differentiated once; rebuild it for another pass.
  void backward(Var loss) {
    std::size_t id = check(loss);
    if (nodes_[id].value.numel() != 1)
      throw ContractError("Tape::backward: loss must be a scalar tensor");
    if (backward_done_) throw ContractError("Tape::backward: tape already differentiated");
    backward_done_ = true;
    if (!nodes_[id].requires_grad) return;
    grads_[id][0] = 1.0;
    for (std::size_t i = nodes_.size(); i-- > 0;) {
      const Node& n = nodes_[i];
      if (n.requires_grad && n.back) n.back(*this, static_cast<int>(i));
    }
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      for (double g : grads_[i])
        if (!std::isfinite(g)) throw OverflowError("Tape::backward: non-finite gradient");
    }
  }

  std::size_t size() const { return nodes_.size(); }

  // Internal plumbing shared by the op definitions below.
  using BackwardFn = std::function<void(Tape&, int)>;

  Var push(Tensor value, int p0, int p1, bool requires_grad, BackwardFn back) {
    Node n;
    n.value = std::move(value);
    n.p0 = p0;
    n.p1 = p1;
    n.requires_grad = requires_grad;
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    grads_.emplace_back();
    if (requires_grad) grads_.back().assign(nodes_.back().value.numel(), 0.0);
    return Var{this, static_cast<int>(nodes_.size() - 1)};
  }

  const Tensor& value_of(int id) const { return nodes_[id].value; }
  std::vector<double>& grad_of(int id) { return grads_[id]; }
  bool tracks(int id) const { return nodes_[id].requires_grad; }
  int parent0(int id) const { return nodes_[id].p0; }
  int parent1(int id) const { return nodes_[id].p1; }

 private:
  struct Node {
    Tensor value;
    int p0 = -1;
    int p1 = -1;
    bool requires_grad = false;
    BackwardFn back;
  };

  std::size_t check(Var v) const {
    if (v.tape != this || v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size())
      throw ContractError("Tape: variable does not belong to this tape");
    return static_cast<std::size_t>(v.id);
  }

  std::vector<Node> nodes_;
  std::vector<std::vector<double>> grads_;
  bool backward_done_ = false;
};

inline const Tensor& Var::value() const {
  if (!tape) throw ContractError("Var: empty handle");
  return tape->value(*this);
}

namespace detail {

inline Tape& same_tape(Var a, Var b, const char* op) {
  if (!a.tape || a.tape != b.tape)
    throw ContractError(std::string(op) + ": operands are on different tapes");
  return *a.tape;
}

inline void require_finite(const Tensor& t, const char* op) {
  if (!t.all_finite()) throw OverflowError(std::string(op) + ": non-finite result");
}

inline Var emit(Tape& t, Tensor out, int p0, int p1, Tape::BackwardFn back, const char* op) {
  require_finite(out, op);
  bool req = (p0 >= 0 && t.tracks(p0)) || (p1 >= 0 && t.tracks(p1));
  return t.push(std::move(out), p0, p1, req, req ? std::move(back) : Tape::BackwardFn());
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) throw ShapeError(std::string(op) + ": shapes differ");
}

}  // namespace detail

// ---- elementwise binary ----

inline Var add(Var a, Var b) {
  Tape& t = detail::same_tape(a, b, "add");
  const Tensor &ta = t.value(a), &tb = t.value(b);
  detail::require_same_shape(ta, tb, "add");
  Tensor out = ta;
  for (std::size_t i = 0; i < out.numel(); ++i) out.data()[i] += tb.data()[i];
  auto back = [](Tape& t, int self) {
    const auto& g = t.grad_of(self);
    for (int p : {t.parent0(self), t.parent1(self)}) {
      if (p < 0 || !t.tracks(p)) continue;
      auto& gp = t.grad_of(p);
      for (std::size_t i = 0; i < g.size(); ++i) gp[i] += g[i];
    }
  };
  return detail::emit(t, std::move(out), a.id, b.id, back, "add");
}

inline Var sub(Var a, Var b) {
  Tape& t = detail::same_tape(a, b, "sub");
  const Tensor &ta = t.value(a), &tb = t.value(b);
  detail::require_same_shape(ta, tb, "sub");
  Tensor out = ta;
  for (std::size_t i = 0; i < out.numel(); ++i) out.data()[i] -= tb.data()[i];
  auto back = [](Tape& t, int self) {
    const auto& g = t.grad_of(self);
    int pa = t.parent0(self), pb = t.parent1(self);
    if (t.tracks(pa)) {
      auto& gp = t.grad_of(pa);
      for (std::size_t i = 0; i < g.size(); ++i) gp[i] += g[i];
    }
    if (t.tracks(pb)) {
      auto& gp = t.grad_of(pb);
      for (std::size_t i = 0; i < g.size(); ++i) gp[i] -= g[i];
    }
  };
  return detail::emit(t, std::move(out), a.id, b.id, back, "sub");
}

inline Var mul(Var a, Var b) {
  Tape& t = detail::same_tape(a, b, "mul");
  const Tensor &ta = t.value(a), &tb = t.value(b);
  detail::require_same_shape(ta, tb, "mul");
  Tensor out = ta;
  for (std::size_t i = 0; i < out.numel(); ++i) out.data()[i] *= tb.data()[i];
  auto back = [](Tape& t, int self) {
    const auto& g = t.grad_of(self);
    int pa = t.parent0(self), pb = t.parent1(self);
    const auto& va = t.value_of(pa).data();
    const auto& vb = t.value_of(pb).data();
    if (t.tracks(pa)) {
      auto& gp = t.grad_of(pa);
      for (std::size_t i = 0; i < g.size(); ++i) gp[i] += g[i] * vb[i];
    }
    if (t.tracks(pb)) {
      auto& gp = t.grad_of(pb);
      for (std::size_t i = 0; i < g.size(); ++i) gp[i] += g[i] * va[i];
    }
  };
  return detail::emit(t, std::move(out), a.id, b.id, back, "mul");
}

// ---- elementwise unary ----

inline Var scalar_mul(Var a, double c) {
  Tape& t = *a.tape;
  Tensor out = t.value(a);
  for (double& v : out.data()) v *= c;
  auto back = [c](Tape& t, int self) {
    int p = t.parent0(self);
    if (!t.tracks(p)) return;
    const auto& g = t.grad_of(self);
    auto& gp = t.grad_of(p);
    for (std::size_t i = 0; i < g.size(); ++i) gp[i] += c * g[i];
  };
  return detail::emit(t, std::move(out), a.id, -1, back, "scalar_mul");
}

inline Var add_scalar(Var a, double c) {
  Tape& t = *a.tape;
  Tensor out = t.value(a);
  for (double& v : out.data()) v += c;
  auto back = [](Tape& t, int self) {
    int p = t.parent0(self);
    if (!t.tracks(p)) return;
    const auto& g = t.grad_of(self);
    auto& gp = t.grad_of(p);
    for (std::size_t i = 0; i < g.size(); ++i) gp[i] += g[i];
  };
  return detail::emit(t, std::move(out), a.id, -1, back, "add_scalar");
}

inline Var log(Var a) {
  Tape& t = *a.tape;
  Tensor out = t.value(a);
  for (double& v : out.data()) v = std::log(v);
  auto back = [](Tape& t, int self) {
    int p = t.parent0(self);
    if (!t.tracks(p)) return;
    const auto& g = t.grad_of(self);
    const auto& x = t.value_of(p).data();
    auto& gp = t.grad_of(p);
    for (std::size_t i = 0; i < g.size(); ++i) gp[i] += g[i] / x[i];
  };
  return detail::emit(t, std::move(out), a.id, -1, back, "log");
}

inline Var tanh(Var a) {
  Tape& t = *a.tape;
  Tensor out = t.value(a);
  for (double& v : out.data()) v = std::tanh(v);
  auto back = [](Tape& t, int self) {
    int p = t.parent0(self);
    if (!t.tracks(p)) return;
    const auto& g = t.grad_of(self);
    const auto& y = t.value_of(self).data();
    auto& gp = t.grad_of(p);
    for (std::size_t i = 0; i < g.size(); ++i) gp[i] += g[i] * (1.0 - y[i] * y[i]);
  };
  return detail::emit(t, std::move(out), a.id, -1, back, "tanh");
}

// Gradient is identity inside [lo, hi] (boundary included) and zero outside.
inline Var clamp(Var a, double lo, double hi) {
  if (!(lo < hi)) throw ContractError("clamp: lo must be < hi");
  Tape& t = *a.tape;
  Tensor out = t.value(a);
  for (double& v : out.data()) v = std::min(hi, std::max(lo, v));
  auto back = [lo, hi](Tape& t, int self) {
    int p = t.parent0(self);
    if (!t.tracks(p)) return;
    const auto& g = t.grad_of(self);
    const auto& x = t.value_of(p).data();
    auto& gp = t.grad_of(p);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (x[i] >= lo && x[i] <= hi) gp[i] += g[i];
  };
  return detail::emit(t, std::move(out), a.id, -1, back, "clamp");
}

// ---- matrix ops ----

inline Var matmul(Var a, Var b) {
  Tape& t = detail::same_tape(a, b, "matmul");
  const Tensor &ta = t.value(a), &tb = t.value(b);
  if (!ta.is_matrix() || !tb.is_matrix()) throw ShapeError("matmul: operands must be 2-D");
  if (ta.cols() != tb.rows())
    throw ShapeError("matmul: inner dimensions disagree (" + std::to_string(ta.cols()) + " vs " +
                     std::to_string(tb.rows()) + ")");
  const std::size_t m = ta.rows(), n = ta.cols(), p = tb.cols();
  Tensor out = Tensor::zeros({m, p});
  detail::matmul_raw(ta.data().data(), m, n, tb.data().data(), p, out.data().data());
  auto back = [m, n, p](Tape& t, int self) {
    const auto& g = t.grad_of(self);
    int pa = t.parent0(self), pb = t.parent1(self);
    const auto& va = t.value_of(pa).data();
    const auto& vb = t.value_of(pb).data();
    if (t.tracks(pa)) {
      // dA += G * B^T
      auto& gp = t.grad_of(pa);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < p; ++j) {
          const double gij = g[i * p + j];
          if (gij == 0.0) continue;
          for (std::size_t k = 0; k < n; ++k) gp[i * n + k] += gij * vb[k * p + j];
        }
    }
    if (t.tracks(pb)) {
      // dB += A^T * G
      auto& gp = t.grad_of(pb);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t k = 0; k < n; ++k) {
          const double aik = va[i * n + k];
          if (aik == 0.0) continue;
          for (std::size_t j = 0; j < p; ++j) gp[k * p + j] += aik * g[i * p + j];
        }
    }
  };
  return detail::emit(t, std::move(out), a.id, b.id, back, "matmul");
}

inline Var transpose(Var a) {
  Tape& t = *a.tape;
  const Tensor& ta = t.value(a);
  if (!ta.is_matrix()) throw ShapeError("transpose: operand must be 2-D");
  const std::size_t r = ta.rows(), c = ta.cols();
  Tensor out = Tensor::zeros({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out.data()[j * r + i] = ta.data()[i * c + j];
  auto back = [r, c](Tape& t, int self) {
    int p = t.parent0(self);
    if (!t.tracks(p)) return;
    const auto& g = t.grad_of(self);
    auto& gp = t.grad_of(p);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) gp[i * c + j] += g[j * r + i];
  };
  return detail::emit(t, std::move(out), a.id, -1, back, "transpose");
}

// Row-wise softmax with per-row max subtraction.
inline Var softmax_rows(Var a) {
  Tape& t = *a.tape;
  const Tensor& ta = t.value(a);
  if (!ta.is_matrix()) throw ShapeError("softmax_rows: operand must be 2-D");
  const std::size_t r = ta.rows(), c = ta.cols();
  Tensor out = Tensor::zeros({r, c});
  for (std::size_t i = 0; i < r; ++i) {
    double mx = ta.at(i, 0);
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, ta.at(i, j));
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      double e = std::exp(ta.at(i, j) - mx);
      out.at(i, j) = e;
      s += e;
    }
    for (std::size_t j = 0; j < c; ++j) out.at(i, j) /= s;
  }
  auto back = [r, c](Tape& t, int self) {
    int p = t.parent0(self);
    if (!t.tracks(p)) return;
    const auto& g = t.grad_of(self);
    const auto& y = t.value_of(self).data();
    auto& gp = t.grad_of(p);
    for (std::size_t i = 0; i < r; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += g[i * c + j] * y[i * c + j];
      for (std::size_t j = 0; j < c; ++j)
        gp[i * c + j] += y[i * c + j] * (g[i * c + j] - dot);
    }
  };
  return detail::emit(t, std::move(out), a.id, -1, back, "softmax_rows");
}

// ---- reductions ----

inline Var sum(Var a) {
  Tape& t = *a.tape;
  const Tensor& ta = t.value(a);
  double s = std::accumulate(ta.data().begin(), ta.data().end(), 0.0);
  auto back = [](Tape& t, int self) {
    int p = t.parent0(self);
    if (!t.tracks(p)) return;
    const double g = t.grad_of(self)[0];
    auto& gp = t.grad_of(p);
    for (double& v : gp) v += g;
  };
  return detail::emit(t, Tensor::scalar(s), a.id, -1, back, "sum");
}

inline Var mean(Var a) {
  Tape& t = *a.tape;
  const Tensor& ta = t.value(a);
  if (ta.numel() == 0) throw ContractError("mean: empty tensor");
  const double inv = 1.0 / static_cast<double>(ta.numel());
  double s = std::accumulate(ta.data().begin(), ta.data().end(), 0.0) * inv;
  auto back = [inv](Tape& t, int self) {
    int p = t.parent0(self);
    if (!t.tracks(p)) return;
    const double g = t.grad_of(self)[0] * inv;
    auto& gp = t.grad_of(p);
    for (double& v : gp) v += g;
  };
  return detail::emit(t, Tensor::scalar(s), a.id, -1, back, "mean");
}

// ---- structural ops ----

inline Var reshape(Var a, std::vector<std::size_t> shape) {
  Tape& t = *a.tape;
  const Tensor& ta = t.value(a);
  if (Tensor::numel_of(shape) != ta.numel()) throw ShapeError("reshape: element count differs");
  Tensor out(std::move(shape), ta.data());
  auto back = [](Tape& t, int self) {
    int p = t.parent0(self);
    if (!t.tracks(p)) return;
    const auto& g = t.grad_of(self);
    auto& gp = t.grad_of(p);
    for (std::size_t i = 0; i < g.size(); ++i) gp[i] += g[i];
  };
  return detail::emit(t, std::move(out), a.id, -1, back, "reshape");
}

inline Var concat_cols(Var a, Var b) {
  Tape& t = detail::same_tape(a, b, "concat_cols");
  const Tensor &ta = t.value(a), &tb = t.value(b);
  if (!ta.is_matrix() || !tb.is_matrix() || ta.rows() != tb.rows())
    throw ShapeError("concat_cols: operands must be 2-D with equal row counts");
  const std::size_t r = ta.rows(), ca = ta.cols(), cb = tb.cols();
  Tensor out = Tensor::zeros({r, ca + cb});
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < ca; ++j) out.at(i, j) = ta.at(i, j);
    for (std::size_t j = 0; j < cb; ++j) out.at(i, ca + j) = tb.at(i, j);
  }
  auto back = [r, ca, cb](Tape& t, int self) {
    const auto& g = t.grad_of(self);
    int pa = t.parent0(self), pb = t.parent1(self);
    if (t.tracks(pa)) {
      auto& gp = t.grad_of(pa);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < ca; ++j) gp[i * ca + j] += g[i * (ca + cb) + j];
    }
    if (t.tracks(pb)) {
      auto& gp = t.grad_of(pb);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < cb; ++j) gp[i * cb + j] += g[i * (ca + cb) + ca + j];
    }
  };
  return detail::emit(t, std::move(out), a.id, b.id, back, "concat_cols");
}

inline Var gather_rows(Var a, std::vector<int> idx) {
  Tape& t = *a.tape;
  const Tensor& ta = t.value(a);
  if (!ta.is_matrix()) throw ShapeError("gather_rows: operand must be 2-D");
  const std::size_t n = ta.rows(), c = ta.cols();
  for (int i : idx)
    if (i < 0 || static_cast<std::size_t>(i) >= n)
      throw ContractError("gather_rows: index out of range");
  Tensor out = Tensor::zeros({idx.size(), c});
  for (std::size_t r = 0; r < idx.size(); ++r)
    for (std::size_t j = 0; j < c; ++j) out.at(r, j) = ta.at(static_cast<std::size_t>(idx[r]), j);
  auto back = [idx = std::move(idx), c](Tape& t, int self) {
    int p = t.parent0(self);
    if (!t.tracks(p)) return;
    const auto& g = t.grad_of(self);
    auto& gp = t.grad_of(p);
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t j = 0; j < c; ++j)
        gp[static_cast<std::size_t>(idx[r]) * c + j] += g[r * c + j];
  };
  return detail::emit(t, std::move(out), a.id, -1, std::move(back), "gather_rows");
}

inline Var slice_cols(Var a, std::size_t c0, std::size_t c1) {
  Tape& t = *a.tape;
  const Tensor& ta = t.value(a);
  if (!ta.is_matrix()) throw ShapeError("slice_cols: operand must be 2-D");
  if (c0 >= c1 || c1 > ta.cols()) throw ContractError("slice_cols: bad column range");
  const std::size_t r = ta.rows(), c = ta.cols(), w = c1 - c0;
  Tensor out = Tensor::zeros({r, w});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < w; ++j) out.at(i, j) = ta.at(i, c0 + j);
  auto back = [r, c, c0, w](Tape& t, int self) {
    int p = t.parent0(self);
    if (!t.tracks(p)) return;
    const auto& g = t.grad_of(self);
    auto& gp = t.grad_of(p);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < w; ++j) gp[i * c + c0 + j] += g[i * w + j];
  };
  return detail::emit(t, std::move(out), a.id, -1, back, "slice_cols");
}

// x[n,c] + b[1,c], broadcast over rows.
inline Var add_rowvec(Var a, Var b) {
  Tape& t = detail::same_tape(a, b, "add_rowvec");
  const Tensor &ta = t.value(a), &tb = t.value(b);
  if (!ta.is_matrix() || !tb.is_matrix() || tb.rows() != 1 || tb.cols() != ta.cols())
    throw ShapeError("add_rowvec: expected [n,c] and [1,c]");
  const std::size_t r = ta.rows(), c = ta.cols();
  Tensor out = ta;
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out.at(i, j) += tb.data()[j];
  auto back = [r, c](Tape& t, int self) {
    const auto& g = t.grad_of(self);
    int pa = t.parent0(self), pb = t.parent1(self);
    if (t.tracks(pa)) {
      auto& gp = t.grad_of(pa);
      for (std::size_t i = 0; i < g.size(); ++i) gp[i] += g[i];
    }
    if (t.tracks(pb)) {
      auto& gp = t.grad_of(pb);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) gp[j] += g[i * c + j];
    }
  };
  return detail::emit(t, std::move(out), a.id, b.id, back, "add_rowvec");
}

// x[n,c] * w[n,1], broadcast over columns.
inline Var mul_colvec(Var a, Var b) {
  Tape& t = detail::same_tape(a, b, "mul_colvec");
  const Tensor &ta = t.value(a), &tb = t.value(b);
  if (!ta.is_matrix() || !tb.is_matrix() || tb.cols() != 1 || tb.rows() != ta.rows())
    throw ShapeError("mul_colvec: expected [n,c] and [n,1]");
  const std::size_t r = ta.rows(), c = ta.cols();
  Tensor out = ta;
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out.at(i, j) *= tb.data()[i];
  auto back = [r, c](Tape& t, int self) {
    const auto& g = t.grad_of(self);
    int pa = t.parent0(self), pb = t.parent1(self);
    const auto& va = t.value_of(pa).data();
    const auto& vb = t.value_of(pb).data();
    if (t.tracks(pa)) {
      auto& gp = t.grad_of(pa);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) gp[i * c + j] += g[i * c + j] * vb[i];
    }
    if (t.tracks(pb)) {
      auto& gp = t.grad_of(pb);
      for (std::size_t i = 0; i < r; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < c; ++j) s += g[i * c + j] * va[i * c + j];
        gp[i] += s;
      }
    }
  };
  return detail::emit(t, std::move(out), a.id, b.id, back, "mul_colvec");
}

// Sums each consecutive block of `block` rows: [m*block, c] -> [m, c].
inline Var sum_row_blocks(Var a, std::size_t block) {
  Tape& t = *a.tape;
  const Tensor& ta = t.value(a);
  if (!ta.is_matrix()) throw ShapeError("sum_row_blocks: operand must be 2-D");
  if (block == 0 || ta.rows() % block != 0)
    throw ShapeError("sum_row_blocks: row count not divisible by block");
  const std::size_t m = ta.rows() / block, c = ta.cols();
  Tensor out = Tensor::zeros({m, c});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t b = 0; b < block; ++b)
      for (std::size_t j = 0; j < c; ++j) out.at(i, j) += ta.at(i * block + b, j);
  auto back = [m, block, c](Tape& t, int self) {
    int p = t.parent0(self);
    if (!t.tracks(p)) return;
    const auto& g = t.grad_of(self);
    auto& gp = t.grad_of(p);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t b = 0; b < block; ++b)
        for (std::size_t j = 0; j < c; ++j) gp[(i * block + b) * c + j] += g[i * c + j];
  };
  return detail::emit(t, std::move(out), a.id, -1, back, "sum_row_blocks");
}

// ---- gradient verification ----

// Max over coordinates of |analytic - central difference| / max(1, |central difference|).
inline double gradcheck(const std::function<Var(Tape&, Var)>& f, const Tensor& x, double h) {
  if (h <= 0.0) throw ContractError("gradcheck: step must be positive");
  Tensor analytic;
  {
    Tape t;
    Tensor leaf_in = x;
    leaf_in.set_requires_grad(true);
    Var xv = t.leaf(leaf_in);
    Var y = f(t, xv);
    t.backward(y);
    analytic = t.grad(xv);
  }
  auto eval_at = [&](const Tensor& pt) {
    Tape t;
    Tensor leaf_in = pt;
    leaf_in.set_requires_grad(false);
    Var xv = t.leaf(leaf_in);
    Var y = f(t, xv);
    if (t.value(y).numel() != 1) throw ContractError("gradcheck: function is not scalar-valued");
    return t.value(y).item();
  };
  double worst = 0.0;
  Tensor probe = x;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double orig = x.data()[i];
    probe.data()[i] = orig + h;
    const double fp = eval_at(probe);
    probe.data()[i] = orig - h;
    const double fm = eval_at(probe);
    probe.data()[i] = orig;
    const double fd = (fp - fm) / (2.0 * h);
    const double err = std::abs(analytic.data()[i] - fd) / std::max(1.0, std::abs(fd));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace prefrac::ad
