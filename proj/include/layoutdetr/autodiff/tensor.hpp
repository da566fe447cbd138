#pragma once

// Minimal reverse-mode automatic differentiation over dense 2-D tensors.
// Every value is a [rows, cols] row-major matrix; scalars are [1, 1].
// Graph nodes are reference counted and freed with the last handle to the
// output, so a training step's graph lives exactly as long as its loss.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "layoutdetr/core/errors.hpp"
#include "layoutdetr/core/random.hpp"

namespace layoutdetr::ad {

template <class T>
struct Node {
  int rows = 0;
  int cols = 0;
  std::vector<T> value;
  std::vector<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  std::size_t size() const { return value.size(); }
  T* grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), T(0));
    return grad.data();
  }
};

inline thread_local bool grad_mode_enabled = true;

// Disables graph recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(grad_mode_enabled) { grad_mode_enabled = false; }
  ~NoGradGuard() { grad_mode_enabled = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <class T>
class Tensor {
 public:
  using NodePtr = std::shared_ptr<Node<T>>;

  Tensor() = default;
  explicit Tensor(NodePtr n) : node_(std::move(n)) {}

  static Tensor zeros(int rows, int cols) { return constant(rows, cols, std::vector<T>(std::size_t(rows) * cols, T(0))); }

  static Tensor full(int rows, int cols, T v) { return constant(rows, cols, std::vector<T>(std::size_t(rows) * cols, v)); }

  static Tensor constant(int rows, int cols, std::vector<T> values) {
    if (values.size() != std::size_t(rows) * cols) throw ShapeError("tensor: value count does not match shape");
    auto n = std::make_shared<Node<T>>();
    n->rows = rows;
    n->cols = cols;
    n->value = std::move(values);
    return Tensor(std::move(n));
  }

  template <class U>
  static Tensor from(int rows, int cols, std::span<const U> values) {
    std::vector<T> v(values.begin(), values.end());
    return constant(rows, cols, std::move(v));
  }

  static Tensor scalar(T v) { return constant(1, 1, {v}); }

  // A trainable leaf.
  static Tensor parameter(int rows, int cols, std::vector<T> values) {
    Tensor t = constant(rows, cols, std::move(values));
    t.node_->requires_grad = true;
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  int rows() const { return node_->rows; }
  int cols() const { return node_->cols; }
  std::size_t size() const { return node_->value.size(); }
  const T* data() const { return node_->value.data(); }
  T* mutable_data() { return node_->value.data(); }
  const std::vector<T>& values() const { return node_->value; }
  T at(int r, int c) const { return node_->value[std::size_t(r) * cols() + c]; }
  T item() const {
    if (size() != 1) throw ShapeError("item(): tensor is not a scalar");
    return node_->value[0];
  }
  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool v) { node_->requires_grad = v; }

  const std::vector<T>& grad() const { return node_->grad; }
  std::vector<T>& mutable_grad() { return node_->grad; }
  void zero_grad() { node_->grad.clear(); }

  Tensor detach() const { return constant(rows(), cols(), node_->value); }

  const NodePtr& node() const { return node_; }

  // Accumulates d(this)/d(leaf) into every reachable leaf's grad.
  void backward() const {
    if (size() != 1) throw ShapeError("backward(): output must be a scalar");
    if (!node_->requires_grad) return;
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    std::vector<std::pair<Node<T>*, std::size_t>> stack;
    stack.push_back({node_.get(), 0});
    seen.insert(node_.get());
    while (!stack.empty()) {
      auto& [n, i] = stack.back();
      if (i < n->parents.size()) {
        Node<T>* p = n->parents[i++].get();
        if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }
    node_->grad_buffer()[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node<T>* n = *it;
      if (n->backward && !n->grad.empty()) n->backward(*n);
    }
  }

 private:
  NodePtr node_;
};

namespace detail {

template <class T>
Tensor<T> make_result(int rows, int cols, std::vector<T> value,
                      std::initializer_list<const Tensor<T>*> inputs,
                      std::function<void(Node<T>&)> backward) {
  auto n = std::make_shared<Node<T>>();
  n->rows = rows;
  n->cols = cols;
  n->value = std::move(value);
  bool needs = false;
  if (grad_mode_enabled)
    for (const auto* in : inputs) needs = needs || in->requires_grad();
  if (needs) {
    n->requires_grad = true;
    for (const auto* in : inputs) n->parents.push_back(in->node());
    n->backward = std::move(backward);
  }
  return Tensor<T>(std::move(n));
}

template <class T>
Tensor<T> make_result_n(int rows, int cols, std::vector<T> value, const std::vector<Tensor<T>>& inputs,
                        std::function<void(Node<T>&)> backward) {
  auto n = std::make_shared<Node<T>>();
  n->rows = rows;
  n->cols = cols;
  n->value = std::move(value);
  bool needs = false;
  if (grad_mode_enabled)
    for (const auto& in : inputs) needs = needs || in.requires_grad();
  if (needs) {
    n->requires_grad = true;
    for (const auto& in : inputs) n->parents.push_back(in.node());
    n->backward = std::move(backward);
  }
  return Tensor<T>(std::move(n));
}

inline void check_same_shape(int r1, int c1, int r2, int c2, const char* op) {
  if (r1 != r2 || c1 != c2)
    throw ShapeError(std::string(op) + ": shape mismatch [" + std::to_string(r1) + "," + std::to_string(c1) +
                     "] vs [" + std::to_string(r2) + "," + std::to_string(c2) + "]");
}

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

template <class T>
bool wants_grad(const std::shared_ptr<Node<T>>& p) {
  return p->requires_grad;
}

// Elementwise unary op with derivative computed from (input, output).
template <class T, class F, class D>
Tensor<T> unary(const Tensor<T>& a, F f, D dfdx) {
  std::vector<T> out(a.size());
  const T* x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x[i]);
  return make_result<T>(a.rows(), a.cols(), std::move(out), {&a}, [dfdx](Node<T>& self) {
    auto& p = self.parents[0];
    T* g = p->grad_buffer();
    for (std::size_t i = 0; i < self.value.size(); ++i) g[i] += self.grad[i] * dfdx(p->value[i], self.value[i]);
  });
}

}  // namespace detail

// ---------------------------------------------------------------- linear algebra

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.cols() != b.rows()) throw ShapeError("matmul: inner dimensions differ");
  const int m = a.rows(), k = a.cols(), n = b.cols();
  std::vector<T> out(std::size_t(m) * n);
  detail::MapMat<T>(out.data(), m, n).noalias() =
      detail::ConstMapMat<T>(a.data(), m, k) * detail::ConstMapMat<T>(b.data(), k, n);
  return detail::make_result<T>(m, n, std::move(out), {&a, &b}, [m, k, n](Node<T>& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    detail::ConstMapMat<T> g(self.grad.data(), m, n);
    if (pa->requires_grad)
      detail::MapMat<T>(pa->grad_buffer(), m, k).noalias() += g * detail::ConstMapMat<T>(pb->value.data(), k, n).transpose();
    if (pb->requires_grad)
      detail::MapMat<T>(pb->grad_buffer(), k, n).noalias() += detail::ConstMapMat<T>(pa->value.data(), m, k).transpose() * g;
  });
}

// a * b^T
template <class T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.cols() != b.cols()) throw ShapeError("matmul_nt: inner dimensions differ");
  const int m = a.rows(), k = a.cols(), n = b.rows();
  std::vector<T> out(std::size_t(m) * n);
  detail::MapMat<T>(out.data(), m, n).noalias() =
      detail::ConstMapMat<T>(a.data(), m, k) * detail::ConstMapMat<T>(b.data(), n, k).transpose();
  return detail::make_result<T>(m, n, std::move(out), {&a, &b}, [m, k, n](Node<T>& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    detail::ConstMapMat<T> g(self.grad.data(), m, n);
    if (pa->requires_grad)
      detail::MapMat<T>(pa->grad_buffer(), m, k).noalias() += g * detail::ConstMapMat<T>(pb->value.data(), n, k);
    if (pb->requires_grad)
      detail::MapMat<T>(pb->grad_buffer(), n, k).noalias() += g.transpose() * detail::ConstMapMat<T>(pa->value.data(), m, k);
  });
}

// x * w + b, with b a [1, out] row broadcast over rows.
template <class T>
Tensor<T> affine(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  if (x.cols() != w.rows() || b.rows() != 1 || b.cols() != w.cols()) throw ShapeError("affine: shape mismatch");
  const int m = x.rows(), k = x.cols(), n = w.cols();
  std::vector<T> out(std::size_t(m) * n);
  detail::MapMat<T> o(out.data(), m, n);
  o.noalias() = detail::ConstMapMat<T>(x.data(), m, k) * detail::ConstMapMat<T>(w.data(), k, n);
  o.rowwise() += detail::ConstMapMat<T>(b.data(), 1, n).row(0);
  return detail::make_result<T>(m, n, std::move(out), {&x, &w, &b}, [m, k, n](Node<T>& self) {
    auto& px = self.parents[0];
    auto& pw = self.parents[1];
    auto& pb = self.parents[2];
    detail::ConstMapMat<T> g(self.grad.data(), m, n);
    if (px->requires_grad)
      detail::MapMat<T>(px->grad_buffer(), m, k).noalias() += g * detail::ConstMapMat<T>(pw->value.data(), k, n).transpose();
    if (pw->requires_grad)
      detail::MapMat<T>(pw->grad_buffer(), k, n).noalias() += detail::ConstMapMat<T>(px->value.data(), m, k).transpose() * g;
    if (pb->requires_grad) detail::MapMat<T>(pb->grad_buffer(), 1, n) += g.colwise().sum();
  });
}

template <class T>
Tensor<T> transpose(const Tensor<T>& a) {
  const int r = a.rows(), c = a.cols();
  std::vector<T> out(a.size());
  detail::MapMat<T>(out.data(), c, r) = detail::ConstMapMat<T>(a.data(), r, c).transpose();
  return detail::make_result<T>(c, r, std::move(out), {&a}, [r, c](Node<T>& self) {
    auto& p = self.parents[0];
    detail::MapMat<T>(p->grad_buffer(), r, c) += detail::ConstMapMat<T>(self.grad.data(), c, r).transpose();
  });
}

// ---------------------------------------------------------------- elementwise binary

template <class T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a.rows(), a.cols(), b.rows(), b.cols(), "add");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return detail::make_result<T>(a.rows(), a.cols(), std::move(out), {&a, &b}, [](Node<T>& self) {
    for (auto& p : self.parents) {
      if (!p->requires_grad) continue;
      T* g = p->grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <class T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a.rows(), a.cols(), b.rows(), b.cols(), "sub");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  return detail::make_result<T>(a.rows(), a.cols(), std::move(out), {&a, &b}, [](Node<T>& self) {
    if (self.parents[0]->requires_grad) {
      T* g = self.parents[0]->grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
    if (self.parents[1]->requires_grad) {
      T* g = self.parents[1]->grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

template <class T>
Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a.rows(), a.cols(), b.rows(), b.cols(), "mul");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return detail::make_result<T>(a.rows(), a.cols(), std::move(out), {&a, &b}, [](Node<T>& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    if (pa->requires_grad) {
      T* g = pa->grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * pb->value[i];
    }
    if (pb->requires_grad) {
      T* g = pb->grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * pa->value[i];
    }
  });
}

template <class T>
Tensor<T> operator/(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a.rows(), a.cols(), b.rows(), b.cols(), "div");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] / b.data()[i];
  return detail::make_result<T>(a.rows(), a.cols(), std::move(out), {&a, &b}, [](Node<T>& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    if (pa->requires_grad) {
      T* g = pa->grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] / pb->value[i];
    }
    if (pb->requires_grad) {
      T* g = pb->grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i] * self.value[i] / pb->value[i];
    }
  });
}

// Elementwise min/max. Ties route the gradient to the first argument.
template <class T>
Tensor<T> minimum(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a.rows(), a.cols(), b.rows(), b.cols(), "minimum");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::min(a.data()[i], b.data()[i]);
  return detail::make_result<T>(a.rows(), a.cols(), std::move(out), {&a, &b}, [](Node<T>& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const bool first = pa->value[i] <= pb->value[i];
      auto& p = first ? pa : pb;
      if (p->requires_grad) p->grad_buffer()[i] += self.grad[i];
    }
  });
}

template <class T>
Tensor<T> maximum(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a.rows(), a.cols(), b.rows(), b.cols(), "maximum");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(a.data()[i], b.data()[i]);
  return detail::make_result<T>(a.rows(), a.cols(), std::move(out), {&a, &b}, [](Node<T>& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const bool first = pa->value[i] >= pb->value[i];
      auto& p = first ? pa : pb;
      if (p->requires_grad) p->grad_buffer()[i] += self.grad[i];
    }
  });
}

// ---------------------------------------------------------------- scalar-constant ops

template <class T>
Tensor<T> operator*(const Tensor<T>& a, T s) {
  return detail::unary(a, [s](T x) { return x * s; }, [s](T, T) { return s; });
}
template <class T>
Tensor<T> operator*(T s, const Tensor<T>& a) {
  return a * s;
}
template <class T>
Tensor<T> operator+(const Tensor<T>& a, T s) {
  return detail::unary(a, [s](T x) { return x + s; }, [](T, T) { return T(1); });
}
template <class T>
Tensor<T> operator-(const Tensor<T>& a) {
  return a * T(-1);
}

// ---------------------------------------------------------------- elementwise unary

template <class T>
Tensor<T> relu(const Tensor<T>& a) {
  return detail::unary(a, [](T x) { return x > 0 ? x : T(0); }, [](T x, T) { return x > 0 ? T(1) : T(0); });
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  return detail::unary(
      a,
      [](T x) {
        if (x >= 0) return T(1) / (T(1) + std::exp(-x));
        const T e = std::exp(x);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <class T>
Tensor<T> tanh(const Tensor<T>& a) {
  return detail::unary(a, [](T x) { return std::tanh(x); }, [](T, T y) { return T(1) - y * y; });
}

template <class T>
Tensor<T> exp(const Tensor<T>& a) {
  return detail::unary(a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <class T>
Tensor<T> log(const Tensor<T>& a) {
  return detail::unary(a, [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

template <class T>
Tensor<T> square(const Tensor<T>& a) {
  return detail::unary(a, [](T x) { return x * x; }, [](T x, T) { return T(2) * x; });
}

// Subgradient 0 at the kink.
template <class T>
Tensor<T> abs(const Tensor<T>& a) {
  return detail::unary(a, [](T x) { return std::abs(x); },
                       [](T x, T) { return x > 0 ? T(1) : (x < 0 ? T(-1) : T(0)); });
}

// log(1 + e^x), stable for large |x|.
template <class T>
Tensor<T> softplus(const Tensor<T>& a) {
  return detail::unary(
      a, [](T x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); },
      [](T x, T) {
        if (x >= 0) return T(1) / (T(1) + std::exp(-x));
        const T e = std::exp(x);
        return e / (T(1) + e);
      });
}

template <class T>
Tensor<T> clamp_min(const Tensor<T>& a, T lo) {
  return detail::unary(a, [lo](T x) { return x < lo ? lo : x; }, [lo](T x, T) { return x < lo ? T(0) : T(1); });
}

template <class T>
Tensor<T> clamp(const Tensor<T>& a, T lo, T hi) {
  return detail::unary(a, [lo, hi](T x) { return std::clamp(x, lo, hi); },
                       [lo, hi](T x, T) { return (x < lo || x > hi) ? T(0) : T(1); });
}

// ---------------------------------------------------------------- reductions

template <class T>
Tensor<T> sum(const Tensor<T>& a) {
  T s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a.data()[i];
  return detail::make_result<T>(1, 1, {s}, {&a}, [](Node<T>& self) {
    auto& p = self.parents[0];
    T* g = p->grad_buffer();
    for (std::size_t i = 0; i < p->value.size(); ++i) g[i] += self.grad[0];
  });
}

template <class T>
Tensor<T> mean(const Tensor<T>& a) {
  if (a.size() == 0) throw ShapeError("mean: empty tensor");
  return sum(a) * (T(1) / T(a.size()));
}

// [r, c] -> [r, 1]
template <class T>
Tensor<T> sum_cols(const Tensor<T>& a) {
  const int r = a.rows(), c = a.cols();
  std::vector<T> out(r, T(0));
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) out[i] += a.data()[std::size_t(i) * c + j];
  return detail::make_result<T>(r, 1, std::move(out), {&a}, [r, c](Node<T>& self) {
    T* g = self.parents[0]->grad_buffer();
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) g[std::size_t(i) * c + j] += self.grad[i];
  });
}

// Per-row Euclidean norm, [r, c] -> [r, 1]; zero rows get a zero subgradient.
template <class T>
Tensor<T> row_norm(const Tensor<T>& a) {
  const int r = a.rows(), c = a.cols();
  std::vector<T> out(r, T(0));
  for (int i = 0; i < r; ++i) {
    T s = 0;
    for (int j = 0; j < c; ++j) s += a.data()[std::size_t(i) * c + j] * a.data()[std::size_t(i) * c + j];
    out[i] = std::sqrt(s);
  }
  return detail::make_result<T>(r, 1, std::move(out), {&a}, [r, c](Node<T>& self) {
    auto& p = self.parents[0];
    T* g = p->grad_buffer();
    for (int i = 0; i < r; ++i) {
      if (self.value[i] <= T(0)) continue;
      const T k = self.grad[i] / self.value[i];
      for (int j = 0; j < c; ++j) g[std::size_t(i) * c + j] += k * p->value[std::size_t(i) * c + j];
    }
  });
}

// Per-row minimum, [r, c] -> [r, 1]. Gradient goes to the first argmin.
template <class T>
Tensor<T> row_min(const Tensor<T>& a) {
  const int r = a.rows(), c = a.cols();
  if (c < 1) throw ShapeError("row_min: no columns");
  std::vector<T> out(r);
  std::vector<int> arg(r);
  for (int i = 0; i < r; ++i) {
    int best = 0;
    for (int j = 1; j < c; ++j)
      if (a.data()[std::size_t(i) * c + j] < a.data()[std::size_t(i) * c + best]) best = j;
    arg[i] = best;
    out[i] = a.data()[std::size_t(i) * c + best];
  }
  return detail::make_result<T>(r, 1, std::move(out), {&a}, [r, c, arg](Node<T>& self) {
    T* g = self.parents[0]->grad_buffer();
    for (int i = 0; i < r; ++i) g[std::size_t(i) * c + arg[i]] += self.grad[i];
  });
}

// Mean over the rows selected by `mask` (all rows when empty), [r, c] -> [1, c].
template <class T>
Tensor<T> masked_mean_rows(const Tensor<T>& a, const std::vector<char>& mask = {}) {
  const int r = a.rows(), c = a.cols();
  if (!mask.empty() && mask.size() != std::size_t(r)) throw ShapeError("masked_mean_rows: mask length");
  int count = 0;
  for (int i = 0; i < r; ++i) count += (mask.empty() || mask[i]) ? 1 : 0;
  if (count == 0) throw ShapeError("masked_mean_rows: no active rows");
  std::vector<T> out(c, T(0));
  for (int i = 0; i < r; ++i) {
    if (!mask.empty() && !mask[i]) continue;
    for (int j = 0; j < c; ++j) out[j] += a.data()[std::size_t(i) * c + j];
  }
  const T inv = T(1) / T(count);
  for (auto& v : out) v *= inv;
  return detail::make_result<T>(1, c, std::move(out), {&a}, [r, c, mask, inv](Node<T>& self) {
    T* g = self.parents[0]->grad_buffer();
    for (int i = 0; i < r; ++i) {
      if (!mask.empty() && !mask[i]) continue;
      for (int j = 0; j < c; ++j) g[std::size_t(i) * c + j] += self.grad[j] * inv;
    }
  });
}

// ---------------------------------------------------------------- shape manipulation

template <class T>
Tensor<T> reshape(const Tensor<T>& a, int rows, int cols) {
  if (std::size_t(rows) * cols != a.size()) throw ShapeError("reshape: element count differs");
  return detail::make_result<T>(rows, cols, a.values(), {&a}, [](Node<T>& self) {
    T* g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  });
}

// [1, c] -> [n, c]
template <class T>
Tensor<T> expand_rows(const Tensor<T>& row, int n) {
  if (row.rows() != 1) throw ShapeError("expand_rows: input must be a single row");
  const int c = row.cols();
  std::vector<T> out(std::size_t(n) * c);
  for (int i = 0; i < n; ++i) std::copy(row.data(), row.data() + c, out.begin() + std::size_t(i) * c);
  return detail::make_result<T>(n, c, std::move(out), {&row}, [n, c](Node<T>& self) {
    T* g = self.parents[0]->grad_buffer();
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < c; ++j) g[j] += self.grad[std::size_t(i) * c + j];
  });
}

template <class T>
Tensor<T> slice_cols(const Tensor<T>& a, int start, int len) {
  const int r = a.rows(), c = a.cols();
  if (start < 0 || len < 0 || start + len > c) throw ShapeError("slice_cols: out of range");
  std::vector<T> out(std::size_t(r) * len);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < len; ++j) out[std::size_t(i) * len + j] = a.data()[std::size_t(i) * c + start + j];
  return detail::make_result<T>(r, len, std::move(out), {&a}, [r, c, start, len](Node<T>& self) {
    T* g = self.parents[0]->grad_buffer();
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < len; ++j) g[std::size_t(i) * c + start + j] += self.grad[std::size_t(i) * len + j];
  });
}

template <class T>
Tensor<T> slice_rows(const Tensor<T>& a, int start, int len) {
  const int r = a.rows(), c = a.cols();
  if (start < 0 || len < 0 || start + len > r) throw ShapeError("slice_rows: out of range");
  std::vector<T> out(a.data() + std::size_t(start) * c, a.data() + std::size_t(start + len) * c);
  return detail::make_result<T>(len, c, std::move(out), {&a}, [c, start](Node<T>& self) {
    T* g = self.parents[0]->grad_buffer() + std::size_t(start) * c;
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  });
}

template <class T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const int r = parts[0].rows();
  int c = 0;
  for (const auto& p : parts) {
    if (p.rows() != r) throw ShapeError("concat_cols: row counts differ");
    c += p.cols();
  }
  std::vector<T> out(std::size_t(r) * c);
  int off = 0;
  std::vector<int> offsets;
  for (const auto& p : parts) {
    offsets.push_back(off);
    for (int i = 0; i < r; ++i)
      std::copy(p.data() + std::size_t(i) * p.cols(), p.data() + std::size_t(i + 1) * p.cols(),
                out.begin() + std::size_t(i) * c + off);
    off += p.cols();
  }
  return detail::make_result_n<T>(r, c, std::move(out), parts, [r, c, offsets](Node<T>& self) {
    for (std::size_t k = 0; k < self.parents.size(); ++k) {
      auto& p = self.parents[k];
      if (!p->requires_grad) continue;
      T* g = p->grad_buffer();
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < p->cols; ++j) g[std::size_t(i) * p->cols + j] += self.grad[std::size_t(i) * c + offsets[k] + j];
    }
  });
}

template <class T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const int c = parts[0].cols();
  int r = 0;
  for (const auto& p : parts) {
    if (p.cols() != c) throw ShapeError("concat_rows: column counts differ");
    r += p.rows();
  }
  std::vector<T> out;
  out.reserve(std::size_t(r) * c);
  for (const auto& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
  return detail::make_result_n<T>(r, c, std::move(out), parts, [](Node<T>& self) {
    std::size_t off = 0;
    for (auto& p : self.parents) {
      if (p->requires_grad) {
        T* g = p->grad_buffer();
        for (std::size_t i = 0; i < p->value.size(); ++i) g[i] += self.grad[off + i];
      }
      off += p->value.size();
    }
  });
}

// out[i] = a[index[i]]; gradients scatter-add back.
template <class T>
Tensor<T> gather_rows(const Tensor<T>& a, const std::vector<int>& index) {
  const int c = a.cols();
  std::vector<T> out(index.size() * std::size_t(c));
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] < 0 || index[i] >= a.rows()) throw ShapeError("gather_rows: index out of range");
    std::copy(a.data() + std::size_t(index[i]) * c, a.data() + std::size_t(index[i] + 1) * c,
              out.begin() + i * c);
  }
  return detail::make_result<T>(int(index.size()), c, std::move(out), {&a}, [c, index](Node<T>& self) {
    T* g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < index.size(); ++i)
      for (int j = 0; j < c; ++j) g[std::size_t(index[i]) * c + j] += self.grad[i * c + j];
  });
}

// ---------------------------------------------------------------- neural-network primitives

// Row softmax; columns with key_mask[j] == 0 receive zero probability.
template <class T>
Tensor<T> softmax_rows(const Tensor<T>& a, const std::vector<char>& key_mask = {}) {
  const int r = a.rows(), c = a.cols();
  if (!key_mask.empty() && key_mask.size() != std::size_t(c)) throw ShapeError("softmax_rows: mask length");
  std::vector<T> out(a.size(), T(0));
  for (int i = 0; i < r; ++i) {
    const T* x = a.data() + std::size_t(i) * c;
    T* y = out.data() + std::size_t(i) * c;
    T mx = -std::numeric_limits<T>::infinity();
    for (int j = 0; j < c; ++j)
      if (key_mask.empty() || key_mask[j]) mx = std::max(mx, x[j]);
    T s = 0;
    for (int j = 0; j < c; ++j) {
      if (!key_mask.empty() && !key_mask[j]) continue;
      y[j] = std::exp(x[j] - mx);
      s += y[j];
    }
    for (int j = 0; j < c; ++j) y[j] /= s;
  }
  return detail::make_result<T>(r, c, std::move(out), {&a}, [r, c](Node<T>& self) {
    T* g = self.parents[0]->grad_buffer();
    for (int i = 0; i < r; ++i) {
      const T* y = self.value.data() + std::size_t(i) * c;
      const T* gy = self.grad.data() + std::size_t(i) * c;
      T dot = 0;
      for (int j = 0; j < c; ++j) dot += y[j] * gy[j];
      for (int j = 0; j < c; ++j) g[std::size_t(i) * c + j] += y[j] * (gy[j] - dot);
    }
  });
}

// Per-row layer normalization with learnable [1, c] gain and bias.
template <class T>
Tensor<T> layer_norm(const Tensor<T>& a, const Tensor<T>& gain, const Tensor<T>& bias, T eps = T(1e-5)) {
  const int r = a.rows(), c = a.cols();
  if (gain.cols() != c || bias.cols() != c) throw ShapeError("layer_norm: parameter width");
  std::vector<T> out(a.size());
  std::vector<T> xhat(a.size());
  std::vector<T> inv_std(r);
  for (int i = 0; i < r; ++i) {
    const T* x = a.data() + std::size_t(i) * c;
    T mu = 0;
    for (int j = 0; j < c; ++j) mu += x[j];
    mu /= c;
    T var = 0;
    for (int j = 0; j < c; ++j) var += (x[j] - mu) * (x[j] - mu);
    var /= c;
    inv_std[i] = T(1) / std::sqrt(var + eps);
    for (int j = 0; j < c; ++j) {
      const T xh = (x[j] - mu) * inv_std[i];
      xhat[std::size_t(i) * c + j] = xh;
      out[std::size_t(i) * c + j] = xh * gain.data()[j] + bias.data()[j];
    }
  }
  return detail::make_result<T>(
      r, c, std::move(out), {&a, &gain, &bias},
      [r, c, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& self) {
        auto& px = self.parents[0];
        auto& pg = self.parents[1];
        auto& pb = self.parents[2];
        for (int i = 0; i < r; ++i) {
          const T* gy = self.grad.data() + std::size_t(i) * c;
          const T* xh = xhat.data() + std::size_t(i) * c;
          if (pg->requires_grad) {
            T* gg = pg->grad_buffer();
            for (int j = 0; j < c; ++j) gg[j] += gy[j] * xh[j];
          }
          if (pb->requires_grad) {
            T* gb = pb->grad_buffer();
            for (int j = 0; j < c; ++j) gb[j] += gy[j];
          }
          if (px->requires_grad) {
            T s1 = 0, s2 = 0;
            for (int j = 0; j < c; ++j) {
              const T d = gy[j] * pg->value[j];
              s1 += d;
              s2 += d * xh[j];
            }
            T* gx = px->grad_buffer() + std::size_t(i) * c;
            for (int j = 0; j < c; ++j) {
              const T d = gy[j] * pg->value[j];
              gx[j] += inv_std[i] * (d - s1 / c - xh[j] * s2 / c);
            }
          }
        }
      });
}

// Per-row softmax cross-entropy against integer targets, [r, C] -> [r, 1].
template <class T>
Tensor<T> cross_entropy_rows(const Tensor<T>& logits, const std::vector<int>& targets) {
  const int r = logits.rows(), c = logits.cols();
  if (targets.size() != std::size_t(r)) throw ShapeError("cross_entropy: target count differs from rows");
  std::vector<T> out(r);
  std::vector<T> probs(logits.size());
  for (int i = 0; i < r; ++i) {
    if (targets[i] < 0 || targets[i] >= c) throw ShapeError("cross_entropy: target out of range");
    const T* x = logits.data() + std::size_t(i) * c;
    T mx = *std::max_element(x, x + c);
    T s = 0;
    for (int j = 0; j < c; ++j) s += std::exp(x[j] - mx);
    const T lse = mx + std::log(s);
    for (int j = 0; j < c; ++j) probs[std::size_t(i) * c + j] = std::exp(x[j] - lse);
    out[i] = lse - x[targets[i]];
  }
  return detail::make_result<T>(r, 1, std::move(out), {&logits},
                                [r, c, targets, probs = std::move(probs)](Node<T>& self) {
                                  T* g = self.parents[0]->grad_buffer();
                                  for (int i = 0; i < r; ++i) {
                                    for (int j = 0; j < c; ++j)
                                      g[std::size_t(i) * c + j] +=
                                          self.grad[i] * (probs[std::size_t(i) * c + j] - (j == targets[i] ? T(1) : T(0)));
                                  }
                                });
}

// Bilinear resize (half-pixel centers) of an image stored as [h*w, ch].
template <class T>
Tensor<T> resize_bilinear(const Tensor<T>& img, int in_h, int in_w, int out_h, int out_w) {
  const int ch = img.cols();
  if (img.rows() != in_h * in_w) throw ShapeError("resize_bilinear: rows must equal h*w");
  struct Tap {
    int src;
    T weight;
  };
  std::vector<std::array<Tap, 4>> taps(std::size_t(out_h) * out_w);
  const double sy = double(in_h) / out_h, sx = double(in_w) / out_w;
  for (int y = 0; y < out_h; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, double(in_h - 1));
    const int y0 = int(std::floor(fy)), y1 = std::min(y0 + 1, in_h - 1);
    const double wy = fy - y0;
    for (int x = 0; x < out_w; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, double(in_w - 1));
      const int x0 = int(std::floor(fx)), x1 = std::min(x0 + 1, in_w - 1);
      const double wx = fx - x0;
      taps[std::size_t(y) * out_w + x] = {Tap{y0 * in_w + x0, T((1 - wy) * (1 - wx))}, Tap{y0 * in_w + x1, T((1 - wy) * wx)},
                                          Tap{y1 * in_w + x0, T(wy * (1 - wx))}, Tap{y1 * in_w + x1, T(wy * wx)}};
    }
  }
  std::vector<T> out(taps.size() * ch, T(0));
  for (std::size_t o = 0; o < taps.size(); ++o)
    for (const auto& t : taps[o])
      for (int k = 0; k < ch; ++k) out[o * ch + k] += t.weight * img.data()[std::size_t(t.src) * ch + k];
  return detail::make_result<T>(out_h * out_w, ch, std::move(out), {&img}, [ch, taps = std::move(taps)](Node<T>& self) {
    T* g = self.parents[0]->grad_buffer();
    for (std::size_t o = 0; o < taps.size(); ++o)
      for (const auto& t : taps[o])
        for (int k = 0; k < ch; ++k) g[std::size_t(t.src) * ch + k] += t.weight * self.grad[o * ch + k];
  });
}

// Inverted dropout; identity when p == 0.
template <class T>
Tensor<T> dropout(const Tensor<T>& a, double p, Rng& rng) {
  if (p <= 0.0) return a;
  std::vector<T> keep(a.size());
  const T scale = T(1.0 / (1.0 - p));
  for (auto& k : keep) k = rng.uniform() >= p ? scale : T(0);
  return a * Tensor<T>::constant(a.rows(), a.cols(), std::move(keep));
}

// ---------------------------------------------------------------- checks

template <class T>
bool all_finite(const Tensor<T>& a) {
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!std::isfinite(a.data()[i])) return false;
  return true;
}

}  // namespace layoutdetr::ad
