#pragma once

// Dense row-major tensors with tape-based reverse-mode differentiation.
//
// A Tensor is a shared handle: copies alias the same storage, `clone()` makes
// a detached deep copy. Every primitive that sees at least one input with
// requires_grad (while gradient recording is enabled) appends a record to the
// calling thread's Tape<T>. backward() replays the tape in reverse and then
// clears it, so a second backward() on the same loss is rejected.

#include "pose2mesh/error.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace p2m {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace detail {

template <typename T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad; // empty until first accumulation
  bool requires_grad = false;

  std::vector<T>& grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad;
  }
};

template <typename T>
using ImplPtr = std::shared_ptr<TensorImpl<T>>;

inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using CMatMap = Eigen::Map<const RowMat<T>>;

} // namespace detail

/// Disables tape recording on this thread for the guard's lifetime.
class NoGradGuard {
public:
  NoGradGuard() : previous_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
  ~NoGradGuard() { detail::grad_mode_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
  bool previous_;
};

inline bool grad_enabled() { return detail::grad_mode_flag(); }

template <typename T>
class Tensor {
public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0), bool requires_grad = false)
      : impl_(std::make_shared<detail::TensorImpl<T>>()) {
    for (auto e : shape)
      if (e == 0) throw ShapeError("tensor: zero extent in shape " + shape_str(shape));
    impl_->data.assign(shape_numel(shape), fill);
    impl_->shape = std::move(shape);
    impl_->requires_grad = requires_grad;
  }

  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false)
      : impl_(std::make_shared<detail::TensorImpl<T>>()) {
    if (shape_numel(shape) != data.size())
      throw ShapeError("tensor: shape " + shape_str(shape) + " does not match " +
                       std::to_string(data.size()) + " values");
    for (auto e : shape)
      if (e == 0) throw ShapeError("tensor: zero extent in shape " + shape_str(shape));
    impl_->shape = std::move(shape);
    impl_->data = std::move(data);
    impl_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), T(0)); }
  static Tensor scalar(T v) { return Tensor(Shape{}, std::vector<T>{v}); }
  static Tensor of(Shape shape, std::initializer_list<T> values) {
    return Tensor(std::move(shape), std::vector<T>(values));
  }

  bool defined() const { return static_cast<bool>(impl_); }
  const Shape& shape() const { return impl_->shape; }
  std::size_t dim() const { return impl_->shape.size(); }
  std::size_t size(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t numel() const { return impl_->data.size(); }

  std::span<T> data() { return impl_->data; }
  std::span<const T> data() const { return impl_->data; }
  std::vector<T>& values() { return impl_->data; }
  const std::vector<T>& values() const { return impl_->data; }

  T& operator[](std::size_t i) { return impl_->data[i]; }
  const T& operator[](std::size_t i) const { return impl_->data[i]; }
  T& at(std::size_t i, std::size_t j) { return impl_->data[i * impl_->shape.back() + j]; }
  const T& at(std::size_t i, std::size_t j) const {
    return impl_->data[i * impl_->shape.back() + j];
  }
  T& at(std::size_t i, std::size_t j, std::size_t k) {
    const auto& s = impl_->shape;
    return impl_->data[(i * s[s.size() - 2] + j) * s.back() + k];
  }
  const T& at(std::size_t i, std::size_t j, std::size_t k) const {
    const auto& s = impl_->shape;
    return impl_->data[(i * s[s.size() - 2] + j) * s.back() + k];
  }

  T item() const {
    if (numel() != 1) throw ShapeError("item: tensor of shape " + shape_str(shape()) + " is not a scalar");
    return impl_->data[0];
  }

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool on) {
    impl_->requires_grad = on;
    return *this;
  }

  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const T> grad() const { return impl_->grad; }
  std::span<T> mutable_grad() { return impl_->grad_buffer(); }
  void zero_grad() {
    if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), T(0));
  }
  void clear_grad() { impl_->grad.clear(); }

  /// Detached deep copy (no grad, not tracked).
  Tensor clone() const { return Tensor(impl_->shape, impl_->data); }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(impl_->data.begin(), impl_->data.end());
    return Tensor<U>(impl_->shape, std::move(out));
  }

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

  const detail::ImplPtr<T>& impl() const { return impl_; }

private:
  detail::ImplPtr<T> impl_;
};

/// Ordered log of recorded primitives for one thread and scalar type.
template <typename T>
class Tape {
public:
  struct Record {
    std::string op;
    std::vector<detail::ImplPtr<T>> inputs;
    detail::ImplPtr<T> output;
    std::function<void()> backward;
  };

  static Tape& local() {
    thread_local Tape tape;
    return tape;
  }

  void record(std::string op, std::vector<detail::ImplPtr<T>> inputs, detail::ImplPtr<T> output,
              std::function<void()> backward) {
    records_.push_back({std::move(op), std::move(inputs), std::move(output), std::move(backward)});
  }

  std::size_t size() const { return records_.size(); }
  const std::vector<Record>& records() const { return records_; }
  void clear() { records_.clear(); }

  void backward(const Tensor<T>& loss) {
    if (!loss.defined()) throw AutogradError("backward: undefined loss tensor");
    if (loss.numel() != 1)
      throw AutogradError("backward: loss must be a scalar, got shape " + shape_str(loss.shape()));
    std::size_t idx = records_.size();
    while (idx > 0 && records_[idx - 1].output != loss.impl()) --idx;
    if (idx == 0)
      throw AutogradError(
          "backward: loss is not on the active tape (already backpropagated or never recorded)");
    auto& seed = loss.impl()->grad_buffer();
    seed[0] = T(1);
    for (std::size_t i = idx; i-- > 0;) {
      if (records_[i].output->grad.empty()) continue; // not reachable from the loss
      records_[i].backward();
    }
    records_.clear();
  }

private:
  std::vector<Record> records_;
};

template <typename T>
void backward(const Tensor<T>& loss) {
  Tape<T>::local().backward(loss);
}

namespace detail {

template <typename T>
bool should_record(std::initializer_list<const Tensor<T>*> inputs) {
  if (!grad_enabled()) return false;
  for (const auto* t : inputs)
    if (t->requires_grad()) return true;
  return false;
}

template <typename T>
void record(const char* op, std::vector<ImplPtr<T>> inputs, const Tensor<T>& out,
            std::function<void()> fn) {
  out.impl()->requires_grad = true;
  Tape<T>::local().record(op, std::move(inputs), out.impl(), std::move(fn));
}

template <typename T>
void require_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

template <typename T, typename Fwd, typename Bwd>
Tensor<T> unary(const char* op, const Tensor<T>& a, Fwd fwd, Bwd dfdx) {
  std::vector<T> out(a.numel());
  const auto& x = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(x[i]);
  Tensor<T> result(a.shape(), std::move(out));
  if (should_record({&a})) {
    auto ai = a.impl();
    auto oi = result.impl();
    record<T>(op, {ai}, result, [ai, oi, dfdx] {
      auto& g = ai->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += oi->grad[i] * dfdx(ai->data[i], oi->data[i]);
    });
  }
  return result;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape("add", a, b);
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  Tensor<T> r(a.shape(), std::move(out));
  if (detail::should_record({&a, &b})) {
    auto ai = a.impl(), bi = b.impl(), oi = r.impl();
    detail::record<T>("add", {ai, bi}, r, [ai, bi, oi] {
      if (ai->requires_grad) {
        auto& g = ai->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += oi->grad[i];
      }
      if (bi->requires_grad) {
        auto& g = bi->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += oi->grad[i];
      }
    });
  }
  return r;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape("sub", a, b);
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  Tensor<T> r(a.shape(), std::move(out));
  if (detail::should_record({&a, &b})) {
    auto ai = a.impl(), bi = b.impl(), oi = r.impl();
    detail::record<T>("sub", {ai, bi}, r, [ai, bi, oi] {
      if (ai->requires_grad) {
        auto& g = ai->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += oi->grad[i];
      }
      if (bi->requires_grad) {
        auto& g = bi->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] -= oi->grad[i];
      }
    });
  }
  return r;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape("mul", a, b);
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  Tensor<T> r(a.shape(), std::move(out));
  if (detail::should_record({&a, &b})) {
    auto ai = a.impl(), bi = b.impl(), oi = r.impl();
    detail::record<T>("mul", {ai, bi}, r, [ai, bi, oi] {
      if (ai->requires_grad) {
        auto& g = ai->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += oi->grad[i] * bi->data[i];
      }
      if (bi->requires_grad) {
        auto& g = bi->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += oi->grad[i] * ai->data[i];
      }
    });
  }
  return r;
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape("div", a, b);
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] / b[i];
  Tensor<T> r(a.shape(), std::move(out));
  if (detail::should_record({&a, &b})) {
    auto ai = a.impl(), bi = b.impl(), oi = r.impl();
    detail::record<T>("div", {ai, bi}, r, [ai, bi, oi] {
      if (ai->requires_grad) {
        auto& g = ai->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += oi->grad[i] / bi->data[i];
      }
      if (bi->requires_grad) {
        auto& g = bi->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] -= oi->grad[i] * oi->data[i] / bi->data[i];
      }
    });
  }
  return r;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  return detail::unary<T>("scale", a, [s](T x) { return s * x; }, [s](T, T) { return s; });
}

template <typename T>
Tensor<T> abs(const Tensor<T>& a) {
  // subgradient 0 at exactly 0
  return detail::unary<T>(
      "abs", a, [](T x) { return std::abs(x); },
      [](T x, T) { return x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0)); });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  return detail::unary<T>(
      "relu", a, [](T x) { return x > T(0) ? x : T(0); },
      [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> sqrt(const Tensor<T>& a) {
  return detail::unary<T>(
      "sqrt", a, [](T x) { return std::sqrt(x); },
      [](T, T y) { return y > T(0) ? T(0.5) / y : T(0); });
}

/// x[..., n] + bias[n], the one explicit broadcast.
template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias) {
  if (bias.dim() != 1 || x.dim() < 1 || x.shape().back() != bias.size(0))
    throw ShapeError("add_bias: shape mismatch " + shape_str(x.shape()) + " vs " +
                     shape_str(bias.shape()));
  const std::size_t n = bias.numel();
  std::vector<T> out(x.values());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bias[i % n];
  Tensor<T> r(x.shape(), std::move(out));
  if (detail::should_record({&x, &bias})) {
    auto xi = x.impl(), bi = bias.impl(), oi = r.impl();
    detail::record<T>("add_bias", {xi, bi}, r, [xi, bi, oi, n] {
      if (xi->requires_grad) {
        auto& g = xi->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += oi->grad[i];
      }
      if (bi->requires_grad) {
        auto& g = bi->grad_buffer();
        for (std::size_t i = 0; i < oi->grad.size(); ++i) g[i % n] += oi->grad[i];
      }
    });
  }
  return r;
}

// ---------------------------------------------------------------------------
// Linear algebra

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.dim() != 2 || b.dim() != 2 || a.size(1) != b.size(0))
    throw ShapeError("matmul: shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  const auto m = a.size(0), k = a.size(1), n = b.size(1);
  Tensor<T> r(Shape{m, n});
  detail::MatMap<T>(r.data().data(), m, n).noalias() =
      detail::CMatMap<T>(a.data().data(), m, k) * detail::CMatMap<T>(b.data().data(), k, n);
  if (detail::should_record({&a, &b})) {
    auto ai = a.impl(), bi = b.impl(), oi = r.impl();
    detail::record<T>("matmul", {ai, bi}, r, [ai, bi, oi, m, k, n] {
      detail::CMatMap<T> G(oi->grad.data(), m, n);
      if (ai->requires_grad)
        detail::MatMap<T>(ai->grad_buffer().data(), m, k).noalias() +=
            G * detail::CMatMap<T>(bi->data.data(), k, n).transpose();
      if (bi->requires_grad)
        detail::MatMap<T>(bi->grad_buffer().data(), k, n).noalias() +=
            detail::CMatMap<T>(ai->data.data(), m, k).transpose() * G;
    });
  }
  return r;
}

/// A[m,n] applied to every trailing [n,f] block of x[..., n, f].
template <typename T>
Tensor<T> left_matmul(const Tensor<T>& A, const Tensor<T>& x) {
  if (A.dim() != 2 || x.dim() < 2 || x.size(x.dim() - 2) != A.size(1))
    throw ShapeError("left_matmul: shape mismatch " + shape_str(A.shape()) + " vs " +
                     shape_str(x.shape()));
  const auto m = A.size(0), n = A.size(1), f = x.shape().back();
  const auto batch = x.numel() / (n * f);
  Shape out_shape = x.shape();
  out_shape[out_shape.size() - 2] = m;
  Tensor<T> r(out_shape);
  detail::CMatMap<T> Am(A.data().data(), m, n);
  for (std::size_t b = 0; b < batch; ++b)
    detail::MatMap<T>(r.data().data() + b * m * f, m, f).noalias() =
        Am * detail::CMatMap<T>(x.data().data() + b * n * f, n, f);
  if (detail::should_record({&A, &x})) {
    auto ai = A.impl(), xi = x.impl(), oi = r.impl();
    detail::record<T>("left_matmul", {ai, xi}, r, [ai, xi, oi, m, n, f, batch] {
      detail::CMatMap<T> Am(ai->data.data(), m, n);
      for (std::size_t b = 0; b < batch; ++b) {
        detail::CMatMap<T> G(oi->grad.data() + b * m * f, m, f);
        if (ai->requires_grad)
          detail::MatMap<T>(ai->grad_buffer().data(), m, n).noalias() +=
              G * detail::CMatMap<T>(xi->data.data() + b * n * f, n, f).transpose();
        if (xi->requires_grad)
          detail::MatMap<T>(xi->grad_buffer().data() + b * n * f, n, f).noalias() +=
              Am.transpose() * G;
      }
    });
  }
  return r;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  if (a.dim() != 2) throw ShapeError("transpose: expected rank 2, got " + shape_str(a.shape()));
  const auto m = a.size(0), n = a.size(1);
  Tensor<T> r(Shape{n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) r[j * m + i] = a[i * n + j];
  if (detail::should_record({&a})) {
    auto ai = a.impl(), oi = r.impl();
    detail::record<T>("transpose", {ai}, r, [ai, oi, m, n] {
      auto& g = ai->grad_buffer();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[i * n + j] += oi->grad[j * m + i];
    });
  }
  return r;
}

// ---------------------------------------------------------------------------
// Shape manipulation

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (shape_numel(shape) != a.numel())
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  Tensor<T> r(std::move(shape), a.values());
  if (detail::should_record({&a})) {
    auto ai = a.impl(), oi = r.impl();
    detail::record<T>("reshape", {ai}, r, [ai, oi] {
      auto& g = ai->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += oi->grad[i];
    });
  }
  return r;
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& s0 = parts.front().shape();
  if (axis >= s0.size()) throw ShapeError("concat: axis out of range for " + shape_str(s0));
  Shape out_shape = s0;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == s0.size();
    for (std::size_t d = 0; ok && d < s.size(); ++d) ok = d == axis || s[d] == s0[d];
    if (!ok) throw ShapeError("concat: shape mismatch " + shape_str(s0) + " vs " + shape_str(s));
    out_shape[axis] += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= s0[d];
  for (std::size_t d = axis + 1; d < s0.size(); ++d) inner *= s0[d];
  const std::size_t out_row = out_shape[axis] * inner;

  Tensor<T> r(out_shape);
  std::size_t offset = 0;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    const std::size_t row = p.shape()[axis] * inner;
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(p.data().data() + o * row, row, r.data().data() + o * out_row + offset);
    offset += row;
  }
  bool track = false;
  for (const auto& p : parts) track = track || p.requires_grad();
  if (track && grad_enabled()) {
    std::vector<detail::ImplPtr<T>> ins;
    for (const auto& p : parts) ins.push_back(p.impl());
    auto oi = r.impl();
    detail::record<T>("concat", ins, r, [ins, oi, offsets, outer, out_row, inner, axis] {
      for (std::size_t p = 0; p < ins.size(); ++p) {
        if (!ins[p]->requires_grad) continue;
        const std::size_t row = ins[p]->shape[axis] * inner;
        auto& g = ins[p]->grad_buffer();
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t i = 0; i < row; ++i) g[o * row + i] += oi->grad[o * out_row + offsets[p] + i];
      }
    });
  }
  return r;
}

/// Gathers along the second-to-last axis: x[..., R, C] -> out[..., idx.size(), C].
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, const std::vector<std::size_t>& idx) {
  if (x.dim() < 2) throw ShapeError("gather_rows: expected rank >= 2, got " + shape_str(x.shape()));
  if (idx.empty()) throw ShapeError("gather_rows: empty index list");
  const std::size_t rows = x.size(x.dim() - 2), cols = x.shape().back();
  for (auto i : idx)
    if (i >= rows)
      throw ShapeError("gather_rows: index " + std::to_string(i) + " out of range for " +
                       shape_str(x.shape()));
  const std::size_t batch = x.numel() / (rows * cols);
  Shape out_shape = x.shape();
  out_shape[out_shape.size() - 2] = idx.size();
  Tensor<T> r(out_shape);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t k = 0; k < idx.size(); ++k)
      std::copy_n(x.data().data() + (b * rows + idx[k]) * cols, cols,
                  r.data().data() + (b * idx.size() + k) * cols);
  if (detail::should_record({&x})) {
    auto xi = x.impl(), oi = r.impl();
    detail::record<T>("gather_rows", {xi}, r, [xi, oi, idx, rows, cols, batch] {
      auto& g = xi->grad_buffer();
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t k = 0; k < idx.size(); ++k)
          for (std::size_t c = 0; c < cols; ++c)
            g[(b * rows + idx[k]) * cols + c] += oi->grad[(b * idx.size() + k) * cols + c];
    });
  }
  return r;
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T s = T(0);
  for (auto v : a.values()) s += v;
  auto r = Tensor<T>::scalar(s);
  if (detail::should_record({&a})) {
    auto ai = a.impl(), oi = r.impl();
    detail::record<T>("sum", {ai}, r, [ai, oi] {
      auto& g = ai->grad_buffer();
      for (auto& v : g) v += oi->grad[0];
    });
  }
  return r;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

/// Sum over the last axis: [..., n] -> [...] (rank-1 input gives a scalar).
template <typename T>
Tensor<T> sum_last(const Tensor<T>& a) {
  if (a.dim() < 1) throw ShapeError("sum_last: scalar input");
  const std::size_t n = a.shape().back(), outer = a.numel() / n;
  Shape out_shape(a.shape().begin(), a.shape().end() - 1);
  Tensor<T> r(out_shape);
  for (std::size_t o = 0; o < outer; ++o) {
    T s = T(0);
    for (std::size_t i = 0; i < n; ++i) s += a[o * n + i];
    r[o] = s;
  }
  if (detail::should_record({&a})) {
    auto ai = a.impl(), oi = r.impl();
    detail::record<T>("sum_last", {ai}, r, [ai, oi, n, outer] {
      auto& g = ai->grad_buffer();
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < n; ++i) g[o * n + i] += oi->grad[o];
    });
  }
  return r;
}

/// Euclidean norm over the last axis; the gradient at a zero vector is taken as 0.
template <typename T>
Tensor<T> l2norm_last(const Tensor<T>& a) {
  if (a.dim() < 1) throw ShapeError("l2norm_last: scalar input");
  const std::size_t n = a.shape().back(), outer = a.numel() / n;
  Shape out_shape(a.shape().begin(), a.shape().end() - 1);
  Tensor<T> r(out_shape);
  for (std::size_t o = 0; o < outer; ++o) {
    T s = T(0);
    for (std::size_t i = 0; i < n; ++i) s += a[o * n + i] * a[o * n + i];
    r[o] = std::sqrt(s);
  }
  if (detail::should_record({&a})) {
    auto ai = a.impl(), oi = r.impl();
    detail::record<T>("l2norm_last", {ai}, r, [ai, oi, n, outer] {
      auto& g = ai->grad_buffer();
      for (std::size_t o = 0; o < outer; ++o) {
        const T len = oi->data[o];
        if (len <= T(0)) continue;
        for (std::size_t i = 0; i < n; ++i) g[o * n + i] += oi->grad[o] * ai->data[o * n + i] / len;
      }
    });
  }
  return r;
}

} // namespace p2m
