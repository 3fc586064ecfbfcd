#pragma once

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <initializer_list>
#include <limits>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "ff/error.hpp"
#include "ff/rng.hpp"

namespace ff {

using Shape = std::vector<size_t>;

inline size_t shape_numel(const Shape& s) {
  size_t n = 1;
  for (size_t e : s) {
    if (e == 0) throw ContractError("tensor extents must be positive");
    n *= e;
  }
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

struct TensorData {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // allocated lazily during backward
  bool requires_grad = false;
  bool on_tape = false;  // produced by a recorded op
};

// Value-semantics handle over shared storage. Copies alias the same buffer,
// which is what the tape needs; use clone() for a deep copy.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0) : d_(std::make_shared<TensorData>()) {
    const size_t n = shape_numel(shape);
    d_->shape = std::move(shape);
    d_->values.assign(n, fill);
  }

  static Tensor from(Shape shape, std::vector<double> values) {
    Tensor t;
    t.d_ = std::make_shared<TensorData>();
    const size_t n = shape_numel(shape);
    if (values.size() != n)
      throw DimensionError("value count " + std::to_string(values.size()) +
                           " does not match shape " + shape_str(shape));
    t.d_->shape = std::move(shape);
    t.d_->values = std::move(values);
    return t;
  }

  static Tensor scalar(double v) { return from({1}, {v}); }

  bool defined() const { return static_cast<bool>(d_); }
  const Shape& shape() const { return d_->shape; }
  size_t ndim() const { return d_->shape.size(); }
  size_t size() const { return d_->values.size(); }
  double* data() { return d_->values.data(); }
  const double* data() const { return d_->values.data(); }
  std::vector<double>& values() { return d_->values; }
  const std::vector<double>& values() const { return d_->values; }

  double operator[](size_t i) const { return d_->values[i]; }
  double& operator[](size_t i) { return d_->values[i]; }
  double operator()(size_t i, size_t j) const { return d_->values[i * d_->shape[1] + j]; }
  double& operator()(size_t i, size_t j) { return d_->values[i * d_->shape[1] + j]; }
  double operator()(size_t i, size_t j, size_t k) const {
    return d_->values[(i * d_->shape[1] + j) * d_->shape[2] + k];
  }
  double& operator()(size_t i, size_t j, size_t k) {
    return d_->values[(i * d_->shape[1] + j) * d_->shape[2] + k];
  }

  bool requires_grad() const { return d_->requires_grad; }
  Tensor& set_requires_grad(bool v) {
    d_->requires_grad = v;
    return *this;
  }
  bool on_tape() const { return d_->on_tape; }
  void mark_on_tape() { d_->on_tape = true; }
  // true when backward must propagate into this tensor
  bool tracked() const { return d_->requires_grad || d_->on_tape; }

  bool has_grad() const { return !d_->grad.empty(); }
  std::vector<double>& grad() {
    ensure_grad();
    return d_->grad;
  }
  const std::vector<double>& grad() const { return d_->grad; }
  void ensure_grad() {
    if (d_->grad.empty()) d_->grad.assign(d_->values.size(), 0.0);
  }
  void zero_grad() {
    if (!d_->grad.empty()) std::fill(d_->grad.begin(), d_->grad.end(), 0.0);
  }

  Tensor clone() const {
    Tensor t;
    t.d_ = std::make_shared<TensorData>();
    t.d_->shape = d_->shape;
    t.d_->values = d_->values;
    t.d_->requires_grad = d_->requires_grad;
    return t;
  }

  bool all_finite() const {
    for (double v : d_->values)
      if (!std::isfinite(v)) return false;
    return true;
  }

  TensorData* raw() const { return d_.get(); }
  std::shared_ptr<TensorData> handle() const { return d_; }

 private:
  std::shared_ptr<TensorData> d_;
};

// Leaf gradients keyed by storage identity; lets many graphs run backward
// against shared parameters concurrently without touching Tensor::grad.
using GradMap = std::unordered_map<const TensorData*, std::vector<double>>;

// Recording tape. Operations append a backward closure; backward() replays
// them in exact reverse recording order, so gradient evaluation is
// deterministic for a deterministic forward pass.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const { return recording_; }
  void set_recording(bool r) { recording_ = r; }
  size_t num_ops() const { return tape_.size(); }

  void record(const char* name, std::function<void()> fn) {
    tape_.push_back({name, std::move(fn)});
  }

  // Marks an op output as tape-owned. Its gradient buffer is reset at the
  // start of every backward sweep; only leaf gradients persist additively.
  void mark_output(Tensor& t) {
    t.mark_on_tape();
    outputs_.push_back(t.handle());
  }

  // Gradients of all requires_grad leaves land in Tensor::grad, additively.
  // Calling twice without zeroing doubles them.
  void backward(const Tensor& loss, double seed = 1.0) { run_backward(loss, nullptr, seed); }

  // Same sweep, but leaf gradients accumulate into `sink` instead of the
  // tensors themselves. Intermediates still use graph-owned buffers.
  void backward_into(const Tensor& loss, GradMap& sink, double seed = 1.0) {
    run_backward(loss, &sink, seed);
  }

  // --- used by op implementations ---

  // Accumulation target for an op input; nullptr when no gradient is needed.
  double* grad_slot(const std::shared_ptr<TensorData>& td) {
    if (!td->requires_grad && !td->on_tape) return nullptr;
    if (sink_ && !td->on_tape) {
      auto& buf = (*sink_)[td.get()];
      if (buf.empty()) buf.assign(td->values.size(), 0.0);
      return buf.data();
    }
    if (td->grad.empty()) td->grad.assign(td->values.size(), 0.0);
    return td->grad.data();
  }

  // Upstream gradient of an op output; nullptr means nothing flowed here.
  const double* grad_of(const std::shared_ptr<TensorData>& td) const {
    if (td->grad.empty()) return nullptr;
    return td->grad.data();
  }

 private:
  struct TapeEntry {
    const char* name;
    std::function<void()> backward;
  };

  void run_backward(const Tensor& loss, GradMap* sink, double seed) {
    if (!loss.defined() || loss.size() != 1)
      throw ContractError("backward requires a scalar loss tensor");
    sink_ = sink;
    for (auto& o : outputs_)
      if (!o->grad.empty()) std::fill(o->grad.begin(), o->grad.end(), 0.0);
    loss.raw()->grad.resize(1, 0.0);
    loss.raw()->grad[0] += seed;
    for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) it->backward();
    sink_ = nullptr;
  }

  std::vector<TapeEntry> tape_;
  std::vector<std::shared_ptr<TensorData>> outputs_;
  GradMap* sink_ = nullptr;
  bool recording_ = true;
};

// ---------------------------------------------------------------------------
// dense kernels (fixed summation order everywhere)
// ---------------------------------------------------------------------------
namespace kernels {

#if defined(__GLIBC__)
// Large intermediates (FFN activations, gradients) churn through malloc on
// every recorded op; keeping them inside the arena instead of mmap saves the
// page-fault tax on each training step.
inline const bool kMallocTuned = [] {
  mallopt(M_MMAP_THRESHOLD, 256 * 1024 * 1024);
  return true;
}();
#endif

// c[m x n] (+)= a[m x k] * b[k x n]
inline void mm_nn(const double* a, const double* b, double* c, size_t m, size_t k, size_t n,
                  bool accumulate) {
  size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    double* c0 = c + i * n;
    double* c1 = c0 + n;
    double* c2 = c1 + n;
    double* c3 = c2 + n;
    if (!accumulate) std::memset(c0, 0, sizeof(double) * n * 4);
    const double* a0 = a + i * k;
    for (size_t p = 0; p < k; ++p) {
      const double a0p = a0[p], a1p = a0[p + k], a2p = a0[p + 2 * k], a3p = a0[p + 3 * k];
      const double* bp = b + p * n;
      for (size_t j = 0; j < n; ++j) {
        const double bpj = bp[j];
        c0[j] += a0p * bpj;
        c1[j] += a1p * bpj;
        c2[j] += a2p * bpj;
        c3[j] += a3p * bpj;
      }
    }
  }
  for (; i < m; ++i) {
    double* ci = c + i * n;
    if (!accumulate) std::memset(ci, 0, sizeof(double) * n);
    const double* ai = a + i * k;
    for (size_t p = 0; p < k; ++p) {
      const double aip = ai[p];
      const double* bp = b + p * n;
      for (size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

inline void transpose(const double* a, double* at, size_t rows, size_t cols) {
  for (size_t i = 0; i < rows; ++i)
    for (size_t j = 0; j < cols; ++j) at[j * rows + i] = a[i * cols + j];
}

// c[m x n] (+)= a[m x k] * b[n x k]^T
inline void mm_nt(const double* a, const double* b, double* c, size_t m, size_t k, size_t n,
                  bool accumulate) {
  std::vector<double> bt(k * n);
  transpose(b, bt.data(), n, k);
  mm_nn(a, bt.data(), c, m, k, n, accumulate);
}

// c[k x n] (+)= a[m x k]^T * b[m x n], via rank-1 row updates
inline void mm_tn(const double* a, const double* b, double* c, size_t m, size_t k, size_t n,
                  bool accumulate) {
  if (!accumulate) std::memset(c, 0, sizeof(double) * k * n);
  for (size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    const double* bi = b + i * n;
    for (size_t p = 0; p < k; ++p) {
      const double aip = ai[p];
      if (aip == 0.0) continue;
      double* cp = c + p * n;
      for (size_t j = 0; j < n; ++j) cp[j] += aip * bi[j];
    }
  }
}

}  // namespace kernels

// ---------------------------------------------------------------------------
// differentiable operations
// ---------------------------------------------------------------------------
namespace ops {

inline bool track_any(const Graph& g, std::initializer_list<const Tensor*> ins) {
  if (!g.recording()) return false;
  for (const Tensor* t : ins)
    if ((*t).tracked()) return true;
  return false;
}

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shapes differ " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

namespace detail {

template <class Fwd, class Bwd>
Tensor unary(Graph& g, const Tensor& x, const char* name, Fwd fwd, Bwd bwd) {
  Tensor y(x.shape());
  const size_t n = x.size();
  const double* xs = x.data();
  double* ys = y.data();
  for (size_t i = 0; i < n; ++i) ys[i] = fwd(xs[i]);
  if (track_any(g, {&x})) {
    g.mark_output(y);
    auto xd = x.handle();
    auto yd = y.handle();
    g.record(name, [&g, xd, yd, bwd]() {
      const double* gy = g.grad_of(yd);
      if (!gy) return;
      double* gx = g.grad_slot(xd);
      if (!gx) return;
      const size_t n = xd->values.size();
      for (size_t i = 0; i < n; ++i) gx[i] += bwd(xd->values[i], yd->values[i], gy[i]);
    });
  }
  return y;
}

}  // namespace detail

inline Tensor add(Graph& g, const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  Tensor y(a.shape());
  const size_t n = a.size();
  for (size_t i = 0; i < n; ++i) y[i] = a[i] + b[i];
  if (track_any(g, {&a, &b})) {
    g.mark_output(y);
    auto ad = a.handle(), bd = b.handle(), yd = y.handle();
    g.record("add", [&g, ad, bd, yd]() {
      const double* gy = g.grad_of(yd);
      if (!gy) return;
      const size_t n = yd->values.size();
      if (double* ga = g.grad_slot(ad))
        for (size_t i = 0; i < n; ++i) ga[i] += gy[i];
      if (double* gb = g.grad_slot(bd))
        for (size_t i = 0; i < n; ++i) gb[i] += gy[i];
    });
  }
  return y;
}

inline Tensor sub(Graph& g, const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  Tensor y(a.shape());
  const size_t n = a.size();
  for (size_t i = 0; i < n; ++i) y[i] = a[i] - b[i];
  if (track_any(g, {&a, &b})) {
    g.mark_output(y);
    auto ad = a.handle(), bd = b.handle(), yd = y.handle();
    g.record("sub", [&g, ad, bd, yd]() {
      const double* gy = g.grad_of(yd);
      if (!gy) return;
      const size_t n = yd->values.size();
      if (double* ga = g.grad_slot(ad))
        for (size_t i = 0; i < n; ++i) ga[i] += gy[i];
      if (double* gb = g.grad_slot(bd))
        for (size_t i = 0; i < n; ++i) gb[i] -= gy[i];
    });
  }
  return y;
}

inline Tensor mul(Graph& g, const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  Tensor y(a.shape());
  const size_t n = a.size();
  for (size_t i = 0; i < n; ++i) y[i] = a[i] * b[i];
  if (track_any(g, {&a, &b})) {
    g.mark_output(y);
    auto ad = a.handle(), bd = b.handle(), yd = y.handle();
    g.record("mul", [&g, ad, bd, yd]() {
      const double* gy = g.grad_of(yd);
      if (!gy) return;
      const size_t n = yd->values.size();
      if (double* ga = g.grad_slot(ad))
        for (size_t i = 0; i < n; ++i) ga[i] += gy[i] * bd->values[i];
      if (double* gb = g.grad_slot(bd))
        for (size_t i = 0; i < n; ++i) gb[i] += gy[i] * ad->values[i];
    });
  }
  return y;
}

inline Tensor div(Graph& g, const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "div");
  Tensor y(a.shape());
  const size_t n = a.size();
  for (size_t i = 0; i < n; ++i) y[i] = a[i] / b[i];
  if (track_any(g, {&a, &b})) {
    g.mark_output(y);
    auto ad = a.handle(), bd = b.handle(), yd = y.handle();
    g.record("div", [&g, ad, bd, yd]() {
      const double* gy = g.grad_of(yd);
      if (!gy) return;
      const size_t n = yd->values.size();
      if (double* ga = g.grad_slot(ad))
        for (size_t i = 0; i < n; ++i) ga[i] += gy[i] / bd->values[i];
      if (double* gb = g.grad_slot(bd))
        for (size_t i = 0; i < n; ++i)
          gb[i] -= gy[i] * ad->values[i] / (bd->values[i] * bd->values[i]);
    });
  }
  return y;
}

inline Tensor scale(Graph& g, const Tensor& x, double c) {
  return detail::unary(
      g, x, "scale", [c](double v) { return v * c; },
      [c](double, double, double gy) { return gy * c; });
}

inline Tensor add_const(Graph& g, const Tensor& x, double c) {
  return detail::unary(
      g, x, "add_const", [c](double v) { return v + c; },
      [](double, double, double gy) { return gy; });
}

inline Tensor relu(Graph& g, const Tensor& x) {
  return detail::unary(
      g, x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
      [](double xv, double, double gy) { return xv > 0.0 ? gy : 0.0; });
}

// exact GELU: x * Phi(x); smooth everywhere, which keeps end-to-end
// finite-difference checks clean
inline Tensor gelu(Graph& g, const Tensor& x) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  return detail::unary(
      g, x, "gelu",
      [](double v) { return 0.5 * v * (1.0 + std::erf(v * kInvSqrt2)); },
      [](double xv, double, double gy) {
        const double phi_cdf = 0.5 * (1.0 + std::erf(xv * kInvSqrt2));
        const double phi_pdf = kInvSqrt2Pi * std::exp(-0.5 * xv * xv);
        return gy * (phi_cdf + xv * phi_pdf);
      });
}

inline Tensor sigmoid(Graph& g, const Tensor& x) {
  return detail::unary(
      g, x, "sigmoid",
      [](double v) {
        if (v >= 0.0) {
          const double e = std::exp(-v);
          return 1.0 / (1.0 + e);
        }
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double yv, double gy) { return gy * yv * (1.0 - yv); });
}

inline Tensor vexp(Graph& g, const Tensor& x) {
  return detail::unary(
      g, x, "exp", [](double v) { return std::exp(v); },
      [](double, double yv, double gy) { return gy * yv; });
}

inline Tensor vlog(Graph& g, const Tensor& x) {
  return detail::unary(
      g, x, "log", [](double v) { return std::log(v); },
      [](double xv, double, double gy) { return gy / xv; });
}

// Subgradient 0 at the origin so flat regions stay flat.
inline Tensor vsqrt(Graph& g, const Tensor& x) {
  return detail::unary(
      g, x, "sqrt", [](double v) { return std::sqrt(v); },
      [](double, double yv, double gy) { return yv > 0.0 ? gy * 0.5 / yv : 0.0; });
}

inline Tensor vabs(Graph& g, const Tensor& x) {
  return detail::unary(
      g, x, "abs", [](double v) { return std::fabs(v); },
      [](double xv, double, double gy) { return xv > 0.0 ? gy : (xv < 0.0 ? -gy : 0.0); });
}

inline Tensor matmul(Graph& g, const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.shape()[1] != b.shape()[0])
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  const size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  Tensor c({m, n});
  kernels::mm_nn(a.data(), b.data(), c.data(), m, k, n, false);
  if (track_any(g, {&a, &b})) {
    g.mark_output(c);
    auto ad = a.handle(), bd = b.handle(), cd = c.handle();
    g.record("matmul", [&g, ad, bd, cd, m, k, n]() {
      const double* gc = g.grad_of(cd);
      if (!gc) return;
      if (double* ga = g.grad_slot(ad))
        kernels::mm_nt(gc, bd->values.data(), ga, m, n, k, true);  // dA = dC * B^T
      if (double* gb = g.grad_slot(bd))
        kernels::mm_tn(ad->values.data(), gc, gb, m, k, n, true);  // dB = A^T * dC
    });
  }
  return c;
}

// c = a * b^T with a[m x k], b[n x k]
inline Tensor matmul_nt(Graph& g, const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.shape()[1] != b.shape()[1])
    throw DimensionError("matmul_nt: incompatible shapes " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  const size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[0];
  Tensor c({m, n});
  kernels::mm_nt(a.data(), b.data(), c.data(), m, k, n, false);
  if (track_any(g, {&a, &b})) {
    g.mark_output(c);
    auto ad = a.handle(), bd = b.handle(), cd = c.handle();
    g.record("matmul_nt", [&g, ad, bd, cd, m, k, n]() {
      const double* gc = g.grad_of(cd);
      if (!gc) return;
      if (double* ga = g.grad_slot(ad))
        kernels::mm_nn(gc, bd->values.data(), ga, m, n, k, true);  // dA = dC * B
      if (double* gb = g.grad_slot(bd))
        kernels::mm_tn(gc, ad->values.data(), gb, m, n, k, true);  // dB = dC^T * A
    });
  }
  return c;
}

inline Tensor add_rowvec(Graph& g, const Tensor& x, const Tensor& v) {
  if (x.ndim() != 2 || v.ndim() != 1 || v.shape()[0] != x.shape()[1])
    throw DimensionError("add_rowvec: " + shape_str(x.shape()) + " vs " + shape_str(v.shape()));
  const size_t m = x.shape()[0], n = x.shape()[1];
  Tensor y({m, n});
  for (size_t i = 0; i < m; ++i)
    for (size_t j = 0; j < n; ++j) y(i, j) = x(i, j) + v[j];
  if (track_any(g, {&x, &v})) {
    g.mark_output(y);
    auto xd = x.handle(), vd = v.handle(), yd = y.handle();
    g.record("add_rowvec", [&g, xd, vd, yd, m, n]() {
      const double* gy = g.grad_of(yd);
      if (!gy) return;
      if (double* gx = g.grad_slot(xd))
        for (size_t i = 0; i < m * n; ++i) gx[i] += gy[i];
      if (double* gv = g.grad_slot(vd))
        for (size_t i = 0; i < m; ++i)
          for (size_t j = 0; j < n; ++j) gv[j] += gy[i * n + j];
    });
  }
  return y;
}

// y = x @ w + b, the Linear layer building block
inline Tensor linear(Graph& g, const Tensor& x, const Tensor& w, const Tensor& b) {
  return add_rowvec(g, matmul(g, x, w), b);
}

inline Tensor softmax_rows(Graph& g, const Tensor& x) {
  if (x.ndim() != 2) throw DimensionError("softmax_rows expects a 2-d tensor");
  const size_t m = x.shape()[0], n = x.shape()[1];
  Tensor y({m, n});
  for (size_t i = 0; i < m; ++i) {
    const double* xi = x.data() + i * n;
    double* yi = y.data() + i * n;
    double mx = xi[0];
    for (size_t j = 1; j < n; ++j) mx = std::max(mx, xi[j]);
    double s = 0.0;
    for (size_t j = 0; j < n; ++j) {
      yi[j] = std::exp(xi[j] - mx);
      s += yi[j];
    }
    const double inv = 1.0 / s;
    for (size_t j = 0; j < n; ++j) yi[j] *= inv;
  }
  if (track_any(g, {&x})) {
    g.mark_output(y);
    auto xd = x.handle(), yd = y.handle();
    g.record("softmax_rows", [&g, xd, yd, m, n]() {
      const double* gy = g.grad_of(yd);
      if (!gy) return;
      double* gx = g.grad_slot(xd);
      if (!gx) return;
      for (size_t i = 0; i < m; ++i) {
        const double* yi = yd->values.data() + i * n;
        const double* gyi = gy + i * n;
        double dot = 0.0;
        for (size_t j = 0; j < n; ++j) dot += gyi[j] * yi[j];
        double* gxi = gx + i * n;
        for (size_t j = 0; j < n; ++j) gxi[j] += yi[j] * (gyi[j] - dot);
      }
    });
  }
  return y;
}

constexpr double kLayerNormEps = 1e-10;

// Row-wise layernorm with affine parameters.
inline Tensor layernorm_rows(Graph& g, const Tensor& x, const Tensor& gamma, const Tensor& beta) {
  if (x.ndim() != 2) throw DimensionError("layernorm_rows expects a 2-d tensor");
  const size_t m = x.shape()[0], n = x.shape()[1];
  if (gamma.size() != n || beta.size() != n)
    throw DimensionError("layernorm_rows: affine size mismatch");
  Tensor y({m, n});
  std::vector<double> inv_sd(m), xhat(m * n);
  for (size_t i = 0; i < m; ++i) {
    const double* xi = x.data() + i * n;
    double mu = 0.0;
    for (size_t j = 0; j < n; ++j) mu += xi[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (size_t j = 0; j < n; ++j) {
      const double d = xi[j] - mu;
      var += d * d;
    }
    var /= static_cast<double>(n);
    const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
    inv_sd[i] = inv;
    double* xh = xhat.data() + i * n;
    double* yi = y.data() + i * n;
    for (size_t j = 0; j < n; ++j) {
      xh[j] = (xi[j] - mu) * inv;
      yi[j] = xh[j] * gamma[j] + beta[j];
    }
  }
  if (track_any(g, {&x, &gamma, &beta})) {
    g.mark_output(y);
    auto xd = x.handle(), gd = gamma.handle(), bd = beta.handle(), yd = y.handle();
    auto xh = std::make_shared<std::vector<double>>(std::move(xhat));
    auto isd = std::make_shared<std::vector<double>>(std::move(inv_sd));
    g.record("layernorm", [&g, xd, gd, bd, yd, xh, isd, m, n]() {
      const double* gy = g.grad_of(yd);
      if (!gy) return;
      double* ggamma = g.grad_slot(gd);
      double* gbeta = g.grad_slot(bd);
      double* gx = g.grad_slot(xd);
      for (size_t i = 0; i < m; ++i) {
        const double* gyi = gy + i * n;
        const double* xhi = xh->data() + i * n;
        if (ggamma)
          for (size_t j = 0; j < n; ++j) ggamma[j] += gyi[j] * xhi[j];
        if (gbeta)
          for (size_t j = 0; j < n; ++j) gbeta[j] += gyi[j];
        if (gx) {
          double sum_t = 0.0, sum_tx = 0.0;
          for (size_t j = 0; j < n; ++j) {
            const double t = gyi[j] * gd->values[j];
            sum_t += t;
            sum_tx += t * xhi[j];
          }
          const double inv_n = 1.0 / static_cast<double>(n);
          double* gxi = gx + i * n;
          for (size_t j = 0; j < n; ++j) {
            const double t = gyi[j] * gd->values[j];
            gxi[j] += (*isd)[i] * (t - sum_t * inv_n - xhi[j] * sum_tx * inv_n);
          }
        }
      }
    });
  }
  return y;
}

inline Tensor sum_all(Graph& g, const Tensor& x) {
  double s = 0.0;
  for (size_t i = 0; i < x.size(); ++i) s += x[i];
  Tensor y = Tensor::scalar(s);
  if (track_any(g, {&x})) {
    g.mark_output(y);
    auto xd = x.handle(), yd = y.handle();
    g.record("sum_all", [&g, xd, yd]() {
      const double* gy = g.grad_of(yd);
      if (!gy) return;
      if (double* gx = g.grad_slot(xd))
        for (size_t i = 0; i < xd->values.size(); ++i) gx[i] += gy[0];
    });
  }
  return y;
}

inline Tensor mean_all(Graph& g, const Tensor& x) {
  const double inv = 1.0 / static_cast<double>(x.size());
  double s = 0.0;
  for (size_t i = 0; i < x.size(); ++i) s += x[i];
  Tensor y = Tensor::scalar(s * inv);
  if (track_any(g, {&x})) {
    g.mark_output(y);
    auto xd = x.handle(), yd = y.handle();
    g.record("mean_all", [&g, xd, yd, inv]() {
      const double* gy = g.grad_of(yd);
      if (!gy) return;
      if (double* gx = g.grad_slot(xd))
        for (size_t i = 0; i < xd->values.size(); ++i) gx[i] += gy[0] * inv;
    });
  }
  return y;
}

// column means: [m x n] -> [1 x n]; global average pooling over tokens
inline Tensor mean_rows(Graph& g, const Tensor& x) {
  if (x.ndim() != 2) throw DimensionError("mean_rows expects a 2-d tensor");
  const size_t m = x.shape()[0], n = x.shape()[1];
  const double inv = 1.0 / static_cast<double>(m);
  Tensor y({1, n});
  for (size_t i = 0; i < m; ++i)
    for (size_t j = 0; j < n; ++j) y[j] += x(i, j);
  for (size_t j = 0; j < n; ++j) y[j] *= inv;
  if (track_any(g, {&x})) {
    g.mark_output(y);
    auto xd = x.handle(), yd = y.handle();
    g.record("mean_rows", [&g, xd, yd, m, n, inv]() {
      const double* gy = g.grad_of(yd);
      if (!gy) return;
      if (double* gx = g.grad_slot(xd))
        for (size_t i = 0; i < m; ++i)
          for (size_t j = 0; j < n; ++j) gx[i * n + j] += gy[j] * inv;
    });
  }
  return y;
}

inline Tensor reshape(Graph& g, const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.size())
    throw DimensionError("reshape: element count mismatch " + shape_str(x.shape()) + " -> " +
                         shape_str(shape));
  Tensor y = Tensor::from(std::move(shape), x.values());
  if (track_any(g, {&x})) {
    g.mark_output(y);
    auto xd = x.handle(), yd = y.handle();
    g.record("reshape", [&g, xd, yd]() {
      const double* gy = g.grad_of(yd);
      if (!gy) return;
      if (double* gx = g.grad_slot(xd))
        for (size_t i = 0; i < xd->values.size(); ++i) gx[i] += gy[i];
    });
  }
  return y;
}

// concatenation along the last axis; all leading dims must match
inline Tensor concat_last(Graph& g, const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("concat_last: no inputs");
  Shape lead = parts[0].shape();
  lead.pop_back();
  size_t total = 0;
  for (const Tensor& t : parts) {
    Shape l = t.shape();
    const size_t c = l.back();
    l.pop_back();
    if (l != lead) throw DimensionError("concat_last: leading dims differ");
    total += c;
  }
  size_t rows = 1;
  for (size_t e : lead) rows *= e;
  Shape out_shape = lead;
  out_shape.push_back(total);
  Tensor y(out_shape);
  size_t off = 0;
  for (const Tensor& t : parts) {
    const size_t c = t.shape().back();
    for (size_t r = 0; r < rows; ++r)
      std::memcpy(y.data() + r * total + off, t.data() + r * c, sizeof(double) * c);
    off += c;
  }
  bool tracked = false;
  for (const Tensor& t : parts) tracked = tracked || t.tracked();
  if (g.recording() && tracked) {
    g.mark_output(y);
    std::vector<std::shared_ptr<TensorData>> hs;
    for (const Tensor& t : parts) hs.push_back(t.handle());
    auto yd = y.handle();
    g.record("concat_last", [&g, hs, yd, rows, total]() {
      const double* gy = g.grad_of(yd);
      if (!gy) return;
      size_t off = 0;
      for (const auto& h : hs) {
        const size_t c = h->shape.back();
        if (double* gp = g.grad_slot(h))
          for (size_t r = 0; r < rows; ++r)
            for (size_t j = 0; j < c; ++j) gp[r * c + j] += gy[r * total + off + j];
        off += c;
      }
    });
  }
  return y;
}

// column slice [c0, c1) along the last axis
inline Tensor slice_last(Graph& g, const Tensor& x, size_t c0, size_t c1) {
  const size_t c = x.shape().back();
  if (c0 >= c1 || c1 > c) throw DimensionError("slice_last: bad column range");
  Shape out_shape = x.shape();
  out_shape.back() = c1 - c0;
  size_t rows = x.size() / c;
  Tensor y(out_shape);
  const size_t w = c1 - c0;
  for (size_t r = 0; r < rows; ++r)
    std::memcpy(y.data() + r * w, x.data() + r * c + c0, sizeof(double) * w);
  if (track_any(g, {&x})) {
    g.mark_output(y);
    auto xd = x.handle(), yd = y.handle();
    g.record("slice_last", [&g, xd, yd, rows, c, c0, w]() {
      const double* gy = g.grad_of(yd);
      if (!gy) return;
      if (double* gx = g.grad_slot(xd))
        for (size_t r = 0; r < rows; ++r)
          for (size_t j = 0; j < w; ++j) gx[r * c + c0 + j] += gy[r * w + j];
    });
  }
  return y;
}

// global maximum -> [1]; gradient routes to the first argmax in scan order
inline Tensor max_all(Graph& g, const Tensor& x) {
  size_t arg = 0;
  double best = x[0];
  for (size_t i = 1; i < x.size(); ++i)
    if (x[i] > best) {
      best = x[i];
      arg = i;
    }
  Tensor y = Tensor::scalar(best);
  if (track_any(g, {&x})) {
    g.mark_output(y);
    auto xd = x.handle(), yd = y.handle();
    g.record("max_all", [&g, xd, yd, arg]() {
      const double* gy = g.grad_of(yd);
      if (!gy) return;
      if (double* gx = g.grad_slot(xd)) gx[arg] += gy[0];
    });
  }
  return y;
}

// y = x / s with scalar tensor s ([1])
inline Tensor div_scalar(Graph& g, const Tensor& x, const Tensor& s) {
  if (s.size() != 1) throw DimensionError("div_scalar: divisor must be a scalar tensor");
  Tensor y(x.shape());
  const double sv = s[0];
  for (size_t i = 0; i < x.size(); ++i) y[i] = x[i] / sv;
  if (track_any(g, {&x, &s})) {
    g.mark_output(y);
    auto xd = x.handle(), sd = s.handle(), yd = y.handle();
    g.record("div_scalar", [&g, xd, sd, yd]() {
      const double* gy = g.grad_of(yd);
      if (!gy) return;
      const double sv = sd->values[0];
      if (double* gx = g.grad_slot(xd))
        for (size_t i = 0; i < xd->values.size(); ++i) gx[i] += gy[i] / sv;
      if (double* gs = g.grad_slot(sd)) {
        double acc = 0.0;
        for (size_t i = 0; i < xd->values.size(); ++i) acc -= gy[i] * xd->values[i] / (sv * sv);
        gs[0] += acc;
      }
    });
  }
  return y;
}

inline Tensor pick(Graph& g, const Tensor& x, size_t index) {
  if (index >= x.size()) throw DimensionError("pick: index out of range");
  Tensor y = Tensor::scalar(x[index]);
  if (track_any(g, {&x})) {
    g.mark_output(y);
    auto xd = x.handle(), yd = y.handle();
    g.record("pick", [&g, xd, yd, index]() {
      const double* gy = g.grad_of(yd);
      if (!gy) return;
      if (double* gx = g.grad_slot(xd)) gx[index] += gy[0];
    });
  }
  return y;
}

enum class Pad { Same, Valid };

// Cross-correlation (no kernel flip), channel-last layout.
// x: [H x W x Cin], k: [kh x kw x Cin x Cout].
inline Tensor conv2d(Graph& g, const Tensor& x, const Tensor& k, Pad pad = Pad::Same) {
  if (x.ndim() != 3 || k.ndim() != 4) throw DimensionError("conv2d: need x[HxWxC], k[khxkwxCixCo]");
  const size_t H = x.shape()[0], W = x.shape()[1], Ci = x.shape()[2];
  const size_t kh = k.shape()[0], kw = k.shape()[1];
  if (k.shape()[2] != Ci)
    throw DimensionError("conv2d: channel mismatch, input " + shape_str(x.shape()) + " kernel " +
                         shape_str(k.shape()));
  const size_t Co = k.shape()[3];
  if (pad == Pad::Same && (kh % 2 == 0 || kw % 2 == 0))
    throw ContractError("conv2d: same-padding requires odd kernel extents");
  const size_t oh = pad == Pad::Same ? H : H - kh + 1;
  const size_t ow = pad == Pad::Same ? W : W - kw + 1;
  if (pad == Pad::Valid && (H < kh || W < kw)) throw DimensionError("conv2d: kernel larger than input");
  const long ph = pad == Pad::Same ? static_cast<long>(kh / 2) : 0;
  const long pw = pad == Pad::Same ? static_cast<long>(kw / 2) : 0;

  Tensor y({oh, ow, Co});
  const double* xs = x.data();
  const double* ks = k.data();
  double* ys = y.data();
  for (size_t oy = 0; oy < oh; ++oy) {
    for (size_t ox = 0; ox < ow; ++ox) {
      double* out = ys + (oy * ow + ox) * Co;
      for (size_t ky = 0; ky < kh; ++ky) {
        const long iy = static_cast<long>(oy + ky) - ph;
        if (iy < 0 || iy >= static_cast<long>(H)) continue;
        for (size_t kx = 0; kx < kw; ++kx) {
          const long ix = static_cast<long>(ox + kx) - pw;
          if (ix < 0 || ix >= static_cast<long>(W)) continue;
          const double* in = xs + (static_cast<size_t>(iy) * W + static_cast<size_t>(ix)) * Ci;
          const double* kk = ks + (ky * kw + kx) * Ci * Co;
          for (size_t ci = 0; ci < Ci; ++ci) {
            const double xv = in[ci];
            if (xv == 0.0) continue;
            const double* kc = kk + ci * Co;
            for (size_t co = 0; co < Co; ++co) out[co] += xv * kc[co];
          }
        }
      }
    }
  }
  if (track_any(g, {&x, &k})) {
    g.mark_output(y);
    auto xd = x.handle(), kd = k.handle(), yd = y.handle();
    g.record("conv2d", [&g, xd, kd, yd, H, W, Ci, kh, kw, Co, oh, ow, ph, pw]() {
      const double* gy = g.grad_of(yd);
      if (!gy) return;
      double* gx = g.grad_slot(xd);
      double* gk = g.grad_slot(kd);
      if (!gx && !gk) return;
      for (size_t oy = 0; oy < oh; ++oy) {
        for (size_t ox = 0; ox < ow; ++ox) {
          const double* go = gy + (oy * ow + ox) * Co;
          for (size_t ky = 0; ky < kh; ++ky) {
            const long iy = static_cast<long>(oy + ky) - ph;
            if (iy < 0 || iy >= static_cast<long>(H)) continue;
            for (size_t kx = 0; kx < kw; ++kx) {
              const long ix = static_cast<long>(ox + kx) - pw;
              if (ix < 0 || ix >= static_cast<long>(W)) continue;
              const size_t xoff = (static_cast<size_t>(iy) * W + static_cast<size_t>(ix)) * Ci;
              const size_t koff = (ky * kw + kx) * Ci * Co;
              for (size_t ci = 0; ci < Ci; ++ci) {
                const double xv = xd->values[xoff + ci];
                double acc = 0.0;
                const double* kc = kd->values.data() + koff + ci * Co;
                double* gkc = gk ? gk + koff + ci * Co : nullptr;
                for (size_t co = 0; co < Co; ++co) {
                  const double go_co = go[co];
                  acc += go_co * kc[co];
                  if (gkc) gkc[co] += go_co * xv;
                }
                if (gx) gx[xoff + ci] += acc;
              }
            }
          }
        }
      }
    });
  }
  return y;
}

namespace detail {
struct LerpCoord {
  size_t i0, i1;
  double f;
};
inline LerpCoord lerp_coord(size_t out_i, size_t n_out, size_t n_in) {
  double s = (static_cast<double>(out_i) + 0.5) * static_cast<double>(n_in) /
                 static_cast<double>(n_out) -
             0.5;
  if (s < 0.0) s = 0.0;
  const double mx = static_cast<double>(n_in - 1);
  if (s > mx) s = mx;
  const size_t i0 = static_cast<size_t>(s);
  const size_t i1 = std::min(i0 + 1, n_in - 1);
  return {i0, i1, s - static_cast<double>(i0)};
}
}  // namespace detail

// Bilinear resampling, align-corners=false, edges clamped. Constant inputs
// stay constant bit-exactly (lerp form) and identity sizes copy exactly.
inline Tensor bilinear_resize(Graph& g, const Tensor& x, size_t oh, size_t ow) {
  if (x.ndim() != 3) throw DimensionError("bilinear_resize expects [H x W x C]");
  if (oh == 0 || ow == 0) throw ContractError("bilinear_resize: degenerate target size");
  const size_t H = x.shape()[0], W = x.shape()[1], C = x.shape()[2];
  Tensor y({oh, ow, C});
  std::vector<detail::LerpCoord> ys_c(oh), xs_c(ow);
  for (size_t i = 0; i < oh; ++i) ys_c[i] = detail::lerp_coord(i, oh, H);
  for (size_t j = 0; j < ow; ++j) xs_c[j] = detail::lerp_coord(j, ow, W);
  const double* xs = x.data();
  for (size_t i = 0; i < oh; ++i) {
    const auto& cy = ys_c[i];
    for (size_t j = 0; j < ow; ++j) {
      const auto& cx = xs_c[j];
      const double* v00 = xs + (cy.i0 * W + cx.i0) * C;
      const double* v01 = xs + (cy.i0 * W + cx.i1) * C;
      const double* v10 = xs + (cy.i1 * W + cx.i0) * C;
      const double* v11 = xs + (cy.i1 * W + cx.i1) * C;
      double* out = y.data() + (i * ow + j) * C;
      for (size_t c = 0; c < C; ++c) {
        const double top = v00[c] + cx.f * (v01[c] - v00[c]);
        const double bot = v10[c] + cx.f * (v11[c] - v10[c]);
        out[c] = top + cy.f * (bot - top);
      }
    }
  }
  if (track_any(g, {&x})) {
    g.mark_output(y);
    auto xd = x.handle(), yd = y.handle();
    auto yc = std::make_shared<std::vector<detail::LerpCoord>>(std::move(ys_c));
    auto xc = std::make_shared<std::vector<detail::LerpCoord>>(std::move(xs_c));
    g.record("bilinear_resize", [&g, xd, yd, yc, xc, W, C, oh, ow]() {
      const double* gy = g.grad_of(yd);
      if (!gy) return;
      double* gx = g.grad_slot(xd);
      if (!gx) return;
      for (size_t i = 0; i < oh; ++i) {
        const auto& cy = (*yc)[i];
        for (size_t j = 0; j < ow; ++j) {
          const auto& cx = (*xc)[j];
          const double w00 = (1.0 - cx.f) * (1.0 - cy.f);
          const double w01 = cx.f * (1.0 - cy.f);
          const double w10 = (1.0 - cx.f) * cy.f;
          const double w11 = cx.f * cy.f;
          const double* go = gy + (i * ow + j) * C;
          for (size_t c = 0; c < C; ++c) {
            gx[(cy.i0 * W + cx.i0) * C + c] += w00 * go[c];
            gx[(cy.i0 * W + cx.i1) * C + c] += w01 * go[c];
            gx[(cy.i1 * W + cx.i0) * C + c] += w10 * go[c];
            gx[(cy.i1 * W + cx.i1) * C + c] += w11 * go[c];
          }
        }
      }
    });
  }
  return y;
}

// Sliding-window maximum over a (2r+1)^2 neighbourhood, borders clamped.
// Gradient routes to the first maximum in scan order.
inline Tensor window_max(Graph& g, const Tensor& x, size_t radius) {
  if (x.ndim() != 2) throw DimensionError("window_max expects [H x W]");
  const size_t H = x.shape()[0], W = x.shape()[1];
  const long r = static_cast<long>(radius);
  Tensor y({H, W});
  std::vector<uint32_t> argmax(H * W);
  for (size_t i = 0; i < H; ++i) {
    for (size_t j = 0; j < W; ++j) {
      double best = -std::numeric_limits<double>::infinity();
      size_t best_idx = 0;
      for (long dy = -r; dy <= r; ++dy) {
        const long yy = std::clamp<long>(static_cast<long>(i) + dy, 0, static_cast<long>(H) - 1);
        for (long dx = -r; dx <= r; ++dx) {
          const long xx = std::clamp<long>(static_cast<long>(j) + dx, 0, static_cast<long>(W) - 1);
          const size_t idx = static_cast<size_t>(yy) * W + static_cast<size_t>(xx);
          if (x[idx] > best) {
            best = x[idx];
            best_idx = idx;
          }
        }
      }
      y[i * W + j] = best;
      argmax[i * W + j] = static_cast<uint32_t>(best_idx);
    }
  }
  if (track_any(g, {&x})) {
    g.mark_output(y);
    auto xd = x.handle(), yd = y.handle();
    auto am = std::make_shared<std::vector<uint32_t>>(std::move(argmax));
    g.record("window_max", [&g, xd, yd, am]() {
      const double* gy = g.grad_of(yd);
      if (!gy) return;
      if (double* gx = g.grad_slot(xd))
        for (size_t i = 0; i < am->size(); ++i) gx[(*am)[i]] += gy[i];
    });
  }
  return y;
}

// Numerically stable binary cross-entropy from logits, averaged over all
// elements; `target` is a constant tensor of the same shape.
inline Tensor bce_with_logits_mean(Graph& g, const Tensor& z, const Tensor& target) {
  check_same_shape(z, target, "bce_with_logits_mean");
  const size_t n = z.size();
  const double inv = 1.0 / static_cast<double>(n);
  double s = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double zv = z[i], t = target[i];
    s += std::max(zv, 0.0) - zv * t + std::log1p(std::exp(-std::fabs(zv)));
  }
  Tensor y = Tensor::scalar(s * inv);
  if (track_any(g, {&z})) {
    g.mark_output(y);
    auto zd = z.handle(), td = target.handle(), yd = y.handle();
    g.record("bce_with_logits", [&g, zd, td, yd, n, inv]() {
      const double* gy = g.grad_of(yd);
      if (!gy) return;
      if (double* gz = g.grad_slot(zd))
        for (size_t i = 0; i < n; ++i) {
          const double zv = zd->values[i];
          const double sg = zv >= 0.0 ? 1.0 / (1.0 + std::exp(-zv))
                                      : std::exp(zv) / (1.0 + std::exp(zv));
          gz[i] += gy[0] * (sg - td->values[i]) * inv;
        }
    });
  }
  return y;
}

// Cross-entropy of a single sample from raw logits (log-sum-exp form).
inline Tensor ce_from_logits(Graph& g, const Tensor& z, size_t target_class) {
  const size_t n = z.size();
  if (target_class >= n) throw ContractError("ce_from_logits: class index out of range");
  double mx = z[0];
  for (size_t i = 1; i < n; ++i) mx = std::max(mx, z[i]);
  double se = 0.0;
  for (size_t i = 0; i < n; ++i) se += std::exp(z[i] - mx);
  const double lse = mx + std::log(se);
  Tensor y = Tensor::scalar(lse - z[target_class]);
  if (track_any(g, {&z})) {
    g.mark_output(y);
    auto zd = z.handle(), yd = y.handle();
    g.record("ce_from_logits", [&g, zd, yd, n, target_class]() {
      const double* gy = g.grad_of(yd);
      if (!gy) return;
      double* gz = g.grad_slot(zd);
      if (!gz) return;
      double mx = zd->values[0];
      for (size_t i = 1; i < n; ++i) mx = std::max(mx, zd->values[i]);
      double se = 0.0;
      for (size_t i = 0; i < n; ++i) se += std::exp(zd->values[i] - mx);
      for (size_t i = 0; i < n; ++i) {
        const double p = std::exp(zd->values[i] - mx) / se;
        gz[i] += gy[0] * (p - (i == target_class ? 1.0 : 0.0));
      }
    });
  }
  return y;
}

}  // namespace ops

// uniform(-sqrt(1/fan_in), +sqrt(1/fan_in)) initialization for learned
// weights; biases are zero-initialized elsewhere
inline Tensor uniform_init(Shape shape, size_t fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
  for (size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-bound, bound);
  return t;
}

// ---------------------------------------------------------------------------
// finite-difference oracle
// ---------------------------------------------------------------------------

// Central-difference gradient check. `f` must rebuild its graph from x on
// every call and return the scalar output. Returns the max over checked
// coordinates of |analytic - numeric| / max(1e-12, |analytic| + |numeric|).
// With max_coords > 0 a deterministic random subset of coordinates is
// checked (for large end-to-end compositions).
inline double finite_diff_check(const std::function<Tensor(Graph&, const Tensor&)>& f, Tensor x,
                                double h = 1e-5, size_t max_coords = 0, uint64_t seed = 1) {
  x.set_requires_grad(true);
  x.zero_grad();
  std::vector<double> analytic;
  {
    Graph g;
    Tensor loss = f(g, x);
    g.backward(loss);
    analytic = x.grad();
  }
  std::vector<size_t> coords;
  const size_t n = x.size();
  if (max_coords == 0 || max_coords >= n) {
    coords.resize(n);
    for (size_t i = 0; i < n; ++i) coords[i] = i;
  } else {
    Rng rng(derive_seed(seed, 0x66d, n));
    std::vector<size_t> all(n);
    for (size_t i = 0; i < n; ++i) all[i] = i;
    for (size_t i = 0; i < max_coords; ++i) {
      const size_t j = i + static_cast<size_t>(rng.below(n - i));
      std::swap(all[i], all[j]);
    }
    coords.assign(all.begin(), all.begin() + static_cast<long>(max_coords));
  }
  auto eval = [&]() -> double {
    Graph g;
    g.set_recording(false);
    Tensor loss = f(g, x);
    return loss[0];
  };
  double worst = 0.0;
  for (size_t c : coords) {
    const double orig = x[c];
    x[c] = orig + h;
    const double fp = eval();
    x[c] = orig - h;
    const double fm = eval();
    x[c] = orig;
    const double numeric = (fp - fm) / (2.0 * h);
    const double a = analytic[c];
    const double rel = std::fabs(a - numeric) / std::max(1e-12, std::fabs(a) + std::fabs(numeric));
    worst = std::max(worst, rel);
  }
  return worst;
}

}  // namespace ff
