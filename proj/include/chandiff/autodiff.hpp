#pragma once

// Tape-based reverse-mode differentiation over batched dense tensors.
//
// Every op appends a node holding its value and a closure that scatters the
// node's gradient into its inputs. Nodes are appended in evaluation order, so
// a reverse sweep over the tape is a valid topological order. A tape built
// with record = false keeps values only.

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>
#include <initializer_list>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "chandiff/errors.hpp"
#include "chandiff/tensor.hpp"

namespace chandiff::nn {

template <class S>
struct Parameter {
  std::string name;
  Tensor<S> value;
  Tensor<S> grad;

  Parameter() = default;
  Parameter(std::string n, Tensor<S> v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

  void zero_grad() {
    if (grad.size() != value.size()) grad = Tensor<S>(value.shape());
    grad.fill(S(0));
  }
};

template <class S>
class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
template <class S>
class Var {
 public:
  Var() = default;
  Var(Tape<S>* tape, int id) : tape_(tape), id_(id) {}

  bool valid() const noexcept { return tape_ != nullptr; }
  Tape<S>* tape() const noexcept { return tape_; }
  int id() const noexcept { return id_; }

  const Tensor<S>& value() const { return tape_->value(id_); }
  Tensor<S>& grad() const { return tape_->grad(id_); }
  bool needs_grad() const { return tape_->needs_grad(id_); }
  const std::vector<int>& shape() const { return value().shape(); }
  int dim(int i) const { return value().dim(i); }

 private:
  Tape<S>* tape_ = nullptr;
  int id_ = -1;
};

template <class S>
class Tape {
 public:
  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const noexcept { return record_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  Var<S> constant(Tensor<S> v) { return push_node(std::move(v), false, nullptr); }

  /// Differentiable leaf whose gradient is read back by the caller.
  Var<S> variable(Tensor<S> v) { return push_node(std::move(v), record_, nullptr); }

  /// Leaf bound to a parameter; backward() adds its gradient into p.grad.
  Var<S> param(Parameter<S>& p) {
    Var<S> v = push_node(p.value, record_, nullptr);
    nodes_.back().param = &p;
    return v;
  }

  /// Appends an op result. `bw` receives the result's gradient.
  template <class F>
  Var<S> push(Tensor<S> value, std::initializer_list<Var<S>> inputs, F&& bw) {
    bool ng = false;
    if (record_)
      for (const auto& in : inputs) ng = ng || needs_grad(in.id());
    return push_node(std::move(value), ng, ng ? std::function<void(const Tensor<S>&)>(std::forward<F>(bw)) : nullptr);
  }

  template <class F>
  Var<S> push(Tensor<S> value, const std::vector<Var<S>>& inputs, F&& bw) {
    bool ng = false;
    if (record_)
      for (const auto& in : inputs) ng = ng || needs_grad(in.id());
    return push_node(std::move(value), ng, ng ? std::function<void(const Tensor<S>&)>(std::forward<F>(bw)) : nullptr);
  }

  const Tensor<S>& value(int id) const { return nodes_.at(static_cast<std::size_t>(id)).value; }
  bool needs_grad(int id) const { return nodes_.at(static_cast<std::size_t>(id)).needs_grad; }

  Tensor<S>& grad(int id) {
    auto& n = nodes_.at(static_cast<std::size_t>(id));
    if (n.grad.size() != n.value.size()) n.grad = Tensor<S>(n.value.shape());
    return n.grad;
  }

  /// Seeds d(root)/d(root) = 1 for a single-element root and sweeps back.
  void backward(const Var<S>& root) {
    detail::require<NumericError>(record_, "Tape::backward: tape was not recording");
    detail::require(root.value().size() == 1, "Tape::backward: root must be a scalar");
    if (!needs_grad(root.id())) return;
    grad(root.id())[0] = S(1);
    for (int id = root.id(); id >= 0; --id) {
      auto& n = nodes_[static_cast<std::size_t>(id)];
      if (!n.needs_grad || n.grad.size() != n.value.size()) continue;
      if (n.backward) n.backward(n.grad);
      if (n.param != nullptr) {
        if (n.param->grad.size() != n.param->value.size()) n.param->zero_grad();
        n.param->grad += n.grad;
      }
    }
  }

 private:
  struct Node {
    Tensor<S> value;
    Tensor<S> grad;
    bool needs_grad = false;
    std::function<void(const Tensor<S>&)> backward;
    Parameter<S>* param = nullptr;
  };

  Var<S> push_node(Tensor<S> v, bool ng, std::function<void(const Tensor<S>&)> bw) {
    nodes_.push_back(Node{std::move(v), Tensor<S>(), ng, std::move(bw), nullptr});
    return Var<S>(this, static_cast<int>(nodes_.size()) - 1);
  }

  bool record_;
  std::deque<Node> nodes_;
};

template <class S>
Var<S> detach(const Var<S>& x) {
  return x.tape()->constant(x.value());
}

namespace ops_detail {

template <class S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class S>
void require_same(const Var<S>& a, const Var<S>& b, const char* op) {
  if (a.shape() != b.shape())
    throw ArgumentError(std::string(op) + ": shape mismatch " + a.value().shape_string() + " vs " +
                        b.value().shape_string());
}

template <class S, class Fwd, class Dfn>
Var<S> unary(const Var<S>& x, Fwd fwd, Dfn dydx) {
  Tensor<S> out(x.shape());
  const auto& xv = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(xv[i]);
  auto* tp = x.tape();
  return tp->push(std::move(out), {x}, [x, dydx](const Tensor<S>& g) {
    const auto& xv = x.value();
    auto& gx = x.grad();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * dydx(xv[i]);
  });
}

}  // namespace ops_detail

template <class S>
Var<S> add(const Var<S>& a, const Var<S>& b) {
  ops_detail::require_same(a, b, "add");
  Tensor<S> out = a.value();
  out += b.value();
  return a.tape()->push(std::move(out), {a, b}, [a, b](const Tensor<S>& g) {
    if (a.needs_grad()) a.grad() += g;
    if (b.needs_grad()) b.grad() += g;
  });
}

template <class S>
Var<S> sub(const Var<S>& a, const Var<S>& b) {
  ops_detail::require_same(a, b, "sub");
  Tensor<S> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return a.tape()->push(std::move(out), {a, b}, [a, b](const Tensor<S>& g) {
    if (a.needs_grad()) a.grad() += g;
    if (b.needs_grad()) {
      auto& gb = b.grad();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

template <class S>
Var<S> mul(const Var<S>& a, const Var<S>& b) {
  ops_detail::require_same(a, b, "mul");
  Tensor<S> out(a.shape());
  const auto& av = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return a.tape()->push(std::move(out), {a, b}, [a, b](const Tensor<S>& g) {
    const auto& av = a.value();
    const auto& bv = b.value();
    if (a.needs_grad()) {
      auto& ga = a.grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (b.needs_grad()) {
      auto& gb = b.grad();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

template <class S>
Var<S> scale(const Var<S>& x, S s) {
  return ops_detail::unary(x, [s](S v) { return s * v; }, [s](S) { return s; });
}

template <class S>
Var<S> sigmoid(const Var<S>& x) {
  return ops_detail::unary(
      x, [](S v) { return S(1) / (S(1) + std::exp(-v)); },
      [](S v) {
        const S s = S(1) / (S(1) + std::exp(-v));
        return s * (S(1) - s);
      });
}

template <class S>
Var<S> tanh(const Var<S>& x) {
  return ops_detail::unary(
      x, [](S v) { return std::tanh(v); },
      [](S v) {
        const S t = std::tanh(v);
        return S(1) - t * t;
      });
}

template <class S>
Var<S> silu(const Var<S>& x) {
  return ops_detail::unary(
      x, [](S v) { return v / (S(1) + std::exp(-v)); },
      [](S v) {
        const S s = S(1) / (S(1) + std::exp(-v));
        return s * (S(1) + v * (S(1) - s));
      });
}

/// x [N, F] * W^T [F, O] + b [O] -> [N, O].
template <class S>
Var<S> linear(const Var<S>& x, const Var<S>& w, const Var<S>& b) {
  using M = ops_detail::RowMat<S>;
  detail::require(x.value().rank() == 2 && w.value().rank() == 2, "linear: expects x [N, F] and W [O, F]");
  const int n = x.dim(0);
  const int f = x.dim(1);
  const int o = w.dim(0);
  if (w.dim(1) != f) throw ArgumentError("linear: feature mismatch");
  detail::require(static_cast<int>(b.value().size()) == o, "linear: bias size mismatch");
  Tensor<S> out({n, o});
  Eigen::Map<const M> X(x.value().data(), n, f);
  Eigen::Map<const M> W(w.value().data(), o, f);
  Eigen::Map<M> Y(out.data(), n, o);
  Y.noalias() = X * W.transpose();
  const S* bv = b.value().data();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < o; ++j) Y(i, j) += bv[j];
  return x.tape()->push(std::move(out), {x, w, b}, [x, w, b, n, f, o](const Tensor<S>& g) {
    Eigen::Map<const M> G(g.data(), n, o);
    if (x.needs_grad()) {
      Eigen::Map<const M> W(w.value().data(), o, f);
      Eigen::Map<M> GX(x.grad().data(), n, f);
      GX.noalias() += G * W;
    }
    if (w.needs_grad()) {
      Eigen::Map<const M> X(x.value().data(), n, f);
      Eigen::Map<M> GW(w.grad().data(), o, f);
      GW.noalias() += G.transpose() * X;
    }
    if (b.needs_grad()) {
      auto& gb = b.grad();
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < o; ++j) gb[j] += G(i, j);
    }
  });
}

struct Conv2dGeometry {
  int kh = 3;
  int kw = 3;
  int stride_h = 1;
  int stride_w = 1;
  int pad_h = 1;
  int pad_w = 1;

  int out_h(int h) const { return (h + 2 * pad_h - kh) / stride_h + 1; }
  int out_w(int w) const { return (w + 2 * pad_w - kw) / stride_w + 1; }
};

/// Cross-correlation of x [N, C, H, W] with w [O, C, kh, kw] plus bias [O].
/// Lowered to one GEMM over an im2col buffer covering the whole batch.
template <class S>
Var<S> conv2d(const Var<S>& x, const Var<S>& w, const Var<S>& b, Conv2dGeometry geo) {
  using M = ops_detail::RowMat<S>;
  const auto& xv = x.value();
  if (xv.rank() != 4) throw ArgumentError("conv2d: input must be [N, C, H, W], got " + xv.shape_string());
  const int n = xv.dim(0);
  const int c = xv.dim(1);
  const int h = xv.dim(2);
  const int wd = xv.dim(3);
  const int o = w.dim(0);
  if (w.value().rank() != 4 || w.dim(1) != c || w.dim(2) != geo.kh || w.dim(3) != geo.kw)
    throw ArgumentError("conv2d: weight " + w.value().shape_string() + " incompatible with input " +
                        xv.shape_string());
  const int ho = geo.out_h(h);
  const int wo = geo.out_w(wd);
  const int p = ho * wo;
  const int k = c * geo.kh * geo.kw;
  const long cols = static_cast<long>(n) * p;

  auto col = std::make_shared<std::vector<S>>(static_cast<std::size_t>(k) * cols, S(0));
  for (int ci = 0; ci < c; ++ci)
    for (int dy = 0; dy < geo.kh; ++dy)
      for (int dx = 0; dx < geo.kw; ++dx) {
        S* row = col->data() + static_cast<std::size_t>((ci * geo.kh + dy) * geo.kw + dx) * cols;
        for (int ni = 0; ni < n; ++ni) {
          const S* src = xv.data() + (static_cast<std::size_t>(ni) * c + ci) * h * wd;
          S* dst = row + static_cast<std::size_t>(ni) * p;
          for (int oy = 0; oy < ho; ++oy) {
            const int iy = oy * geo.stride_h - geo.pad_h + dy;
            if (iy < 0 || iy >= h) continue;
            for (int ox = 0; ox < wo; ++ox) {
              const int ix = ox * geo.stride_w - geo.pad_w + dx;
              if (ix >= 0 && ix < wd) dst[oy * wo + ox] = src[iy * wd + ix];
            }
          }
        }
      }

  M prod(o, cols);
  {
    Eigen::Map<const M> W(w.value().data(), o, k);
    Eigen::Map<const M> C(col->data(), k, cols);
    prod.noalias() = W * C;
  }
  Tensor<S> out({n, o, ho, wo});
  const S* bv = b.value().data();
  for (int ni = 0; ni < n; ++ni)
    for (int oi = 0; oi < o; ++oi) {
      S* dst = out.data() + (static_cast<std::size_t>(ni) * o + oi) * p;
      const S* src = prod.data() + static_cast<std::size_t>(oi) * cols + static_cast<std::size_t>(ni) * p;
      for (int q = 0; q < p; ++q) dst[q] = src[q] + bv[oi];
    }

  return x.tape()->push(std::move(out), {x, w, b}, [=](const Tensor<S>& g) {
    M gm(o, cols);
    for (int ni = 0; ni < n; ++ni)
      for (int oi = 0; oi < o; ++oi) {
        const S* src = g.data() + (static_cast<std::size_t>(ni) * o + oi) * p;
        S* dst = gm.data() + static_cast<std::size_t>(oi) * cols + static_cast<std::size_t>(ni) * p;
        std::copy(src, src + p, dst);
      }
    if (b.needs_grad()) {
      auto& gb = b.grad();
      for (int oi = 0; oi < o; ++oi) gb[oi] += gm.row(oi).sum();
    }
    if (w.needs_grad()) {
      Eigen::Map<const M> C(col->data(), k, cols);
      Eigen::Map<M> GW(w.grad().data(), o, k);
      GW.noalias() += gm * C.transpose();
    }
    if (x.needs_grad()) {
      Eigen::Map<const M> W(w.value().data(), o, k);
      M gcol = W.transpose() * gm;
      auto& gx = x.grad();
      for (int ci = 0; ci < c; ++ci)
        for (int dy = 0; dy < geo.kh; ++dy)
          for (int dx = 0; dx < geo.kw; ++dx) {
            const S* row = gcol.data() + static_cast<std::size_t>((ci * geo.kh + dy) * geo.kw + dx) * cols;
            for (int ni = 0; ni < n; ++ni) {
              S* dst = gx.data() + (static_cast<std::size_t>(ni) * c + ci) * h * wd;
              const S* src = row + static_cast<std::size_t>(ni) * p;
              for (int oy = 0; oy < ho; ++oy) {
                const int iy = oy * geo.stride_h - geo.pad_h + dy;
                if (iy < 0 || iy >= h) continue;
                for (int ox = 0; ox < wo; ++ox) {
                  const int ix = ox * geo.stride_w - geo.pad_w + dx;
                  if (ix >= 0 && ix < wd) dst[iy * wd + ix] += src[oy * wo + ox];
                }
              }
            }
          }
    }
  });
}

namespace ops_detail {

// Concatenation / slicing along axis 1 of a tensor viewed as [N, A, inner].
template <class S>
Var<S> concat_axis1(const std::vector<Var<S>>& parts) {
  detail::require(!parts.empty(), "concat: no inputs");
  const auto& s0 = parts[0].shape();
  const int n = s0[0];
  std::size_t inner = 1;
  for (std::size_t i = 2; i < s0.size(); ++i) inner *= static_cast<std::size_t>(s0[i]);
  int total = 0;
  for (const auto& v : parts) {
    const auto& s = v.shape();
    if (s.size() != s0.size() || s[0] != n) throw ArgumentError("concat: batch or rank mismatch");
    for (std::size_t i = 2; i < s.size(); ++i)
      if (s[i] != s0[i]) throw ArgumentError("concat: trailing dimensions differ");
    total += s[1];
  }
  std::vector<int> shape = s0;
  shape[1] = total;
  Tensor<S> out(shape);
  std::vector<int> offsets;
  int off = 0;
  for (const auto& v : parts) {
    offsets.push_back(off);
    const int a = v.dim(1);
    for (int ni = 0; ni < n; ++ni) {
      const S* src = v.value().data() + static_cast<std::size_t>(ni) * a * inner;
      S* dst = out.data() + (static_cast<std::size_t>(ni) * total + off) * inner;
      std::copy(src, src + a * inner, dst);
    }
    off += a;
  }
  return parts[0].tape()->push(std::move(out), parts, [parts, offsets, n, total, inner](const Tensor<S>& g) {
    for (std::size_t pi = 0; pi < parts.size(); ++pi) {
      const auto& v = parts[pi];
      if (!v.needs_grad()) continue;
      const int a = v.dim(1);
      auto& gv = v.grad();
      for (int ni = 0; ni < n; ++ni) {
        const S* src = g.data() + (static_cast<std::size_t>(ni) * total + offsets[pi]) * inner;
        S* dst = gv.data() + static_cast<std::size_t>(ni) * a * inner;
        for (std::size_t q = 0; q < a * inner; ++q) dst[q] += src[q];
      }
    }
  });
}

template <class S>
Var<S> slice_axis1(const Var<S>& x, int start, int count) {
  const auto& s = x.shape();
  detail::require(s.size() >= 2, "slice: rank must be >= 2");
  const int n = s[0];
  const int a = s[1];
  if (start < 0 || count <= 0 || start + count > a) throw ArgumentError("slice: range outside axis");
  std::size_t inner = 1;
  for (std::size_t i = 2; i < s.size(); ++i) inner *= static_cast<std::size_t>(s[i]);
  std::vector<int> shape = s;
  shape[1] = count;
  Tensor<S> out(shape);
  for (int ni = 0; ni < n; ++ni) {
    const S* src = x.value().data() + (static_cast<std::size_t>(ni) * a + start) * inner;
    std::copy(src, src + count * inner, out.data() + static_cast<std::size_t>(ni) * count * inner);
  }
  return x.tape()->push(std::move(out), {x}, [x, n, a, start, count, inner](const Tensor<S>& g) {
    auto& gx = x.grad();
    for (int ni = 0; ni < n; ++ni) {
      const S* src = g.data() + static_cast<std::size_t>(ni) * count * inner;
      S* dst = gx.data() + (static_cast<std::size_t>(ni) * a + start) * inner;
      for (std::size_t q = 0; q < count * inner; ++q) dst[q] += src[q];
    }
  });
}

}  // namespace ops_detail

/// Channel concatenation of [N, C_i, H, W] maps.
template <class S>
Var<S> concat_channels(const std::vector<Var<S>>& parts) {
  return ops_detail::concat_axis1(parts);
}

/// Feature concatenation of [N, F_i] vectors.
template <class S>
Var<S> concat_cols(const std::vector<Var<S>>& parts) {
  return ops_detail::concat_axis1(parts);
}

template <class S>
Var<S> slice_channels(const Var<S>& x, int start, int count) {
  return ops_detail::slice_axis1(x, start, count);
}

template <class S>
Var<S> slice_cols(const Var<S>& x, int start, int count) {
  return ops_detail::slice_axis1(x, start, count);
}

/// Rows [start, start + count) along the leading (batch) axis.
template <class S>
Var<S> slice_batch(const Var<S>& x, int start, int count) {
  const auto& s = x.shape();
  if (start < 0 || count <= 0 || start + count > s[0]) throw ArgumentError("slice_batch: range outside batch");
  const std::size_t row = x.value().size() / static_cast<std::size_t>(s[0]);
  std::vector<int> shape = s;
  shape[0] = count;
  Tensor<S> out(shape);
  const S* src = x.value().data() + static_cast<std::size_t>(start) * row;
  std::copy(src, src + count * row, out.data());
  return x.tape()->push(std::move(out), {x}, [x, start, count, row](const Tensor<S>& g) {
    S* dst = x.grad().data() + static_cast<std::size_t>(start) * row;
    for (std::size_t q = 0; q < count * row; ++q) dst[q] += g[q];
  });
}

/// Global mean over the spatial axes: [N, C, H, W] -> [N, C].
template <class S>
Var<S> mean_spatial(const Var<S>& x) {
  const auto& xv = x.value();
  detail::require(xv.rank() == 4, "mean_spatial: expects [N, C, H, W]");
  const int n = xv.dim(0);
  const int c = xv.dim(1);
  const int p = xv.dim(2) * xv.dim(3);
  Tensor<S> out({n, c});
  for (int i = 0; i < n * c; ++i) {
    S acc = 0;
    const S* src = xv.data() + static_cast<std::size_t>(i) * p;
    for (int q = 0; q < p; ++q) acc += src[q];
    out[i] = acc / static_cast<S>(p);
  }
  return x.tape()->push(std::move(out), {x}, [x, n, c, p](const Tensor<S>& g) {
    auto& gx = x.grad();
    for (int i = 0; i < n * c; ++i) {
      const S gi = g[i] / static_cast<S>(p);
      S* dst = gx.data() + static_cast<std::size_t>(i) * p;
      for (int q = 0; q < p; ++q) dst[q] += gi;
    }
  });
}

/// Feature-wise modulation (1 + gamma) * v + beta with gamma, beta [N, C]
/// broadcast over the spatial positions of v [N, C, H, W].
template <class S>
Var<S> film(const Var<S>& v, const Var<S>& gamma, const Var<S>& beta) {
  const auto& vv = v.value();
  if (vv.rank() != 4) throw ArgumentError("film: features must be [N, C, H, W]");
  const int n = vv.dim(0);
  const int c = vv.dim(1);
  const int p = vv.dim(2) * vv.dim(3);
  const std::vector<int> want{n, c};
  if (gamma.shape() != want || beta.shape() != want)
    throw ArgumentError("film: gamma/beta must be [N, C] matching features " + vv.shape_string());
  Tensor<S> out(vv.shape());
  for (int i = 0; i < n * c; ++i) {
    const S gm = S(1) + gamma.value()[i];
    const S bt = beta.value()[i];
    const S* src = vv.data() + static_cast<std::size_t>(i) * p;
    S* dst = out.data() + static_cast<std::size_t>(i) * p;
    for (int q = 0; q < p; ++q) dst[q] = gm * src[q] + bt;
  }
  return v.tape()->push(std::move(out), {v, gamma, beta}, [v, gamma, beta, n, c, p](const Tensor<S>& g) {
    const auto& vv = v.value();
    for (int i = 0; i < n * c; ++i) {
      const S* gs = g.data() + static_cast<std::size_t>(i) * p;
      if (v.needs_grad()) {
        const S gm = S(1) + gamma.value()[i];
        S* dst = v.grad().data() + static_cast<std::size_t>(i) * p;
        for (int q = 0; q < p; ++q) dst[q] += gm * gs[q];
      }
      if (gamma.needs_grad()) {
        S acc = 0;
        const S* src = vv.data() + static_cast<std::size_t>(i) * p;
        for (int q = 0; q < p; ++q) acc += gs[q] * src[q];
        gamma.grad()[i] += acc;
      }
      if (beta.needs_grad()) {
        S acc = 0;
        for (int q = 0; q < p; ++q) acc += gs[q];
        beta.grad()[i] += acc;
      }
    }
  });
}

/// Per-sample selection: row n of the result is mask[n] ? a[n] : b[n].
/// b may also be a single row [1, ...] broadcast to every sample.
template <class S>
Var<S> select_rows(const std::vector<bool>& mask, const Var<S>& a, const Var<S>& b) {
  const int n = a.dim(0);
  detail::require(static_cast<int>(mask.size()) == n, "select_rows: mask size mismatch");
  const std::size_t row = a.value().size() / static_cast<std::size_t>(n);
  const bool broadcast = b.dim(0) == 1 && n != 1;
  detail::require(b.value().size() == (broadcast ? row : a.value().size()), "select_rows: shape mismatch");
  Tensor<S> out(a.shape());
  for (int i = 0; i < n; ++i) {
    const S* src = mask[i] ? a.value().data() + i * row : b.value().data() + (broadcast ? 0 : i * row);
    std::copy(src, src + row, out.data() + i * row);
  }
  return a.tape()->push(std::move(out), {a, b}, [mask, a, b, n, row, broadcast](const Tensor<S>& g) {
    for (int i = 0; i < n; ++i) {
      const S* gs = g.data() + i * row;
      if (mask[i]) {
        if (!a.needs_grad()) continue;
        S* dst = a.grad().data() + i * row;
        for (std::size_t q = 0; q < row; ++q) dst[q] += gs[q];
      } else {
        if (!b.needs_grad()) continue;
        S* dst = b.grad().data() + (broadcast ? 0 : i * row);
        for (std::size_t q = 0; q < row; ++q) dst[q] += gs[q];
      }
    }
  });
}

/// Per-sample convex blend m[n] * a[n] + (1 - m[n]) * b[n] with constant m.
template <class S>
Var<S> blend_rows(const std::vector<S>& m, const Var<S>& a, const Var<S>& b) {
  ops_detail::require_same(a, b, "blend_rows");
  const int n = a.dim(0);
  detail::require(static_cast<int>(m.size()) == n, "blend_rows: weight count mismatch");
  const std::size_t row = a.value().size() / static_cast<std::size_t>(n);
  Tensor<S> out(a.shape());
  for (int i = 0; i < n; ++i)
    for (std::size_t q = 0; q < row; ++q)
      out[i * row + q] = m[i] * a.value()[i * row + q] + (S(1) - m[i]) * b.value()[i * row + q];
  return a.tape()->push(std::move(out), {a, b}, [m, a, b, n, row](const Tensor<S>& g) {
    for (int i = 0; i < n; ++i)
      for (std::size_t q = 0; q < row; ++q) {
        if (a.needs_grad()) a.grad()[i * row + q] += m[i] * g[i * row + q];
        if (b.needs_grad()) b.grad()[i * row + q] += (S(1) - m[i]) * g[i * row + q];
      }
  });
}

/// Per-sample linear combination ca[n] * a[n] + cb[n] * b[n] with constant
/// coefficients.
template <class S>
Var<S> combine_rows(const std::vector<S>& ca, const Var<S>& a, const std::vector<S>& cb, const Var<S>& b) {
  ops_detail::require_same(a, b, "combine_rows");
  const int n = a.dim(0);
  detail::require(static_cast<int>(ca.size()) == n && static_cast<int>(cb.size()) == n,
                  "combine_rows: coefficient count mismatch");
  const std::size_t row = a.value().size() / static_cast<std::size_t>(n);
  Tensor<S> out(a.shape());
  for (int i = 0; i < n; ++i)
    for (std::size_t q = 0; q < row; ++q)
      out[i * row + q] = ca[i] * a.value()[i * row + q] + cb[i] * b.value()[i * row + q];
  return a.tape()->push(std::move(out), {a, b}, [ca, cb, a, b, n, row](const Tensor<S>& g) {
    for (int i = 0; i < n; ++i)
      for (std::size_t q = 0; q < row; ++q) {
        if (a.needs_grad()) a.grad()[i * row + q] += ca[i] * g[i * row + q];
        if (b.needs_grad()) b.grad()[i * row + q] += cb[i] * g[i * row + q];
      }
  });
}

/// Single-head scaled dot-product attention of query q [N, d] over `rows`
/// (each [N, d]) restricted to rows with mask[n * L + l] set. Returns the
/// attended vector [N, d]; the softmax weights are written to `weights`
/// ([N * L], zero for masked rows) when non-null.
template <class S>
Var<S> cross_attention(const Var<S>& q, const std::vector<Var<S>>& rows, const std::vector<bool>& mask,
                       std::vector<S>* weights = nullptr) {
  if (rows.empty()) throw ArgumentError("cross_attention: no key/value rows");
  const int n = q.dim(0);
  const int d = q.dim(1);
  const int l = static_cast<int>(rows.size());
  detail::require(static_cast<int>(mask.size()) == n * l, "cross_attention: mask must be [N * L]");
  for (const auto& r : rows)
    if (r.shape() != q.shape()) throw ArgumentError("cross_attention: row shape differs from query");
  const S inv_sqrt_d = S(1) / std::sqrt(static_cast<S>(d));

  std::vector<S> a(static_cast<std::size_t>(n) * l, S(0));
  Tensor<S> out({n, d});
  for (int i = 0; i < n; ++i) {
    const S* qi = q.value().data() + static_cast<std::size_t>(i) * d;
    S best = -std::numeric_limits<S>::infinity();
    std::vector<S> sc(static_cast<std::size_t>(l), S(0));
    bool any = false;
    for (int j = 0; j < l; ++j) {
      if (!mask[i * l + j]) continue;
      const S* rj = rows[j].value().data() + static_cast<std::size_t>(i) * d;
      S dot = 0;
      for (int e = 0; e < d; ++e) dot += qi[e] * rj[e];
      sc[j] = dot * inv_sqrt_d;
      best = std::max(best, sc[j]);
      any = true;
    }
    if (!any) throw ArgumentError("cross_attention: every row masked for a sample");
    S z = 0;
    for (int j = 0; j < l; ++j)
      if (mask[i * l + j]) {
        a[i * l + j] = std::exp(sc[j] - best);
        z += a[i * l + j];
      }
    for (int j = 0; j < l; ++j) {
      a[i * l + j] /= z;
      if (a[i * l + j] == S(0)) continue;
      const S* rj = rows[j].value().data() + static_cast<std::size_t>(i) * d;
      for (int e = 0; e < d; ++e) out[i * d + e] += a[i * l + j] * rj[e];
    }
  }
  if (weights != nullptr) *weights = a;

  std::vector<Var<S>> inputs(rows);
  inputs.push_back(q);
  return q.tape()->push(std::move(out), inputs, [q, rows, mask, a, n, d, l, inv_sqrt_d](const Tensor<S>& g) {
    for (int i = 0; i < n; ++i) {
      const S* gi = g.data() + static_cast<std::size_t>(i) * d;
      const S* qi = q.value().data() + static_cast<std::size_t>(i) * d;
      std::vector<S> da(static_cast<std::size_t>(l), S(0));
      S mean_da = 0;
      for (int j = 0; j < l; ++j) {
        if (!mask[i * l + j]) continue;
        const S* rj = rows[j].value().data() + static_cast<std::size_t>(i) * d;
        for (int e = 0; e < d; ++e) da[j] += gi[e] * rj[e];
        mean_da += a[i * l + j] * da[j];
      }
      for (int j = 0; j < l; ++j) {
        if (!mask[i * l + j]) continue;
        const S aw = a[i * l + j];
        const S ds = aw * (da[j] - mean_da) * inv_sqrt_d;
        const S* rj = rows[j].value().data() + static_cast<std::size_t>(i) * d;
        if (rows[j].needs_grad()) {
          S* gr = rows[j].grad().data() + static_cast<std::size_t>(i) * d;
          for (int e = 0; e < d; ++e) gr[e] += aw * gi[e] + ds * qi[e];
        }
        if (q.needs_grad()) {
          S* gq = q.grad().data() + static_cast<std::size_t>(i) * d;
          for (int e = 0; e < d; ++e) gq[e] += ds * rj[e];
        }
      }
    }
  });
}

/// mean((a - b)^2) over all elements -> [1].
template <class S>
Var<S> mse(const Var<S>& a, const Var<S>& b) {
  ops_detail::require_same(a, b, "mse");
  const std::size_t n = a.value().size();
  S acc = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const S d = a.value()[i] - b.value()[i];
    acc += d * d;
  }
  Tensor<S> out({1}, acc / static_cast<S>(n));
  return a.tape()->push(std::move(out), {a, b}, [a, b, n](const Tensor<S>& g) {
    const S k = S(2) * g[0] / static_cast<S>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const S d = a.value()[i] - b.value()[i];
      if (a.needs_grad()) a.grad()[i] += k * d;
      if (b.needs_grad()) b.grad()[i] -= k * d;
    }
  });
}

/// Mean squared difference over the rows with mask set (per-element mean
/// within those rows). Zero when no row is selected.
template <class S>
Var<S> masked_mse(const Var<S>& a, const Var<S>& b, const std::vector<bool>& mask) {
  ops_detail::require_same(a, b, "masked_mse");
  const int n = a.dim(0);
  detail::require(static_cast<int>(mask.size()) == n, "masked_mse: mask size mismatch");
  const std::size_t row = a.value().size() / static_cast<std::size_t>(n);
  std::size_t used = 0;
  S acc = 0;
  for (int i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    used += row;
    for (std::size_t q = 0; q < row; ++q) {
      const S d = a.value()[i * row + q] - b.value()[i * row + q];
      acc += d * d;
    }
  }
  const S denom = used ? static_cast<S>(used) : S(1);
  Tensor<S> out({1}, acc / denom);
  return a.tape()->push(std::move(out), {a, b}, [a, b, mask, n, row, denom](const Tensor<S>& g) {
    const S k = S(2) * g[0] / denom;
    for (int i = 0; i < n; ++i) {
      if (!mask[i]) continue;
      for (std::size_t q = 0; q < row; ++q) {
        const S d = a.value()[i * row + q] - b.value()[i * row + q];
        if (a.needs_grad()) a.grad()[i * row + q] += k * d;
        if (b.needs_grad()) b.grad()[i * row + q] -= k * d;
      }
    }
  });
}

/// a + s * b for scalars [1].
template <class S>
Var<S> add_scaled(const Var<S>& a, S s, const Var<S>& b) {
  detail::require(a.value().size() == 1 && b.value().size() == 1, "add_scaled: expects scalars");
  Tensor<S> out({1}, a.value()[0] + s * b.value()[0]);
  return a.tape()->push(std::move(out), {a, b}, [a, b, s](const Tensor<S>& g) {
    if (a.needs_grad()) a.grad()[0] += g[0];
    if (b.needs_grad()) b.grad()[0] += s * g[0];
  });
}

}  // namespace chandiff::nn
