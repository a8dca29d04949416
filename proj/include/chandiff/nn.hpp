#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "chandiff/autodiff.hpp"
#include "chandiff/errors.hpp"
#include "chandiff/random.hpp"
#include "chandiff/tensor.hpp"

namespace chandiff::nn {

/// Non-owning list of a model's parameters in a fixed order.
template <class S>
using ParamList = std::vector<Parameter<S>*>;

template <class S>
void init_uniform(Parameter<S>& p, double bound, Rng& rng) {
  for (auto& v : p.value.storage()) v = static_cast<S>(rng.uniform(-bound, bound));
  p.zero_grad();
}

template <class S>
std::size_t count_parameters(const ParamList<S>& params) {
  std::size_t n = 0;
  for (const auto* p : params) n += p->value.size();
  return n;
}

template <class S>
void zero_grad(const ParamList<S>& params) {
  for (auto* p : params) p->zero_grad();
}

/// Rescales all gradients so their joint L2 norm is at most max_norm.
/// Returns the norm before clipping.
template <class S>
double clip_grad_norm(const ParamList<S>& params, double max_norm) {
  double sq = 0.0;
  for (const auto* p : params)
    for (S g : p->grad.storage()) sq += static_cast<double>(g) * g;
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw NumericError("clip_grad_norm: non-finite gradient norm");
  if (norm > max_norm && norm > 0.0) {
    const S k = static_cast<S>(max_norm / norm);
    for (auto* p : params)
      for (auto& g : p->grad.storage()) g *= k;
  }
  return norm;
}

template <class S>
class Linear {
 public:
  Linear() = default;
  Linear(const std::string& name, int in, int out, Rng& rng)
      : w_(name + ".weight", Tensor<S>({out, in})), b_(name + ".bias", Tensor<S>({out})) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    init_uniform(w_, bound, rng);
    init_uniform(b_, bound, rng);
  }

  Var<S> operator()(Tape<S>& tape, const Var<S>& x) { return linear(x, tape.param(w_), tape.param(b_)); }

  void collect(ParamList<S>& out) {
    out.push_back(&w_);
    out.push_back(&b_);
  }

  Parameter<S>& weight() { return w_; }
  Parameter<S>& bias() { return b_; }

 private:
  Parameter<S> w_;
  Parameter<S> b_;
};

template <class S>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(const std::string& name, int in, int out, Conv2dGeometry geo, Rng& rng)
      : geo_(geo),
        w_(name + ".weight", Tensor<S>({out, in, geo.kh, geo.kw})),
        b_(name + ".bias", Tensor<S>({out})) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in * geo.kh * geo.kw));
    init_uniform(w_, bound, rng);
    init_uniform(b_, bound, rng);
  }

  Var<S> operator()(Tape<S>& tape, const Var<S>& x) { return conv2d(x, tape.param(w_), tape.param(b_), geo_); }

  void collect(ParamList<S>& out) {
    out.push_back(&w_);
    out.push_back(&b_);
  }

  const Conv2dGeometry& geometry() const { return geo_; }
  Parameter<S>& weight() { return w_; }
  Parameter<S>& bias() { return b_; }

 private:
  Conv2dGeometry geo_;
  Parameter<S> w_;
  Parameter<S> b_;
};

inline Conv2dGeometry same3x3() { return Conv2dGeometry{3, 3, 1, 1, 1, 1}; }
inline Conv2dGeometry strided3x3(int sh, int sw) { return Conv2dGeometry{3, 3, sh, sw, 1, 1}; }
inline Conv2dGeometry pointwise() { return Conv2dGeometry{1, 1, 1, 1, 0, 0}; }

/// Sinusoidal position table: row n is PE(pos[n]) with
/// PE(p)[2i] = sin(p / 10000^(2i/d)), PE(p)[2i+1] = cos(same).
template <class S>
Tensor<S> sinusoidal_embedding(std::span<const int> positions, int dim) {
  detail::require(dim > 0 && dim % 2 == 0, "sinusoidal_embedding: dimension must be positive and even");
  const int n = static_cast<int>(positions.size());
  Tensor<S> out({n, dim});
  for (int r = 0; r < n; ++r)
    for (int i = 0; i < dim / 2; ++i) {
      const double freq = std::pow(10000.0, -2.0 * i / dim);
      const double a = positions[r] * freq;
      out[static_cast<std::size_t>(r) * dim + 2 * i] = static_cast<S>(std::sin(a));
      out[static_cast<std::size_t>(r) * dim + 2 * i + 1] = static_cast<S>(std::cos(a));
    }
  return out;
}

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <class S>
class Adam {
 public:
  Adam(ParamList<S> params, AdamConfig cfg = {}) : params_(std::move(params)), cfg_(cfg) {
    for (const auto* p : params_) {
      m_.emplace_back(p->value.size(), 0.0);
      v_.emplace_back(p->value.size(), 0.0);
    }
  }

  void step() {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto& p = *params_[k];
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        const double g = p.grad[i];
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
        const double upd = cfg_.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg_.eps);
        p.value[i] -= static_cast<S>(upd);
      }
    }
  }

  std::int64_t steps_taken() const noexcept { return t_; }
  const AdamConfig& config() const noexcept { return cfg_; }

 private:
  ParamList<S> params_;
  AdamConfig cfg_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::int64_t t_ = 0;
};

}  // namespace chandiff::nn
