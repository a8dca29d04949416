#pragma once

#include <cmath>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "chandiff/autodiff.hpp"
#include "chandiff/diffsched.hpp"
#include "chandiff/errors.hpp"
#include "chandiff/nn.hpp"
#include "chandiff/random.hpp"
#include "chandiff/tensor.hpp"

namespace chandiff::denoiser {

using nn::Tape;
using nn::Var;

struct DenoiserConfig {
  int height = 8;
  int width = 52;
  int channels = 32;      // d, width of the FiLM-modulated features
  int context_dim = 64;   // d_c
  int embed_dim = 64;     // d_e
  int pe_dim = 64;
  int fuse_hidden = 128;
  bool spatial_prev = true;  // previous estimate also enters as two extra input planes

  int input_channels() const { return spatial_prev ? 4 : 2; }

  void validate() const {
    detail::require<ConfigError>(height >= 1 && width >= 1, "denoiser: snapshot dims must be positive");
    detail::require<ConfigError>(channels >= 1 && context_dim >= 1 && embed_dim >= 1 && fuse_hidden >= 1,
                                 "denoiser: layer widths must be positive");
    detail::require<ConfigError>(pe_dim >= 2 && pe_dim % 2 == 0, "denoiser: PE dimension must be even");
  }
};

template <class S>
struct FiLMParams {
  Var<S> gamma;  // [N, d]
  Var<S> beta;   // [N, d]
};

template <class S>
class ConditionalDenoiser {
 public:
  ConditionalDenoiser() = default;

  ConditionalDenoiser(const DenoiserConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    const int d = cfg_.channels;
    const int cin = cfg_.input_channels();
    pre1_ = nn::Conv2d<S>("denoiser.pre.0", cin, d, nn::same3x3(), rng);
    pre2_ = nn::Conv2d<S>("denoiser.pre.1", d, d, nn::same3x3(), rng);
    pre3_ = nn::Conv2d<S>("denoiser.pre.2", d, d, nn::same3x3(), rng);
    ft_ = nn::Linear<S>("denoiser.f_t", cfg_.pe_dim, cfg_.embed_dim, rng);
    fk_ = nn::Linear<S>("denoiser.f_k", cfg_.pe_dim, cfg_.embed_dim, rng);
    ftemp_ = nn::Linear<S>("denoiser.f_temp", cfg_.context_dim, cfg_.embed_dim, rng);
    fuse1_ = nn::Linear<S>("denoiser.fuse.0", 3 * cfg_.embed_dim, cfg_.fuse_hidden, rng);
    fuse2_ = nn::Linear<S>("denoiser.fuse.1", cfg_.fuse_hidden, 2 * d, rng);
    post1_ = nn::Conv2d<S>("denoiser.post.0", d, d, nn::same3x3(), rng);
    post2_ = nn::Conv2d<S>("denoiser.post.1", d, d, nn::same3x3(), rng);
    skip_ = nn::Conv2d<S>("denoiser.skip", cin, d, nn::pointwise(), rng);
    out_ = nn::Conv2d<S>("denoiser.out", d, 2, nn::same3x3(), rng);
  }

  const DenoiserConfig& config() const noexcept { return cfg_; }

  void collect(nn::ParamList<S>& out) {
    pre1_.collect(out);
    pre2_.collect(out);
    pre3_.collect(out);
    ft_.collect(out);
    fk_.collect(out);
    ftemp_.collect(out);
    fuse1_.collect(out);
    fuse2_.collect(out);
    post1_.collect(out);
    post2_.collect(out);
    skip_.collect(out);
    out_.collect(out);
  }

  /// (gamma, beta) = split(f_fuse([f_t(PE(t)); f_k(PE(k)); f_temp(C)])).
  /// Step 0 uses the embedding of step 1.
  FiLMParams<S> fuse_conditioning(Tape<S>& tape, std::span<const int> t, std::span<const int> k, const Var<S>& c) {
    const int n = static_cast<int>(t.size());
    detail::require(static_cast<int>(k.size()) == n && c.dim(0) == n, "fuse_conditioning: batch size mismatch");
    if (c.value().rank() != 2 || c.dim(1) != cfg_.context_dim)
      throw ArgumentError("fuse_conditioning: context must be [N, " + std::to_string(cfg_.context_dim) + "]");
    std::vector<int> tt(t.begin(), t.end());
    for (int& v : tt) {
      detail::require(v >= 0, "fuse_conditioning: negative diffusion step");
      if (v == 0) v = 1;
    }
    for (int v : k) detail::require(v >= 0, "fuse_conditioning: negative slot index");
    const auto et = nn::silu(ft_(tape, tape.constant(nn::sinusoidal_embedding<S>(tt, cfg_.pe_dim))));
    const auto ek = nn::silu(fk_(tape, tape.constant(nn::sinusoidal_embedding<S>(k, cfg_.pe_dim))));
    const auto ec = nn::silu(ftemp_(tape, c));
    const auto z = fuse2_(tape, nn::silu(fuse1_(tape, nn::concat_cols<S>({et, ek, ec}))));
    return {nn::slice_cols(z, 0, cfg_.channels), nn::slice_cols(z, cfg_.channels, cfg_.channels)};
  }

  /// eps_theta(x_t, t, k, C). `prev_map` is the previous clean estimate
  /// (zeros when absent); it is ignored when spatial_prev is off.
  Var<S> predict_noise(Tape<S>& tape, const Var<S>& x_t, std::span<const int> t, std::span<const int> k,
                       const Var<S>& c, const Var<S>& prev_map) {
    const auto& s = x_t.shape();
    if (s.size() != 4 || s[1] != 2 || s[2] != cfg_.height || s[3] != cfg_.width)
      throw ArgumentError("predict_noise: x_t has shape " + x_t.value().shape_string());
    for (S v : x_t.value().storage())
      if (std::isnan(v)) throw ArgumentError("predict_noise: NaN in x_t");
    Var<S> inp = x_t;
    if (cfg_.spatial_prev) {
      if (prev_map.shape() != s) throw ArgumentError("predict_noise: previous-estimate map shape mismatch");
      inp = nn::concat_channels<S>({x_t, prev_map});
    }
    const auto film = fuse_conditioning(tape, t, k, c);
    auto v = nn::silu(pre1_(tape, inp));
    v = nn::silu(pre2_(tape, v));
    v = pre3_(tape, v);
    v = nn::film(v, film.gamma, film.beta);
    v = post2_(tape, nn::silu(post1_(tape, nn::silu(v))));
    return out_(tape, nn::add(v, skip_(tape, inp)));
  }

 private:
  DenoiserConfig cfg_;
  nn::Conv2d<S> pre1_, pre2_, pre3_;
  nn::Linear<S> ft_, fk_, ftemp_;
  nn::Linear<S> fuse1_, fuse2_;
  nn::Conv2d<S> post1_, post2_, skip_, out_;
};

/// (1 + gamma) * v + beta, per channel, broadcast over space.
template <class S>
Var<S> film_modulate(const Var<S>& v, const FiLMParams<S>& p) {
  return nn::film(v, p.gamma, p.beta);
}

/// x0_hat = (x_t - sqrt(1 - abar_t) eps_hat) / sqrt(abar_t).
template <class S>
Tensor<S> predict_clean(const Tensor<S>& x_t, int t, const Tensor<S>& eps_hat, const diffsched::NoiseSchedule& sched) {
  if (!x_t.same_shape(eps_hat)) throw ArgumentError("predict_clean: shape mismatch");
  if (t < 1) throw NumericError("predict_clean: step must be >= 1");
  const double ab = sched.alpha_bar(t);
  if (!(ab > 0.0)) throw NumericError("predict_clean: alpha_bar is zero");
  const double a = 1.0 / std::sqrt(ab);
  const double b = std::sqrt(1.0 - ab);
  Tensor<S> out(x_t.shape());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = static_cast<S>(a * (static_cast<double>(x_t[i]) - b * static_cast<double>(eps_hat[i])));
  return out;
}

/// Batched, differentiable form: row n uses step t[n].
template <class S>
Var<S> predict_clean(const Var<S>& x_t, std::span<const int> t, const Var<S>& eps_hat,
                     const diffsched::NoiseSchedule& sched) {
  const int n = x_t.dim(0);
  detail::require(static_cast<int>(t.size()) == n, "predict_clean: step count mismatch");
  std::vector<S> ca(static_cast<std::size_t>(n));
  std::vector<S> cb(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    if (t[i] < 1) throw NumericError("predict_clean: step must be >= 1");
    const double ab = sched.alpha_bar(t[i]);
    ca[i] = static_cast<S>(1.0 / std::sqrt(ab));
    cb[i] = static_cast<S>(-std::sqrt(1.0 - ab) / std::sqrt(ab));
  }
  return nn::combine_rows(ca, x_t, cb, eps_hat);
}

/// s_hat = -eps_hat / sigma_t.
template <class S>
Tensor<S> score(const Tensor<S>& eps_hat, int t, const diffsched::NoiseSchedule& sched) {
  if (t < 1) throw NumericError("score: sigma_t is zero at step 0");
  const double sigma = sched.sigma(t);
  if (!(sigma > 0.0)) throw NumericError("score: sigma_t is zero");
  Tensor<S> out(eps_hat.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<S>(-static_cast<double>(eps_hat[i]) / sigma);
  return out;
}

}  // namespace chandiff::denoiser
