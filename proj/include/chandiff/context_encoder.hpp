#pragma once

#include <string>
#include <vector>

#include "chandiff/autodiff.hpp"
#include "chandiff/errors.hpp"
#include "chandiff/nn.hpp"
#include "chandiff/random.hpp"
#include "chandiff/tensor.hpp"

namespace chandiff::encoder {

using nn::Tape;
using nn::Var;

struct EncoderConfig {
  int height = 8;
  int width = 52;
  int stem_channels = 16;
  int channels = 32;      // d
  int context_dim = 64;   // d_c
  int window = 5;         // T_w; the encoder sees T_w - 1 history frames

  int history() const { return window - 1; }
  int feature_height() const { return nn::strided3x3(2, 2).out_h(height); }
  int feature_width() const { return nn::strided3x3(2, 2).out_w(nn::strided3x3(1, 2).out_w(width)); }

  void validate() const {
    detail::require<ConfigError>(window >= 2, "encoder: window T_w must be >= 2");
    detail::require<ConfigError>(height >= 1 && width >= 1, "encoder: snapshot dims must be positive");
    detail::require<ConfigError>(stem_channels >= 1 && channels >= 1 && context_dim >= 1,
                                 "encoder: layer widths must be positive");
  }
};

/// A batch of causal windows. frames[j] holds, for every sample, the noisy
/// snapshot of slot k - history + j; slots before 0 are marked invalid and
/// their contents ignored.
template <class S>
struct WindowBatch {
  int batch = 0;
  std::vector<Tensor<S>> frames;   // history() tensors of [N, 2, H, W]
  std::vector<bool> frame_valid;   // [N * history], index n * history + j
  Tensor<S> prev;                  // [N, 2, H, W]; rows with has_prev false are ignored
  std::vector<bool> has_prev;      // [N]

  static WindowBatch empty(const EncoderConfig& cfg, int n) {
    WindowBatch w;
    w.batch = n;
    for (int j = 0; j < cfg.history(); ++j) w.frames.emplace_back(std::vector<int>{n, 2, cfg.height, cfg.width});
    w.frame_valid.assign(static_cast<std::size_t>(n) * cfg.history(), false);
    w.prev = Tensor<S>({n, 2, cfg.height, cfg.width});
    w.has_prev.assign(static_cast<std::size_t>(n), false);
    return w;
  }
};

template <class S>
struct RecurrentState {
  Var<S> h;
  Var<S> c;
};

template <class S>
class ContextEncoder {
 public:
  ContextEncoder() = default;

  ContextEncoder(const EncoderConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    const int d = cfg_.channels;
    pre1_ = nn::Conv2d<S>("encoder.pre.0", 2, cfg_.stem_channels, nn::strided3x3(1, 2), rng);
    pre2_ = nn::Conv2d<S>("encoder.pre.1", cfg_.stem_channels, d, nn::strided3x3(2, 2), rng);
    pre3_ = nn::Conv2d<S>("encoder.pre.2", d, d, nn::same3x3(), rng);
    gates_ = nn::Conv2d<S>("encoder.lstm", 2 * d, 4 * d, nn::same3x3(), rng);
    // Forget-gate bias starts at +1 so early training keeps memory.
    for (int i = d; i < 2 * d; ++i) gates_.bias().value[i] += S(1);
    null_ = nn::Parameter<S>("encoder.null", Tensor<S>({1, d}));
    proj_ = nn::Linear<S>("encoder.proj", d, cfg_.context_dim, rng);
  }

  const EncoderConfig& config() const noexcept { return cfg_; }

  void collect(nn::ParamList<S>& out) {
    pre1_.collect(out);
    pre2_.collect(out);
    pre3_.collect(out);
    gates_.collect(out);
    out.push_back(&null_);
    proj_.collect(out);
  }

  /// Shared spatial CNN: [N, 2, H, W] -> [N, d, H', W'].
  Var<S> spatial_encode(Tape<S>& tape, const Var<S>& y) {
    const auto& s = y.shape();
    if (s.size() != 4 || s[1] != 2 || s[2] != cfg_.height || s[3] != cfg_.width)
      throw ArgumentError("spatial_encode: expected [N, 2, " + std::to_string(cfg_.height) + ", " +
                          std::to_string(cfg_.width) + "], got " + y.value().shape_string());
    auto z = nn::silu(pre1_(tape, y));
    z = nn::silu(pre2_(tape, z));
    return pre3_(tape, z);
  }

  RecurrentState<S> initial_state(Tape<S>& tape, int n) const {
    const std::vector<int> shape{n, cfg_.channels, cfg_.feature_height(), cfg_.feature_width()};
    return {tape.constant(Tensor<S>(shape)), tape.constant(Tensor<S>(shape))};
  }

  /// One ConvLSTM update with gate order (i, f, g, o).
  RecurrentState<S> convlstm_step(Tape<S>& tape, const Var<S>& z, const RecurrentState<S>& st) {
    if (z.shape() != st.h.shape() || st.h.shape() != st.c.shape())
      throw ArgumentError("convlstm_step: input " + z.value().shape_string() + " incompatible with state " +
                          st.h.value().shape_string());
    const int d = cfg_.channels;
    const auto g = gates_(tape, nn::concat_channels<S>({z, st.h}));
    const auto i = nn::sigmoid(nn::slice_channels(g, 0, d));
    const auto f = nn::sigmoid(nn::slice_channels(g, d, d));
    const auto c_in = nn::tanh(nn::slice_channels(g, 2 * d, d));
    const auto o = nn::sigmoid(nn::slice_channels(g, 3 * d, d));
    const auto c = nn::add(nn::mul(f, st.c), nn::mul(i, c_in));
    return {nn::mul(o, nn::tanh(c)), c};
  }

  static Var<S> pool_hidden(const Var<S>& h) { return nn::mean_spatial(h); }

  /// softmax(q U^T / sqrt(d)) U followed by the learned projection to d_c.
  Var<S> cross_time_attention(Tape<S>& tape, const Var<S>& q, const std::vector<Var<S>>& rows,
                              const std::vector<bool>& mask, std::vector<S>* weights = nullptr) {
    return proj_(tape, nn::cross_attention(q, rows, mask, weights));
  }

  /// Full pipeline with the previous estimate supplied as a graph node so
  /// callers can differentiate through it.
  Var<S> encode(Tape<S>& tape, const WindowBatch<S>& w, const Var<S>& prev, std::vector<S>* weights = nullptr) {
    const int n = w.batch;
    const int l = cfg_.history();
    if (static_cast<int>(w.frames.size()) != l || static_cast<int>(w.frame_valid.size()) != n * l ||
        static_cast<int>(w.has_prev.size()) != n)
      throw ArgumentError("encode: window batch does not match the configured history length");
    const std::vector<int> frame_shape{n, 2, cfg_.height, cfg_.width};
    for (const auto& f : w.frames)
      if (f.shape() != frame_shape) throw ArgumentError("encode: inconsistent frame shape " + f.shape_string());
    if (prev.shape() != frame_shape) throw ArgumentError("encode: previous estimate shape mismatch");

    auto st = initial_state(tape, n);
    std::vector<Var<S>> rows;
    std::vector<bool> any_valid(static_cast<std::size_t>(l), false);
    for (int j = 0; j < l; ++j) {
      std::vector<S> m(static_cast<std::size_t>(n));
      for (int i = 0; i < n; ++i) {
        m[i] = w.frame_valid[i * l + j] ? S(1) : S(0);
        any_valid[j] = any_valid[j] || w.frame_valid[i * l + j];
      }
      if (any_valid[j]) {
        const auto z = spatial_encode(tape, tape.constant(w.frames[j]));
        const auto nx = convlstm_step(tape, z, st);
        // Invalid (pre-sequence) slots leave the state untouched.
        st = {nn::blend_rows(m, nx.h, st.h), nn::blend_rows(m, nx.c, st.c)};
      }
      rows.push_back(pool_hidden(st.h));
    }
    const Var<S> q = rows.back();

    const auto pooled_prev = pool_hidden(spatial_encode(tape, prev));
    rows.push_back(nn::select_rows(w.has_prev, pooled_prev, tape.param(null_)));

    std::vector<bool> mask(static_cast<std::size_t>(n) * (l + 1));
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < l; ++j) mask[i * (l + 1) + j] = w.frame_valid[i * l + j];
      mask[i * (l + 1) + l] = true;
    }
    return cross_time_attention(tape, q, rows, mask, weights);
  }

  Var<S> encode(Tape<S>& tape, const WindowBatch<S>& w, std::vector<S>* weights = nullptr) {
    return encode(tape, w, tape.constant(w.prev), weights);
  }

 private:
  EncoderConfig cfg_;
  nn::Conv2d<S> pre1_, pre2_, pre3_;
  nn::Conv2d<S> gates_;
  nn::Parameter<S> null_;
  nn::Linear<S> proj_;
};

}  // namespace chandiff::encoder
