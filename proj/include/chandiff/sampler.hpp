#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "chandiff/chansim.hpp"
#include "chandiff/context_encoder.hpp"
#include "chandiff/denoiser.hpp"
#include "chandiff/diffsched.hpp"
#include "chandiff/errors.hpp"
#include "chandiff/model.hpp"
#include "chandiff/random.hpp"
#include "chandiff/tensor.hpp"

namespace chandiff::sampler {

using chansim::NoisySequence;
using chansim::Snapshot;

enum class StepMode { kDeterministic, kAncestral };

inline std::string to_string(StepMode m) { return m == StepMode::kDeterministic ? "deterministic" : "ancestral"; }

inline StepMode step_mode_from_string(const std::string& s) {
  if (s == "deterministic") return StepMode::kDeterministic;
  if (s == "ancestral") return StepMode::kAncestral;
  throw ConfigError("unknown sampler mode '" + s + "' (expected deterministic or ancestral)");
}

struct SamplerConfig {
  double ratio = 0.9;
  StepMode mode = StepMode::kDeterministic;
  bool self_condition = true;   // false feeds the null row and a zero map on every slot
  bool estimate_snr = false;    // method-of-moments SNR from y instead of the known level
  bool single_jump = false;     // ladder (t*, 0): one network call per slot
  int record_iterates = 0;      // keep x after b = 1..record_iterates rungs
  int batch = 64;
  std::uint64_t seed = 0;       // ancestral noise
};

/// SNR from y under unit expected signal power per complex element.
/// Clamped to [-10, 40] dB.
inline double estimate_snr(const Snapshot& y, double signal_power = 1.0) {
  const double n_complex = static_cast<double>(y.size()) / 2.0;
  const double p = squared_norm<float>(y.values()) / n_complex;
  const double noise = std::clamp(p - signal_power, signal_power * 1e-4, signal_power * 10.0);
  return signal_power / noise;
}

/// Every step from t* down to 0.
inline diffsched::SamplingLadder unit_ladder(int t_star) {
  detail::require(t_star >= 1, "unit_ladder: t* must be >= 1");
  diffsched::SamplingLadder lad;
  lad.ratio = 1.0;
  for (int t = t_star; t >= 0; --t) lad.steps.push_back(t);
  return lad;
}

struct ReverseState {
  Snapshot x;
  int t = 0;
  diffsched::SamplingLadder ladder;
  int rung = 0;  // index of t within the ladder
};

inline diffsched::SamplingLadder make_ladder(int t_star, const SamplerConfig& cfg) {
  if (cfg.single_jump) return diffsched::SamplingLadder{{t_star, 0}, 0.0};
  if (cfg.mode == StepMode::kAncestral) return unit_ladder(t_star);
  return diffsched::geometric_ladder(t_star, cfg.ratio);
}

/// x_{t*} = sqrt(SNR / (1 + SNR)) y with t* the SNR-matched step.
inline ReverseState init_state(const Snapshot& y, double snr, const diffsched::NoiseSchedule& sched,
                               const SamplerConfig& cfg = {}) {
  detail::require(snr > 0.0, "init_state: SNR must be positive");
  ReverseState st;
  st.t = std::isinf(snr) ? 1 : diffsched::match_step(snr, sched);
  const double scale = std::isinf(snr) ? 1.0 : std::sqrt(snr / (1.0 + snr));
  st.x = Snapshot(y.shape());
  for (std::size_t i = 0; i < y.size(); ++i) st.x[i] = static_cast<float>(scale * y[i]);
  st.ladder = make_ladder(st.t, cfg);
  return st;
}

/// Deterministic re-projection x_{t'} = sqrt(abar_{t'}) x0_hat + sqrt(1 - abar_{t'}) eps_hat.
/// t' = 0 returns x0_hat.
template <class S>
Tensor<S> jump(const Tensor<S>& x_t, int t, int t_next, const Tensor<S>& eps_hat, const diffsched::NoiseSchedule& sched) {
  if (t_next >= t || t_next < 0)
    throw ArgumentError("reverse step: next step " + std::to_string(t_next) + " must lie in [0, " +
                        std::to_string(t) + ")");
  auto x0 = denoiser::predict_clean(x_t, t, eps_hat, sched);
  if (t_next == 0) return x0;
  const double a = std::sqrt(sched.alpha_bar(t_next));
  const double b = std::sqrt(1.0 - sched.alpha_bar(t_next));
  for (std::size_t i = 0; i < x0.size(); ++i)
    x0[i] = static_cast<S>(a * static_cast<double>(x0[i]) + b * static_cast<double>(eps_hat[i]));
  return x0;
}

/// Adjacent step t -> t - 1 with the reverse mean
/// (x_t - beta_t / sqrt(1 - abar_t) eps_hat) / sqrt(alpha_t) plus noise of
/// variance beta_t (half per real element). Step 1 -> 0 returns x0_hat.
template <class S>
Tensor<S> ancestral_step(const Tensor<S>& x_t, int t, const Tensor<S>& eps_hat, const diffsched::NoiseSchedule& sched,
                         Rng& rng) {
  if (t < 1) throw ArgumentError("ancestral_step: step must be >= 1");
  if (t == 1) return denoiser::predict_clean(x_t, t, eps_hat, sched);
  const double beta = sched.beta(t);
  const double c = beta / std::sqrt(1.0 - sched.alpha_bar(t));
  const double inv = 1.0 / std::sqrt(sched.alpha(t));
  const double sd = std::sqrt(beta * 0.5);
  Tensor<S> out(x_t.shape());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = static_cast<S>(inv * (static_cast<double>(x_t[i]) - c * static_cast<double>(eps_hat[i])) +
                            sd * rng.normal());
  return out;
}

/// Advances the state one rung given the network output at the current step.
inline void reverse_step(ReverseState& st, int t_next, const Snapshot& eps_hat, const diffsched::NoiseSchedule& sched,
                         StepMode mode = StepMode::kDeterministic, Rng* rng = nullptr) {
  if (t_next >= st.t) throw ArgumentError("reverse_step: t_next must be below the current step");
  if (mode == StepMode::kAncestral && t_next == st.t - 1) {
    detail::require(rng != nullptr, "reverse_step: ancestral mode needs a random source");
    st.x = ancestral_step(st.x, st.t, eps_hat, sched, *rng);
  } else {
    st.x = jump(st.x, st.t, t_next, eps_hat, sched);
  }
  st.t = t_next;
  ++st.rung;
}

/// Window for slot k over a batch of observation streams. prev[n] == nullptr
/// marks a missing previous estimate.
template <class S>
encoder::WindowBatch<S> make_window(const encoder::EncoderConfig& cfg,
                                    const std::vector<const std::vector<Snapshot>*>& obs, std::span<const int> k,
                                    const std::vector<const Snapshot*>& prev) {
  const int n = static_cast<int>(obs.size());
  const int l = cfg.history();
  detail::require(static_cast<int>(k.size()) == n && static_cast<int>(prev.size()) == n,
                  "make_window: batch size mismatch");
  auto w = encoder::WindowBatch<S>::empty(cfg, n);
  const std::size_t row = static_cast<std::size_t>(2) * cfg.height * cfg.width;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < l; ++j) {
      const int slot = k[i] - l + j;
      if (slot < 0) continue;
      const auto& y = (*obs[i]).at(static_cast<std::size_t>(slot));
      detail::require(y.size() == row, "make_window: frame size mismatch");
      std::copy(y.data(), y.data() + row, w.frames[j].data() + i * row);
      w.frame_valid[i * l + j] = true;
    }
    if (prev[i] != nullptr) {
      detail::require(prev[i]->size() == row, "make_window: previous estimate size mismatch");
      std::copy(prev[i]->data(), prev[i]->data() + row, w.prev.data() + i * row);
      w.has_prev[i] = true;
    }
  }
  return w;
}

struct SlotResult {
  std::vector<Snapshot> estimates;               // per sample
  std::vector<int> steps;                        // network calls per sample
  std::vector<std::vector<Snapshot>> iterates;   // [b - 1][sample]
};

/// Runs the reverse process for one slot of every sample in the window batch.
inline SlotResult denoise_slot(Model<float>& model, const encoder::WindowBatch<float>& w,
                               const std::vector<const Snapshot*>& y, std::span<const double> snr,
                               std::span<const int> k, const SamplerConfig& cfg, Rng& rng) {
  const int n = w.batch;
  detail::require(static_cast<int>(y.size()) == n && static_cast<int>(snr.size()) == n &&
                      static_cast<int>(k.size()) == n,
                  "denoise_slot: batch size mismatch");
  const auto& sched = model.schedule();
  Tensor<float> ctx;
  {
    nn::Tape<float> tape(false);
    ctx = model.encoder().encode(tape, w).value();
  }
  Tensor<float> prev_map = w.prev;
  for (int i = 0; i < n; ++i)
    if (!w.has_prev[i]) std::fill(prev_map.data() + i * y[0]->size(), prev_map.data() + (i + 1) * y[0]->size(), 0.f);

  std::vector<ReverseState> st;
  st.reserve(static_cast<std::size_t>(n));
  int max_rungs = 0;
  for (int i = 0; i < n; ++i) {
    const double s = cfg.estimate_snr ? estimate_snr(*y[i]) : snr[i];
    st.push_back(init_state(*y[i], s, sched, cfg));
    max_rungs = std::max(max_rungs, st.back().ladder.length() - 1);
  }

  SlotResult res;
  res.iterates.assign(static_cast<std::size_t>(std::max(cfg.record_iterates, 0)), std::vector<Snapshot>(n));
  for (int r = 0; r < max_rungs; ++r) {
    std::vector<int> active;
    std::vector<const Tensor<float>*> xs;
    std::vector<int> ts;
    std::vector<int> ks;
    for (int i = 0; i < n; ++i)
      if (st[i].rung < st[i].ladder.length() - 1) {
        active.push_back(i);
        xs.push_back(&st[i].x);
        ts.push_back(st[i].t);
        ks.push_back(k[i]);
      }
    Tensor<float> eps;
    {
      nn::Tape<float> tape(false);
      const auto x = tape.constant(stack(xs));
      const auto c = tape.constant(gather_rows(ctx, active));
      const auto p = tape.constant(gather_rows(prev_map, active));
      eps = model.denoiser().predict_noise(tape, x, ts, ks, c, p).value();
    }
    for (std::size_t a = 0; a < active.size(); ++a) {
      auto& s = st[active[a]];
      reverse_step(s, s.ladder.steps[s.rung + 1], take_row(eps, static_cast<int>(a)), sched, cfg.mode, &rng);
    }
    if (r < cfg.record_iterates)
      for (int i = 0; i < n; ++i) res.iterates[r][i] = st[i].x;
  }
  for (int r = max_rungs; r < cfg.record_iterates; ++r)
    for (int i = 0; i < n; ++i) res.iterates[r][i] = st[i].x;
  for (auto& s : st) {
    res.steps.push_back(s.rung);
    res.estimates.push_back(std::move(s.x));
  }
  return res;
}

struct SequenceEstimate {
  std::vector<Snapshot> estimates;                // x0_hat per slot
  std::vector<int> steps;                         // network calls per slot
  std::vector<double> snr;                        // input SNR per slot (linear)
  std::vector<std::vector<Snapshot>> iterates;    // [b - 1][slot] when recorded

  int size() const noexcept { return static_cast<int>(estimates.size()); }
};

/// Tracks every sequence slot by slot; slot k is conditioned on the estimate
/// produced for slot k - 1. Sequences are batched, slots are not.
inline std::vector<SequenceEstimate> denoise_sequences(Model<float>& model, std::span<const NoisySequence> seqs,
                                                       const SamplerConfig& cfg) {
  detail::require(cfg.batch >= 1, "denoise_sequences: batch must be >= 1");
  std::vector<SequenceEstimate> out(seqs.size());
  Rng rng(derive_seed(cfg.seed, 0xA5));
  for (std::size_t b0 = 0; b0 < seqs.size(); b0 += static_cast<std::size_t>(cfg.batch)) {
    const std::size_t b1 = std::min(seqs.size(), b0 + static_cast<std::size_t>(cfg.batch));
    int kmax = 0;
    for (std::size_t s = b0; s < b1; ++s) {
      detail::require(seqs[s].size() >= 1, "denoise_sequences: empty sequence");
      kmax = std::max(kmax, seqs[s].size());
      out[s].iterates.assign(static_cast<std::size_t>(std::max(cfg.record_iterates, 0)), {});
    }
    for (int k = 0; k < kmax; ++k) {
      std::vector<std::size_t> idx;
      for (std::size_t s = b0; s < b1; ++s)
        if (k < seqs[s].size()) idx.push_back(s);
      std::vector<const std::vector<Snapshot>*> obs;
      std::vector<const Snapshot*> prev;
      std::vector<const Snapshot*> y;
      std::vector<double> snr;
      std::vector<int> ks;
      for (auto s : idx) {
        obs.push_back(&seqs[s].observations);
        prev.push_back(k > 0 && cfg.self_condition ? &out[s].estimates.back() : nullptr);
        y.push_back(&seqs[s].observations[k]);
        snr.push_back(seqs[s].snr[k]);
        ks.push_back(k);
      }
      const auto w = make_window<float>(model.config().encoder, obs, ks, prev);
      auto r = denoise_slot(model, w, y, snr, ks, cfg, rng);
      for (std::size_t a = 0; a < idx.size(); ++a) {
        auto& e = out[idx[a]];
        e.estimates.push_back(std::move(r.estimates[a]));
        e.steps.push_back(r.steps[a]);
        e.snr.push_back(cfg.estimate_snr ? estimate_snr(*y[a]) : snr[a]);
        for (int b = 0; b < cfg.record_iterates; ++b) e.iterates[b].push_back(std::move(r.iterates[b][a]));
      }
    }
  }
  return out;
}

/// Single snapshot with an explicit window (history frames and optional
/// previous estimate).
inline Snapshot denoise_snapshot(Model<float>& model, const Snapshot& y, double snr, int k,
                                 const std::vector<Snapshot>& history, const Snapshot* prev,
                                 const SamplerConfig& cfg = {}) {
  // history holds slots 0..k-1 of the stream (only the last T_w - 1 are read).
  detail::require(static_cast<int>(history.size()) >= k, "denoise_snapshot: history shorter than slot index");
  std::vector<const std::vector<Snapshot>*> obs{&history};
  std::vector<const Snapshot*> pv{cfg.self_condition ? prev : nullptr};
  const int ks[1] = {k};
  const auto w = make_window<float>(model.config().encoder, obs, ks, pv);
  Rng rng(derive_seed(cfg.seed, 0xA5));
  const double snrs[1] = {snr};
  auto r = denoise_slot(model, w, {&y}, snrs, ks, cfg, rng);
  return std::move(r.estimates.front());
}

}  // namespace chandiff::sampler
