#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "chandiff/autodiff.hpp"
#include "chandiff/chansim.hpp"
#include "chandiff/context_encoder.hpp"
#include "chandiff/denoiser.hpp"
#include "chandiff/diffsched.hpp"
#include "chandiff/errors.hpp"
#include "chandiff/metrics.hpp"
#include "chandiff/model.hpp"
#include "chandiff/nn.hpp"
#include "chandiff/random.hpp"
#include "chandiff/sampler.hpp"

namespace chandiff::trainer {

using chansim::ChannelSequence;
using chansim::NoisySequence;
using chansim::Snapshot;
using nn::Tape;
using nn::Var;

struct TrainingConfig {
  int epochs = 10;
  int batch = 64;
  double lr = 1e-3;
  double clip_norm = 1.0;
  double lambda = 0.01;        // smoothness weight
  double p_tf = 0.5;           // initial teacher-forcing probability
  double tf_anneal = 0.5;      // fraction of epochs over which p_tf decays to the floor
  double p_tf_floor = 0.0;
  double snr_min_db = -5.0;    // per-sequence training SNR range
  double snr_max_db = 25.0;
  std::vector<double> val_snr_db{0.0, 10.0, 20.0};
  std::uint64_t seed = 0;

  void validate() const {
    detail::require<ConfigError>(epochs >= 1, "trainer: epochs must be >= 1");
    detail::require<ConfigError>(batch >= 1, "trainer: batch must be >= 1");
    detail::require<ConfigError>(lr > 0.0 && clip_norm > 0.0, "trainer: lr and clip_norm must be positive");
    detail::require<ConfigError>(lambda >= 0.0 && lambda < 1.0, "trainer: lambda must satisfy 0 <= lambda << 1");
    detail::require<ConfigError>(p_tf >= 0.0 && p_tf <= 1.0, "trainer: p_tf must lie in [0, 1]");
    detail::require<ConfigError>(tf_anneal > 0.0 && tf_anneal <= 1.0, "trainer: tf_anneal must lie in (0, 1]");
    detail::require<ConfigError>(p_tf_floor >= 0.0 && p_tf_floor <= p_tf, "trainer: p_tf_floor must lie in [0, p_tf]");
    detail::require<ConfigError>(snr_min_db <= snr_max_db, "trainer: empty SNR range");
  }

  /// Teacher-forcing probability in effect during `epoch` (0-based).
  double teacher_forcing_at(int epoch) const {
    const double span = tf_anneal * epochs;
    return p_tf_floor + (p_tf - p_tf_floor) * std::max(0.0, 1.0 - epoch / span);
  }
};

/// One optimisation batch. The previous estimate sits in window.prev with
/// has_prev marking which rows carry one; absent rows are zero.
template <class S>
struct TrainingBatch {
  encoder::WindowBatch<S> window;
  Tensor<S> x0;    // [N, 2, H, W]
  Tensor<S> eps;   // [N, 2, H, W]
  std::vector<int> t;
  std::vector<int> k;

  int size() const noexcept { return window.batch; }
};

template <class S>
struct LossTerms {
  Var<S> total;
  Var<S> noise;
  Var<S> smooth;
  Var<S> x0_hat;
};

/// t ~ Uniform{1..T}.
inline std::vector<int> sample_steps(Rng& rng, int n, int steps) {
  std::vector<int> t(static_cast<std::size_t>(n));
  for (auto& v : t) v = rng.uniform_int(1, steps);
  return t;
}

/// Standard complex Gaussian noise in stacked form: variance 1/2 per real element.
template <class S>
Tensor<S> sample_noise(Rng& rng, std::vector<int> shape) {
  Tensor<S> e(std::move(shape));
  const double sd = std::sqrt(0.5);
  for (auto& v : e.storage()) v = static_cast<S>(sd * rng.normal());
  return e;
}

/// Row-wise forward diffusion with per-sample steps.
template <class S>
Tensor<S> forward_batch(const Tensor<S>& x0, std::span<const int> t, const Tensor<S>& eps,
                        const diffsched::NoiseSchedule& sched) {
  if (!x0.same_shape(eps)) throw ArgumentError("forward_batch: eps shape differs from x0");
  const int n = x0.dim(0);
  detail::require(static_cast<int>(t.size()) == n, "forward_batch: one step per sample required");
  const std::size_t row = x0.size() / static_cast<std::size_t>(n);
  Tensor<S> out(x0.shape());
  for (int i = 0; i < n; ++i) {
    const double ab = sched.alpha_bar(t[i]);
    const S a = static_cast<S>(std::sqrt(ab));
    const S b = static_cast<S>(std::sqrt(1.0 - ab));
    for (std::size_t q = 0; q < row; ++q) out[i * row + q] = a * x0[i * row + q] + b * eps[i * row + q];
  }
  return out;
}

/// Squared distance between consecutive clean estimates, averaged per
/// element over rows with a previous estimate. No gradient reaches `prev`.
template <class S>
Var<S> smoothness_penalty(const Var<S>& x0_hat, const Var<S>& prev, const std::vector<bool>& has_prev) {
  if (x0_hat.shape() != prev.shape()) throw ArgumentError("smoothness_penalty: shape mismatch");
  return nn::masked_mse(x0_hat, nn::detach(prev), has_prev);
}

/// L_noise + lambda * smoothness, with x0_hat from predict_clean at the
/// sampled step.
template <class S>
LossTerms<S> total_loss(Model<S>& model, Tape<S>& tape, const TrainingBatch<S>& b, double lambda) {
  const auto& sched = model.schedule();
  const auto prev = tape.constant(b.window.prev);
  const auto xt = tape.constant(forward_batch(b.x0, b.t, b.eps, sched));
  const auto ctx = model.encoder().encode(tape, b.window, prev);
  const auto eps_hat = model.denoiser().predict_noise(tape, xt, b.t, b.k, ctx, prev);
  LossTerms<S> out;
  out.noise = nn::mse(eps_hat, tape.constant(b.eps));
  if (lambda == 0.0) {
    out.total = out.noise;
    return out;
  }
  out.x0_hat = denoiser::predict_clean(xt, b.t, eps_hat, sched);
  out.smooth = smoothness_penalty(out.x0_hat, prev, b.window.has_prev);
  out.total = nn::add_scaled(out.noise, static_cast<S>(lambda), out.smooth);
  return out;
}

template <class S>
Var<S> noise_loss(Model<S>& model, Tape<S>& tape, const TrainingBatch<S>& b) {
  return total_loss(model, tape, b, 0.0).noise;
}

enum class PrevSource { kNull, kTeacher, kRollout };

/// Null at k = 0; otherwise ground truth with probability p_tf, else the
/// stored rollout estimate.
inline PrevSource make_prev_estimate(int k, double p_tf, Rng& rng) {
  if (k == 0) return PrevSource::kNull;
  return rng.bernoulli(p_tf) ? PrevSource::kTeacher : PrevSource::kRollout;
}

/// Noisy copies of the clean sequences at one SNR (dB) per sequence.
inline std::vector<NoisySequence> observe(std::span<const ChannelSequence> seqs, std::span<const double> snr_db,
                                          std::uint64_t seed) {
  detail::require(seqs.size() == snr_db.size(), "observe: one SNR per sequence required");
  std::vector<NoisySequence> out;
  out.reserve(seqs.size());
  for (std::size_t s = 0; s < seqs.size(); ++s) {
    Rng rng(derive_seed(seed, s));
    out.push_back(chansim::add_noise(seqs[s], std::pow(10.0, snr_db[s] / 10.0), rng));
  }
  return out;
}

/// Mean dB NMSE of the one-call-per-slot tracker over the given SNRs.
inline double validation_nmse_db(Model<float>& model, std::span<const ChannelSequence> val,
                                 std::span<const double> snr_db, std::uint64_t seed) {
  if (val.empty() || snr_db.empty()) return std::nan("");
  sampler::SamplerConfig sc;
  sc.single_jump = true;
  double acc = 0.0;
  for (std::size_t i = 0; i < snr_db.size(); ++i) {
    std::vector<double> lv(val.size(), snr_db[i]);
    const auto obs = observe(val, lv, derive_seed(seed, 1000 + i));
    const auto est = sampler::denoise_sequences(model, obs, sc);
    std::vector<double> r;
    for (std::size_t s = 0; s < val.size(); ++s)
      for (int k = 0; k < val[s].size(); ++k) r.push_back(metrics::nmse_ratio(est[s].estimates[k], val[s].snapshots[k]));
    acc += metrics::mean_db(r);
  }
  return acc / static_cast<double>(snr_db.size());
}

struct EpochRecord {
  int epoch = 0;
  double loss = 0.0;
  double noise_loss = 0.0;
  double smooth_loss = 0.0;
  double val_nmse_db = 0.0;
  double p_tf = 0.0;
  double seconds = 0.0;
  double grad_norm = 0.0;  // mean pre-clip norm
};

struct TrainingResult {
  std::vector<EpochRecord> history;
  int best_epoch = -1;
  double best_val_nmse_db = 0.0;
  std::int64_t steps = 0;
};

using EpochCallback = std::function<void(const EpochRecord&, bool improved)>;

/// Minimises total_loss. Sequences are processed in groups of `batch`
/// that advance through the slots together, so the rollout estimate used
/// for self-conditioning always comes from the current parameters. After
/// each update the group's one-call estimate of slot k is refreshed and
/// becomes the rollout input for slot k + 1. The parameters with the best
/// validation NMSE are restored at the end.
inline TrainingResult train(Model<float>& model, std::span<const ChannelSequence> train_set,
                            std::span<const ChannelSequence> val_set, const TrainingConfig& cfg,
                            const EpochCallback& on_epoch = {}) {
  cfg.validate();
  detail::require<ConfigError>(!train_set.empty(), "train: empty training set");
  const auto& ecfg = model.config().encoder;
  const int steps_t = model.schedule().steps();
  auto params = model.parameters();
  nn::Adam<float> opt(params, nn::AdamConfig{cfg.lr});
  Rng rng(derive_seed(cfg.seed, 0x7A1));

  TrainingResult res;
  std::vector<Tensor<float>> best;
  sampler::SamplerConfig one;
  one.single_jump = true;

  for (int ep = 0; ep < cfg.epochs; ++ep) {
    const auto t0 = std::chrono::steady_clock::now();
    EpochRecord rec;
    rec.epoch = ep;
    rec.p_tf = cfg.teacher_forcing_at(ep);

    std::vector<double> snr_db(train_set.size());
    for (auto& s : snr_db) s = rng.uniform(cfg.snr_min_db, cfg.snr_max_db);
    const auto obs = observe(train_set, snr_db, derive_seed(cfg.seed, 0x0B5 + static_cast<std::uint64_t>(ep)));

    std::vector<int> order(train_set.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    rng.shuffle(order.begin(), order.end());

    std::int64_t nb = 0;
    for (std::size_t g0 = 0; g0 < order.size(); g0 += static_cast<std::size_t>(cfg.batch)) {
      const std::size_t g1 = std::min(order.size(), g0 + static_cast<std::size_t>(cfg.batch));
      std::vector<int> group(order.begin() + static_cast<long>(g0), order.begin() + static_cast<long>(g1));
      int kmax = 0;
      for (int s : group) kmax = std::max(kmax, train_set[s].size());
      std::vector<Snapshot> rollout(group.size());

      for (int k = 0; k < kmax; ++k) {
        std::vector<int> live;  // positions within the group that have slot k
        for (std::size_t a = 0; a < group.size(); ++a)
          if (k < train_set[group[a]].size()) live.push_back(static_cast<int>(a));
        const int n = static_cast<int>(live.size());

        std::vector<const std::vector<Snapshot>*> ob;
        std::vector<const Snapshot*> prev;
        std::vector<const Snapshot*> roll_prev;
        std::vector<const Tensor<float>*> x0s;
        std::vector<int> ks(static_cast<std::size_t>(n), k);
        for (int a : live) {
          const auto& seq = train_set[group[a]];
          ob.push_back(&obs[group[a]].observations);
          x0s.push_back(&seq.snapshots[k]);
          const auto src = make_prev_estimate(k, rec.p_tf, rng);
          const Snapshot* p = nullptr;
          if (src == PrevSource::kTeacher) p = &seq.snapshots[k - 1];
          if (src == PrevSource::kRollout) p = &rollout[a];
          prev.push_back(p);
          roll_prev.push_back(k > 0 ? &rollout[a] : nullptr);
        }

        TrainingBatch<float> b;
        b.window = sampler::make_window<float>(ecfg, ob, ks, prev);
        b.x0 = stack(x0s);
        b.t = sample_steps(rng, n, steps_t);
        b.k = ks;
        b.eps = sample_noise<float>(rng, b.x0.shape());

        nn::zero_grad(params);
        double lv = 0.0;
        double ln = 0.0;
        double ls = 0.0;
        {
          Tape<float> tape;
          const auto terms = total_loss(model, tape, b, cfg.lambda);
          lv = terms.total.value()[0];
          ln = terms.noise.value()[0];
          ls = terms.smooth.valid() ? terms.smooth.value()[0] : 0.0;
          if (!std::isfinite(lv))
            throw NumericError("train: non-finite loss at epoch " + std::to_string(ep) + ", slot " +
                               std::to_string(k) + " (noise " + std::to_string(ln) + ", smooth " +
                               std::to_string(ls) + ")");
          tape.backward(terms.total);
        }
        rec.grad_norm += nn::clip_grad_norm(params, cfg.clip_norm);
        opt.step();
        rec.loss += lv;
        rec.noise_loss += ln;
        rec.smooth_loss += ls;
        ++nb;

        // Refresh the rollout chain with the updated parameters.
        std::vector<const Snapshot*> ys;
        std::vector<double> snr;
        for (int a : live) {
          ys.push_back(&obs[group[a]].observations[k]);
          snr.push_back(obs[group[a]].snr[k]);
        }
        const auto w = sampler::make_window<float>(ecfg, ob, ks, roll_prev);
        auto r = sampler::denoise_slot(model, w, ys, snr, ks, one, rng);
        for (std::size_t i = 0; i < live.size(); ++i) rollout[live[i]] = std::move(r.estimates[i]);
      }
    }
    res.steps += nb;
    rec.loss /= static_cast<double>(nb);
    rec.noise_loss /= static_cast<double>(nb);
    rec.smooth_loss /= static_cast<double>(nb);
    rec.grad_norm /= static_cast<double>(nb);
    rec.val_nmse_db = validation_nmse_db(model, val_set, cfg.val_snr_db, derive_seed(cfg.seed, 0x5A1));
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    const bool improved = val_set.empty() || res.best_epoch < 0 || rec.val_nmse_db < res.best_val_nmse_db;
    if (improved) {
      res.best_epoch = ep;
      res.best_val_nmse_db = rec.val_nmse_db;
      best.clear();
      for (const auto* p : params) best.push_back(p->value);
    }
    res.history.push_back(rec);
    if (on_epoch) on_epoch(rec, improved);
  }
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = best[i];
  return res;
}

}  // namespace chandiff::trainer
