#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "chandiff/errors.hpp"
#include "chandiff/tensor.hpp"

namespace chandiff::diffsched {

/// Variance-preserving diffusion schedule. Arrays are indexed by step
/// t = 1..T through the accessors; alpha_bar(0) is 1 by convention.
class NoiseSchedule {
 public:
  NoiseSchedule() = default;

  explicit NoiseSchedule(std::vector<double> betas) : beta_(std::move(betas)) {
    detail::require<ConfigError>(beta_.size() >= 2, "NoiseSchedule: need at least 2 steps");
    alpha_.resize(beta_.size());
    alpha_bar_.resize(beta_.size());
    double prod = 1.0;
    for (std::size_t i = 0; i < beta_.size(); ++i) {
      detail::require<ConfigError>(beta_[i] > 0.0 && beta_[i] < 1.0, "NoiseSchedule: beta must lie in (0, 1)");
      if (i > 0)
        detail::require<ConfigError>(beta_[i] >= beta_[i - 1], "NoiseSchedule: beta must be non-decreasing");
      alpha_[i] = 1.0 - beta_[i];
      prod *= alpha_[i];
      alpha_bar_[i] = prod;
    }
  }

  int steps() const noexcept { return static_cast<int>(beta_.size()); }
  double beta(int t) const { return beta_.at(index(t)); }
  double alpha(int t) const { return alpha_.at(index(t)); }
  double alpha_bar(int t) const { return t == 0 ? 1.0 : alpha_bar_.at(index(t)); }
  double sigma2(int t) const { return 1.0 - alpha_bar(t); }
  double sigma(int t) const { return std::sqrt(sigma2(t)); }
  const std::vector<double>& betas() const noexcept { return beta_; }

 private:
  std::size_t index(int t) const {
    if (t < 1 || t > steps()) throw IndexError("NoiseSchedule: step " + std::to_string(t) + " outside [1, T]");
    return static_cast<std::size_t>(t - 1);
  }

  std::vector<double> beta_;
  std::vector<double> alpha_;
  std::vector<double> alpha_bar_;
};

/// Linear beta ramp from beta_min to beta_max. Only "linear" is supported.
inline NoiseSchedule build_schedule(int steps, double beta_min, double beta_max, const std::string& kind = "linear") {
  if (kind != "linear") throw ConfigError("build_schedule: unsupported schedule kind '" + kind + "'");
  if (!(steps >= 2)) throw ConfigError("build_schedule: T must be >= 2");
  if (!(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0))
    throw ConfigError("build_schedule: need 0 < beta_min <= beta_max < 1");
  std::vector<double> b(static_cast<std::size_t>(steps));
  for (int i = 0; i < steps; ++i) b[i] = beta_min + (beta_max - beta_min) * i / (steps - 1);
  return NoiseSchedule(std::move(b));
}

/// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps.
template <class S>
Tensor<S> forward_sample(const Tensor<S>& x0, int t, const Tensor<S>& eps, const NoiseSchedule& sched) {
  if (!x0.same_shape(eps)) throw ArgumentError("forward_sample: eps shape differs from x0");
  const double ab = sched.alpha_bar(t);
  if (t < 1) throw IndexError("forward_sample: step must be >= 1");
  const S a = static_cast<S>(std::sqrt(ab));
  const S b = static_cast<S>(std::sqrt(1.0 - ab));
  Tensor<S> out(x0.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x0[i] + b * eps[i];
  return out;
}

/// SNR(t) = abar_t / (1 - abar_t).
inline double snr_of_step(int t, const NoiseSchedule& sched) {
  const double ab = sched.alpha_bar(t);
  if (t < 1) throw IndexError("snr_of_step: step must be >= 1");
  return ab / (1.0 - ab);
}

/// Step whose SNR is closest (linear domain) to `snr`; ties go to the smaller
/// step. SNR(t) is strictly decreasing, so this bisects and then compares the
/// two bracketing neighbours.
inline int match_step(double snr, const NoiseSchedule& sched) {
  detail::require(snr > 0.0, "match_step: SNR must be positive");
  int lo = 1;
  int hi = sched.steps();
  if (snr >= snr_of_step(lo, sched)) return lo;
  if (snr <= snr_of_step(hi, sched)) return hi;
  // Invariant: SNR(lo) > snr > SNR(hi).
  while (hi - lo > 1) {
    const int mid = lo + (hi - lo) / 2;
    if (snr_of_step(mid, sched) > snr)
      lo = mid;
    else
      hi = mid;
  }
  const double dlo = std::abs(snr_of_step(lo, sched) - snr);
  const double dhi = std::abs(snr_of_step(hi, sched) - snr);
  return dhi < dlo ? hi : lo;
}

struct SamplingLadder {
  std::vector<int> steps;  // strictly decreasing, first == t*, last == 0
  double ratio = 0.0;

  int length() const noexcept { return static_cast<int>(steps.size()); }
  int start() const { return steps.front(); }
};

/// t_l = floor(r^(l-1) * t*) for l = 1, 2, ... until 0, with repeated values
/// dropped.
inline SamplingLadder geometric_ladder(int t_star, double ratio) {
  detail::require(t_star >= 1, "geometric_ladder: t* must be >= 1");
  detail::require(ratio > 0.0 && ratio < 1.0, "geometric_ladder: ratio must lie in (0, 1)");
  SamplingLadder lad;
  lad.ratio = ratio;
  lad.steps.push_back(t_star);
  double scale = 1.0;
  while (lad.steps.back() > 0) {
    scale *= ratio;
    // Guard against r^l * t* landing a hair below an integer it equals exactly.
    const int next = static_cast<int>(std::floor(scale * t_star * (1.0 + 1e-12)));
    if (next < lad.steps.back()) lad.steps.push_back(next);
  }
  return lad;
}

}  // namespace chandiff::diffsched
