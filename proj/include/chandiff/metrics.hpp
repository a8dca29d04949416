#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "chandiff/errors.hpp"
#include "chandiff/random.hpp"
#include "chandiff/tensor.hpp"

namespace chandiff::metrics {

inline constexpr double kFloorDb = -100.0;

inline double to_db(double ratio) {
  if (!(ratio > 0.0)) return kFloorDb;
  return std::max(kFloorDb, 10.0 * std::log10(ratio));
}

/// ||x_hat - x||^2 / ||x||^2 for one snapshot.
template <class S>
double nmse_ratio(std::span<const S> x_hat, std::span<const S> x) {
  if (x_hat.size() != x.size()) throw ArgumentError("nmse: shape mismatch");
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = static_cast<double>(x_hat[i]) - static_cast<double>(x[i]);
    num += d * d;
    den += static_cast<double>(x[i]) * static_cast<double>(x[i]);
  }
  if (!(den > 0.0)) throw ArgumentError("nmse: reference has zero norm");
  return num / den;
}

template <class S>
double nmse_ratio(const Tensor<S>& x_hat, const Tensor<S>& x) {
  if (!x_hat.same_shape(x)) throw ArgumentError("nmse: shape mismatch " + x_hat.shape_string() + " vs " + x.shape_string());
  return nmse_ratio<S>(x_hat.values(), x.values());
}

/// Mean of per-snapshot linear ratios, in dB.
inline double mean_db(std::span<const double> ratios) {
  detail::require(!ratios.empty(), "mean_db: no samples");
  double acc = 0.0;
  for (double r : ratios) acc += r;
  return to_db(acc / static_cast<double>(ratios.size()));
}

template <class S>
double nmse_db(const Tensor<S>& x_hat, const Tensor<S>& x) {
  return to_db(nmse_ratio(x_hat, x));
}

struct Interval {
  double mean_db = 0.0;
  double low_db = 0.0;
  double high_db = 0.0;
};

/// Percentile bootstrap of the mean ratio, reported in dB.
inline Interval bootstrap_db(std::span<const double> ratios, int resamples = 1000, double level = 0.95,
                             std::uint64_t seed = 0) {
  detail::require(!ratios.empty(), "bootstrap: no samples");
  detail::require(resamples >= 1 && level > 0.0 && level < 1.0, "bootstrap: bad resample count or level");
  Interval out;
  out.mean_db = mean_db(ratios);
  Rng rng(seed);
  const int n = static_cast<int>(ratios.size());
  std::vector<double> means(static_cast<std::size_t>(resamples));
  for (auto& m : means) {
    double acc = 0.0;
    for (int i = 0; i < n; ++i) acc += ratios[static_cast<std::size_t>(rng.uniform_int(0, n - 1))];
    m = acc / n;
  }
  std::sort(means.begin(), means.end());
  const double tail = (1.0 - level) / 2.0;
  auto pick = [&](double q) {
    const auto i = static_cast<std::size_t>(std::clamp(q * (resamples - 1), 0.0, resamples - 1.0) + 0.5);
    return means[std::min(i, means.size() - 1)];
  };
  out.low_db = to_db(pick(tail));
  out.high_db = to_db(pick(1.0 - tail));
  return out;
}

}  // namespace chandiff::metrics
