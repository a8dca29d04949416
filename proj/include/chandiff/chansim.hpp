#pragma once

// Non-stationary MIMO-OFDM channel sequences driven by an accelerating
// mobility profile, plus calibrated complex Gaussian observation noise.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "chandiff/errors.hpp"
#include "chandiff/random.hpp"
#include "chandiff/tensor.hpp"

namespace chandiff::chansim {

inline constexpr double kSpeedOfLight = 299'792'458.0;
inline constexpr double kMphToMps = 0.44704;

/// Linear speed ramp of one user. Speeds in m/s, times in seconds.
struct MobilityProfile {
  double v_start = 3.0 * kMphToMps;
  double v_end = 50.0 * kMphToMps;
  double t_accel = 1.5;
  double slot_duration = 1e-3;
  int num_slots = 64;
  double carrier_hz = 3.5e9;

  void validate() const {
    detail::require<ConfigError>(v_start >= 0.0, "MobilityProfile: v_start must be >= 0");
    detail::require<ConfigError>(v_end >= v_start, "MobilityProfile: v_end must be >= v_start");
    detail::require<ConfigError>(t_accel > 0.0, "MobilityProfile: t_accel must be > 0");
    detail::require<ConfigError>(slot_duration > 0.0, "MobilityProfile: slot duration must be > 0");
    detail::require<ConfigError>(num_slots >= 2, "MobilityProfile: need at least 2 slots");
    detail::require<ConfigError>(carrier_hz > 0.0, "MobilityProfile: carrier must be > 0");
  }

  static MobilityProfile constant(double speed, int num_slots, double slot_duration = 1e-3,
                                  double carrier_hz = 3.5e9) {
    MobilityProfile p;
    p.v_start = speed;
    p.v_end = speed;
    p.t_accel = 1.0;
    p.slot_duration = slot_duration;
    p.num_slots = num_slots;
    p.carrier_hz = carrier_hz;
    return p;
  }
};

/// Speed at slot k: v_start + (v_end - v_start) * min(k*dt / t_accel, 1).
inline double speed_at(const MobilityProfile& p, int k) {
  if (k < 0 || k >= p.num_slots)
    throw IndexError("speed_at: slot " + std::to_string(k) + " outside [0, " + std::to_string(p.num_slots) + ")");
  const double frac = std::min(k * p.slot_duration / p.t_accel, 1.0);
  return p.v_start + (p.v_end - p.v_start) * frac;
}

inline double doppler(double carrier_hz, double speed) {
  detail::require(speed >= 0.0, "doppler: negative speed");
  detail::require(carrier_hz > 0.0, "doppler: carrier must be positive");
  return carrier_hz * speed / kSpeedOfLight;
}

/// Isotropic-scattering temporal correlation J0(2*pi*f_D*lag*dt).
inline double temporal_rho(double doppler_hz, double lag, double slot_duration) {
  detail::require(lag >= 0.0, "temporal_rho: negative lag");
  return std::cyl_bessel_j(0.0, 2.0 * std::numbers::pi * doppler_hz * lag * slot_duration);
}

struct DopplerTrace {
  std::vector<double> doppler_hz;        // per slot
  std::vector<std::vector<double>> rho;  // [slot][lag], rho[k][0] == 1
};

inline DopplerTrace doppler_trace(const MobilityProfile& p, int max_lag) {
  p.validate();
  DopplerTrace tr;
  tr.doppler_hz.resize(static_cast<std::size_t>(p.num_slots));
  tr.rho.resize(static_cast<std::size_t>(p.num_slots));
  for (int k = 0; k < p.num_slots; ++k) {
    const double fd = doppler(p.carrier_hz, speed_at(p, k));
    tr.doppler_hz[k] = fd;
    auto& row = tr.rho[k];
    row.resize(static_cast<std::size_t>(max_lag) + 1);
    for (int tau = 0; tau <= max_lag; ++tau) row[tau] = temporal_rho(fd, tau, p.slot_duration);
  }
  return tr;
}

enum class ChannelModel {
  kSumOfSinusoids,  // Clarke/Jakes: random arrival angles, integrated Doppler phase
  kGaussMarkov,     // first-order recursion with lag-1 J0 coefficient
};

inline std::string to_string(ChannelModel m) {
  return m == ChannelModel::kGaussMarkov ? "gauss_markov" : "sum_of_sinusoids";
}

inline ChannelModel channel_model_from_string(const std::string& s) {
  if (s == "gauss_markov") return ChannelModel::kGaussMarkov;
  if (s == "sum_of_sinusoids") return ChannelModel::kSumOfSinusoids;
  throw ConfigError("unknown channel model '" + s + "'");
}

struct ShapeConfig {
  int n_tx = 4;
  int n_rx = 2;
  int tones = 52;
  int users = 8;
  double antenna_corr = 0.5;
  double tone_corr = 0.9;
  ChannelModel model = ChannelModel::kSumOfSinusoids;
  int num_paths = 32;

  int height() const noexcept { return n_tx * n_rx; }
  int width() const noexcept { return tones; }
  int elements() const noexcept { return 2 * height() * width(); }
  std::vector<int> snapshot_shape() const { return {2, height(), width()}; }

  void validate() const {
    detail::require<ConfigError>(n_tx > 0 && n_rx > 0 && tones > 0 && users > 0, "ShapeConfig: sizes must be positive");
    detail::require<ConfigError>(std::abs(antenna_corr) < 1.0 && std::abs(tone_corr) < 1.0,
                                 "ShapeConfig: correlation coefficients must lie in (-1, 1)");
    detail::require<ConfigError>(num_paths > 0, "ShapeConfig: num_paths must be positive");
  }
};

using Snapshot = Tensor<float>;

struct ChannelSequence {
  std::vector<Snapshot> snapshots;  // K tensors [2, H, W]
  MobilityProfile profile;
  ShapeConfig shape;
  int user = 0;
  std::uint64_t seed = 0;

  int size() const noexcept { return static_cast<int>(snapshots.size()); }
};

struct NoisySequence {
  std::vector<Snapshot> observations;
  std::vector<double> sigma;  // complex-equivalent noise std per slot
  std::vector<double> snr;    // linear per slot

  int size() const noexcept { return static_cast<int>(observations.size()); }
};

/// Exponential correlation matrix c^|i-j|.
inline Eigen::MatrixXd exponential_correlation(int n, double c) {
  Eigen::MatrixXd m(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) m(i, j) = std::pow(c, std::abs(i - j));
  return m;
}

inline Eigen::MatrixXd symmetric_sqrt(const Eigen::MatrixXd& c) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(c);
  const Eigen::VectorXd s = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * s.asDiagonal() * es.eigenvectors().transpose();
}

/// Separable antenna x tone correlation, normalized to unit average power per
/// complex element. Maps white innovations W [H, W] to La * W * Lf^T.
class SpatialCorrelation {
 public:
  explicit SpatialCorrelation(const ShapeConfig& shape)
      : antenna_(exponential_correlation(shape.height(), shape.antenna_corr)),
        tone_(exponential_correlation(shape.width(), shape.tone_corr)) {
    const double mean_diag = antenna_.diagonal().mean() * tone_.diagonal().mean();
    scale_ = 1.0 / std::sqrt(mean_diag);
    antenna_sqrt_ = symmetric_sqrt(antenna_) * scale_;
    tone_sqrt_ = symmetric_sqrt(tone_);
  }

  Eigen::MatrixXd apply(const Eigen::MatrixXd& white) const { return antenna_sqrt_ * white * tone_sqrt_.transpose(); }

  /// Covariance of the real stacked snapshot (dimension 2HW): each of the real
  /// and imaginary planes carries half of the complex covariance.
  Eigen::MatrixXd stacked_covariance() const {
    const Eigen::Index hw = antenna_.rows() * tone_.rows();
    Eigen::MatrixXd k(hw, hw);
    for (Eigen::Index a = 0; a < antenna_.rows(); ++a)
      for (Eigen::Index b = 0; b < antenna_.rows(); ++b)
        k.block(a * tone_.rows(), b * tone_.rows(), tone_.rows(), tone_.rows()) =
            antenna_(a, b) * scale_ * scale_ * tone_;
    Eigen::MatrixXd full = Eigen::MatrixXd::Zero(2 * hw, 2 * hw);
    full.topLeftCorner(hw, hw) = 0.5 * k;
    full.bottomRightCorner(hw, hw) = 0.5 * k;
    return full;
  }

 private:
  Eigen::MatrixXd antenna_;
  Eigen::MatrixXd tone_;
  Eigen::MatrixXd antenna_sqrt_;
  Eigen::MatrixXd tone_sqrt_;
  double scale_ = 1.0;
};

namespace internal {

inline void store_plane(const Eigen::MatrixXd& m, Snapshot& out, int plane) {
  const int h = static_cast<int>(m.rows());
  const int w = static_cast<int>(m.cols());
  float* dst = out.data() + static_cast<std::size_t>(plane) * h * w;
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) dst[i * w + j] = static_cast<float>(m(i, j));
}

}  // namespace internal

/// Generates one user's clean channel sequence. Deterministic in `seed`.
///
/// Sum-of-sinusoids: every white element is (1/sqrt(M)) sum_m exp(j(theta_m + phi_m))
/// with theta_m advanced by 2*pi*f_D(k)*dt*cos(alpha_m) each slot, so the ensemble
/// lag correlation is J0 of the integrated Doppler phase. Gauss-Markov:
/// x_k = rho_k x_{k-1} + sqrt(1 - rho_k^2) w_k with rho_k the lag-1 J0 value.
inline ChannelSequence generate_sequence(const MobilityProfile& profile, const ShapeConfig& shape, std::uint64_t seed,
                                         int user = 0) {
  profile.validate();
  shape.validate();
  const int h = shape.height();
  const int w = shape.width();
  const int hw = h * w;
  const SpatialCorrelation corr(shape);
  Rng rng(seed);

  ChannelSequence seq;
  seq.profile = profile;
  seq.shape = shape;
  seq.user = user;
  seq.seed = seed;
  seq.snapshots.reserve(static_cast<std::size_t>(profile.num_slots));

  Eigen::MatrixXd re(h, w);
  Eigen::MatrixXd im(h, w);
  auto emit = [&]() {
    Snapshot s(shape.snapshot_shape());
    internal::store_plane(corr.apply(re), s, 0);
    internal::store_plane(corr.apply(im), s, 1);
    seq.snapshots.push_back(std::move(s));
  };

  if (shape.model == ChannelModel::kSumOfSinusoids) {
    const int m = shape.num_paths;
    const double norm = 1.0 / std::sqrt(static_cast<double>(m));
    std::vector<double> cos_alpha(static_cast<std::size_t>(hw) * m);
    std::vector<double> phase(static_cast<std::size_t>(hw) * m);
    for (std::size_t i = 0; i < phase.size(); ++i) {
      cos_alpha[i] = std::cos(2.0 * std::numbers::pi * rng.uniform());
      phase[i] = 2.0 * std::numbers::pi * rng.uniform();
    }
    for (int k = 0; k < profile.num_slots; ++k) {
      if (k > 0) {
        const double step = 2.0 * std::numbers::pi * doppler(profile.carrier_hz, speed_at(profile, k)) *
                            profile.slot_duration;
        for (std::size_t i = 0; i < phase.size(); ++i) phase[i] += step * cos_alpha[i];
      }
      for (int e = 0; e < hw; ++e) {
        double sr = 0.0;
        double si = 0.0;
        const double* ph = phase.data() + static_cast<std::size_t>(e) * m;
        for (int p = 0; p < m; ++p) {
          sr += std::cos(ph[p]);
          si += std::sin(ph[p]);
        }
        // Each phasor has unit power, so each real part carries variance 1/2.
        re(e / w, e % w) = sr * norm;
        im(e / w, e % w) = si * norm;
      }
      emit();
    }
    return seq;
  }

  const double half = std::sqrt(0.5);
  Eigen::MatrixXd wr(h, w);
  Eigen::MatrixXd wi(h, w);
  auto draw = [&]() {
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) {
        wr(i, j) = half * rng.normal();
        wi(i, j) = half * rng.normal();
      }
  };
  draw();
  re = wr;
  im = wi;
  emit();
  for (int k = 1; k < profile.num_slots; ++k) {
    const double rho = temporal_rho(doppler(profile.carrier_hz, speed_at(profile, k)), 1, profile.slot_duration);
    if (!(rho > -1.0 && rho <= 1.0))
      throw ScheduleError("generate_sequence: lag-1 correlation " + std::to_string(rho) + " outside (-1, 1]");
    const double innov = std::sqrt(std::max(0.0, 1.0 - rho * rho));
    draw();
    re = rho * re + innov * wr;
    im = rho * im + innov * wi;
    emit();
  }
  return seq;
}

/// Mean power per complex element, |x|^2 / (size / 2).
inline double snapshot_power(const Snapshot& x) {
  double p = 0.0;
  for (float v : x.storage()) p += double(v) * v;
  return 2.0 * p / static_cast<double>(x.size());
}

/// y = x + sigma * eps with eps per-real-element variance 1/2, so the
/// complex-equivalent noise power is sigma^2 = signal_power / snr.
/// By default signal_power is the realized power of x, which makes snr the
/// SNR of this snapshot; pass a positive value to fix it instead. An
/// infinite SNR returns x unchanged with sigma = 0.
inline std::pair<Snapshot, double> add_noise(const Snapshot& x, double snr_linear, Rng& rng,
                                             double signal_power = 0.0) {
  detail::require(snr_linear > 0.0, "add_noise: SNR must be positive");
  detail::require(signal_power >= 0.0, "add_noise: signal power must be non-negative");
  Snapshot y = x;
  if (std::isinf(snr_linear)) return {std::move(y), 0.0};
  const double p = signal_power > 0.0 ? signal_power : snapshot_power(x);
  if (!(p > 0.0)) throw ArgumentError("add_noise: snapshot has zero power");
  const double sigma = std::sqrt(p / snr_linear);
  const double s = sigma * std::sqrt(0.5);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = static_cast<float>(x[i] + s * rng.normal());
  return {std::move(y), sigma};
}

inline NoisySequence add_noise(const ChannelSequence& seq, std::span<const double> snr_per_slot, Rng& rng) {
  detail::require(static_cast<int>(snr_per_slot.size()) == seq.size(), "add_noise: one SNR per slot required");
  NoisySequence out;
  for (int k = 0; k < seq.size(); ++k) {
    auto [y, sigma] = add_noise(seq.snapshots[k], snr_per_slot[k], rng);
    out.observations.push_back(std::move(y));
    out.sigma.push_back(sigma);
    out.snr.push_back(snr_per_slot[k]);
  }
  return out;
}

inline NoisySequence add_noise(const ChannelSequence& seq, double snr_linear, Rng& rng) {
  const std::vector<double> snr(static_cast<std::size_t>(seq.size()), snr_linear);
  return add_noise(seq, snr, rng);
}

/// Normalized trace correlation between slots k and k - tau over an ensemble:
/// sum <x_k, x_{k-tau}> / sqrt(sum |x_k|^2 * sum |x_{k-tau}|^2).
inline double empirical_correlation(std::span<const ChannelSequence> ensemble, int k, int tau) {
  if (ensemble.size() < 2) throw StatisticsError("empirical_correlation: ensemble needs at least 2 sequences");
  detail::require(tau >= 0 && tau <= k, "empirical_correlation: need 0 <= tau <= k");
  double cross = 0.0;
  double pa = 0.0;
  double pb = 0.0;
  for (const auto& seq : ensemble) {
    if (k >= seq.size()) throw IndexError("empirical_correlation: slot outside sequence");
    const auto& a = seq.snapshots[k];
    const auto& b = seq.snapshots[k - tau];
    for (std::size_t i = 0; i < a.size(); ++i) {
      cross += double(a[i]) * b[i];
      pa += double(a[i]) * a[i];
      pb += double(b[i]) * b[i];
    }
  }
  if (pa <= 0.0 || pb <= 0.0) throw StatisticsError("empirical_correlation: zero-power ensemble");
  return std::clamp(cross / std::sqrt(pa * pb), -1.0, 1.0);
}

/// Speed ranges (mph) and ramp duration range (s) from which user profiles
/// are drawn.
struct MobilityRanges {
  double start_mph_lo = 2.0;
  double start_mph_hi = 4.0;
  double end_mph_lo = 30.0;
  double end_mph_hi = 80.0;
  double t_accel_lo = 1.0;
  double t_accel_hi = 2.5;
};

inline MobilityProfile draw_profile(Rng& rng, const MobilityRanges& r, int num_slots, double slot_duration,
                                    double carrier_hz) {
  MobilityProfile p;
  p.v_start = rng.uniform(r.start_mph_lo, r.start_mph_hi) * kMphToMps;
  p.v_end = rng.uniform(r.end_mph_lo, r.end_mph_hi) * kMphToMps;
  p.t_accel = rng.uniform(r.t_accel_lo, r.t_accel_hi);
  p.num_slots = num_slots;
  p.slot_duration = slot_duration;
  p.carrier_hz = carrier_hz;
  return p;
}

struct SimulatorConfig {
  ShapeConfig shape;
  MobilityRanges ranges;
  int num_slots = 64;
  double slot_duration = 1e-3;
  double carrier_hz = 3.5e9;
  int num_sequences = 200;
};

/// Draws `num_sequences` user sequences, `shape.users` per drop, each with its
/// own profile and derived seed.
inline std::vector<ChannelSequence> generate_dataset(const SimulatorConfig& cfg, std::uint64_t seed) {
  detail::require<ConfigError>(cfg.num_sequences > 0, "generate_dataset: num_sequences must be positive");
  std::vector<ChannelSequence> out;
  out.reserve(static_cast<std::size_t>(cfg.num_sequences));
  Rng profiles(derive_seed(seed, 1));
  for (int s = 0; s < cfg.num_sequences; ++s) {
    const auto p = draw_profile(profiles, cfg.ranges, cfg.num_slots, cfg.slot_duration, cfg.carrier_hz);
    out.push_back(generate_sequence(p, cfg.shape, derive_seed(seed, 1000 + static_cast<std::uint64_t>(s)),
                                    s % cfg.shape.users));
  }
  return out;
}

}  // namespace chandiff::chansim
