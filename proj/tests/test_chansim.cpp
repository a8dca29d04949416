#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "chandiff/chansim.hpp"

using namespace chandiff;
using namespace chandiff::chansim;

namespace {

// J0(x) = (1/pi) * integral_0^pi cos(x sin theta) dtheta, composite Simpson.
double j0_integral(double x) {
  const int n = 20000;
  const double h = std::numbers::pi / n;
  double s = 0.0;
  for (int i = 0; i <= n; ++i) {
    const double w = (i == 0 || i == n) ? 1.0 : (i % 2 ? 4.0 : 2.0);
    s += w * std::cos(x * std::sin(i * h));
  }
  return s * h / 3.0 / std::numbers::pi;
}

ShapeConfig probe_shape() {
  ShapeConfig s;
  s.n_tx = 1;
  s.n_rx = 1;
  s.tones = 1;
  s.users = 1;
  return s;
}

MobilityProfile ramp(double v0, double v1, double ta, int k = 64) {
  MobilityProfile p;
  p.v_start = v0;
  p.v_end = v1;
  p.t_accel = ta;
  p.num_slots = k;
  return p;
}

}  // namespace

TEST(Mobility, SpeedRamp) {
  const auto p = ramp(1.0, 3.0, 0.02, 64);
  EXPECT_DOUBLE_EQ(speed_at(p, 0), 1.0);
  EXPECT_NEAR(speed_at(p, 10), 2.0, 1e-12);  // k*dt = t_accel / 2
  EXPECT_DOUBLE_EQ(speed_at(p, 40), 3.0);
  EXPECT_DOUBLE_EQ(speed_at(p, 63), 3.0);
  EXPECT_THROW(speed_at(p, 64), IndexError);
  EXPECT_THROW(speed_at(p, -1), IndexError);
}

TEST(Mobility, MphFactorIsExact) { EXPECT_EQ(kMphToMps, 0.44704); }

TEST(Mobility, Doppler) {
  EXPECT_EQ(doppler(3.5e9, 0.0), 0.0);
  EXPECT_NEAR(doppler(3.5e9, 13.4112), 156.6, 0.05);
  EXPECT_NEAR(doppler(3.5e9, 35.7632), 417.5, 0.05);
  EXPECT_THROW(doppler(3.5e9, -1.0), ArgumentError);
}

TEST(Mobility, TemporalRhoMatchesIntegralForm) {
  const double dt = 1e-3;
  EXPECT_DOUBLE_EQ(temporal_rho(100.0, 0, dt), 1.0);
  // Choose f_D so that 2*pi*f_D*tau*dt hits the requested argument at tau = 1.
  auto fd = [&](double arg) { return arg / (2.0 * std::numbers::pi * dt); };
  EXPECT_NEAR(temporal_rho(fd(2.404826), 1, dt), 0.0, 1e-6);
  EXPECT_NEAR(temporal_rho(fd(3.8317), 1, dt), -0.4028, 1e-4);
  EXPECT_NEAR(j0_integral(2.404826), 0.0, 1e-6);
  EXPECT_NEAR(j0_integral(3.8317), -0.4028, 1e-4);
  for (double x : {0.3, 1.0, 2.0, 5.5, 9.0})
    EXPECT_NEAR(temporal_rho(fd(x), 1, dt), j0_integral(x), 1e-9) << x;
}

TEST(Mobility, DopplerTraceFollowsProfile) {
  const auto p = ramp(1.0, 30.0, 0.03, 64);
  const auto tr = doppler_trace(p, 5);
  ASSERT_EQ(tr.rho.size(), 64u);
  for (int k = 0; k < 64; ++k) EXPECT_DOUBLE_EQ(tr.rho[k][0], 1.0);
  EXPECT_GT(tr.doppler_hz[63], tr.doppler_hz[0]);
  EXPECT_LT(tr.rho[63][1], tr.rho[0][1]);
}

TEST(Simulator, DeterministicInSeed) {
  ShapeConfig s;
  const auto p = ramp(1.0, 20.0, 1.0, 8);
  for (auto m : {ChannelModel::kSumOfSinusoids, ChannelModel::kGaussMarkov}) {
    s.model = m;
    const auto a = generate_sequence(p, s, 42);
    const auto b = generate_sequence(p, s, 42);
    const auto c = generate_sequence(p, s, 43);
    ASSERT_EQ(a.size(), 8);
    for (int k = 0; k < 8; ++k) {
      EXPECT_EQ(a.snapshots[k].storage(), b.snapshots[k].storage());
      EXPECT_EQ(a.snapshots[k].shape(), (std::vector<int>{2, 8, 52}));
    }
    EXPECT_NE(a.snapshots[0].storage(), c.snapshots[0].storage());
  }
}

TEST(Simulator, FrozenChannelRepeats) {
  ShapeConfig s;
  const auto p = ramp(0.0, 0.0, 1.0, 6);
  for (auto m : {ChannelModel::kSumOfSinusoids, ChannelModel::kGaussMarkov}) {
    s.model = m;
    const auto a = generate_sequence(p, s, 5);
    for (int k = 1; k < a.size(); ++k) EXPECT_EQ(a.snapshots[k].storage(), a.snapshots[0].storage());
  }
}

TEST(Simulator, UnitPowerPerComplexElement) {
  ShapeConfig s;
  const auto p = ramp(2.0, 30.0, 1.0, 4);
  for (auto m : {ChannelModel::kSumOfSinusoids, ChannelModel::kGaussMarkov}) {
    s.model = m;
    double acc = 0.0;
    std::size_t n = 0;
    for (int i = 0; i < 200; ++i) {
      const auto seq = generate_sequence(p, s, 100 + i);
      for (const auto& x : seq.snapshots) {
        acc += squared_norm(x.values());
        n += x.size() / 2;
      }
    }
    EXPECT_NEAR(acc / n, 1.0, 0.03) << to_string(m);
  }
}

TEST(Simulator, StackedCovarianceMatchesEnsemble) {
  ShapeConfig s;
  s.n_tx = 2;
  s.n_rx = 1;
  s.tones = 3;
  const SpatialCorrelation corr(s);
  const auto cov = corr.stacked_covariance();
  const auto p = ramp(2.0, 2.0, 1.0, 2);
  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(cov.rows(), cov.cols());
  const int n = 40000;
  for (int i = 0; i < n; ++i) {
    const auto x = generate_sequence(p, s, 7000 + i).snapshots[0];
    Eigen::VectorXd v(static_cast<Eigen::Index>(x.size()));
    for (std::size_t j = 0; j < x.size(); ++j) v[static_cast<Eigen::Index>(j)] = x[j];
    acc += v * v.transpose();
  }
  acc /= n;
  EXPECT_LT((acc - cov).cwiseAbs().maxCoeff(), 0.03);
  EXPECT_NEAR(cov.trace() / (s.height() * s.width()), 1.0, 1e-12);
}

TEST(Simulator, ConstantSpeedCorrelationMatchesJ0) {
  // 30 mph, 4x10^4 single-element realizations (standard error ~0.005).
  const double v = 30.0 * kMphToMps;
  const auto p = MobilityProfile::constant(v, 6, 1e-3, 3.5e9);
  std::vector<ChannelSequence> ens;
  for (int i = 0; i < 40000; ++i) ens.push_back(generate_sequence(p, probe_shape(), derive_seed(11, i)));
  const double fd = doppler(3.5e9, v);
  for (int tau = 1; tau <= 5; ++tau)
    EXPECT_NEAR(empirical_correlation(ens, 5, tau), temporal_rho(fd, tau, 1e-3), 0.02) << tau;
  EXPECT_NEAR(empirical_correlation(ens, 5, 0), 1.0, 1e-12);
}

TEST(Simulator, GaussMarkovLagOneMatchesJ0) {
  auto s = probe_shape();
  s.model = ChannelModel::kGaussMarkov;
  const double v = 30.0 * kMphToMps;
  const auto p = MobilityProfile::constant(v, 3, 1e-3, 3.5e9);
  std::vector<ChannelSequence> ens;
  for (int i = 0; i < 10000; ++i) ens.push_back(generate_sequence(p, s, derive_seed(12, i)));
  EXPECT_NEAR(empirical_correlation(ens, 2, 1), temporal_rho(doppler(3.5e9, v), 1, 1e-3), 0.02);
}

TEST(Simulator, FrozenCorrelationIsOne) {
  const auto p = MobilityProfile::constant(0.0, 10, 1e-3, 3.5e9);
  std::vector<ChannelSequence> ens;
  for (int i = 0; i < 50; ++i) ens.push_back(generate_sequence(p, probe_shape(), i));
  for (int tau = 0; tau <= 9; ++tau) EXPECT_NEAR(empirical_correlation(ens, 9, tau), 1.0, 1e-6);
}

TEST(Simulator, CorrelationErrors) {
  const auto p = MobilityProfile::constant(1.0, 4, 1e-3, 3.5e9);
  std::vector<ChannelSequence> one{generate_sequence(p, probe_shape(), 1)};
  EXPECT_THROW(empirical_correlation(one, 3, 1), StatisticsError);
  one.push_back(generate_sequence(p, probe_shape(), 2));
  EXPECT_THROW(empirical_correlation(one, 2, 3), ArgumentError);
  EXPECT_THROW(empirical_correlation(one, 4, 1), IndexError);
}

TEST(Noise, InfiniteSnrIsIdentity) {
  Rng rng(1);
  const auto x = generate_sequence(ramp(1, 2, 1, 2), ShapeConfig{}, 3).snapshots[0];
  const auto [y, sigma] = add_noise(x, std::numeric_limits<double>::infinity(), rng);
  EXPECT_EQ(sigma, 0.0);
  EXPECT_EQ(y.storage(), x.storage());
  EXPECT_THROW(add_noise(x, 0.0, rng), ArgumentError);
  EXPECT_THROW(add_noise(x, -1.0, rng), ArgumentError);
  EXPECT_THROW(add_noise(Snapshot({2, 1, 1}, 0.0f), 1.0, rng), ArgumentError);
  // A fixed reference power overrides the realized one.
  EXPECT_NEAR(add_noise(x, 4.0, rng, 1.0).second, 0.5, 1e-12);
}

TEST(Noise, MeasuredSnrMatchesRequest) {
  // Realized-power scaling: the pooled measured SNR over ~10^5 elements sits
  // within 0.1 dB of the request.
  Rng rng(12);
  const auto seq = generate_sequence(ramp(3, 30, 1, 240), ShapeConfig{}, 8);
  double sig = 0.0;
  double err = 0.0;
  for (const auto& x : seq.snapshots) {
    const auto [y, sigma] = add_noise(x, 10.0, rng);
    for (std::size_t i = 0; i < x.size(); ++i) {
      sig += double(x[i]) * x[i];
      err += double(y[i] - x[i]) * (y[i] - x[i]);
    }
  }
  EXPECT_NEAR(10.0 * std::log10(sig / err), 10.0, 0.1);
}

TEST(Noise, UnitSnrPowerAndComplexVariance) {
  // 10^5 complex draws at SNR = 1 on a unit-power vector.
  Rng rng(9);
  Snapshot x({2, 1, 1}, 0.0f);
  x[0] = static_cast<float>(std::sqrt(0.5));
  x[1] = static_cast<float>(std::sqrt(0.5));
  double err = 0.0;
  double re = 0.0;
  double im = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const auto [y, sigma] = add_noise(x, 1.0, rng);
    EXPECT_NEAR(sigma, 1.0, 1e-6);
    const double a = y[0] - x[0];
    const double b = y[1] - x[1];
    err += a * a + b * b;
    re += a * a;
    im += b * b;
  }
  EXPECT_NEAR(err / n, 1.0, 0.02);  // E|n_re + j n_im|^2 = sigma^2
  EXPECT_NEAR(re / n, 0.5, 0.01);
  EXPECT_NEAR(im / n, 0.5, 0.01);
}

TEST(Noise, PerSlotSnr) {
  Rng rng(4);
  const auto seq = generate_sequence(ramp(1, 2, 1, 3), ShapeConfig{}, 3);
  const std::vector<double> snr{1.0, 10.0, 100.0};
  const auto y = add_noise(seq, snr, rng);
  ASSERT_EQ(y.size(), 3);
  EXPECT_NEAR(y.sigma[1], std::sqrt(snapshot_power(seq.snapshots[1]) / 10.0), 1e-12);
  EXPECT_EQ(y.snr[2], 100.0);
  const std::vector<double> bad{1.0};
  EXPECT_THROW(add_noise(seq, bad, rng), ArgumentError);
}

TEST(Dataset, ProfilesWithinRanges) {
  SimulatorConfig c;
  c.num_sequences = 20;
  c.num_slots = 4;
  const auto ds = generate_dataset(c, 1);
  ASSERT_EQ(ds.size(), 20u);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& p = ds[i].profile;
    EXPECT_GE(p.v_start, 2.0 * kMphToMps);
    EXPECT_LE(p.v_start, 4.0 * kMphToMps);
    EXPECT_GE(p.v_end, 30.0 * kMphToMps);
    EXPECT_LE(p.v_end, 80.0 * kMphToMps);
    EXPECT_GE(p.t_accel, 1.0);
    EXPECT_LE(p.t_accel, 2.5);
    EXPECT_EQ(ds[i].user, static_cast<int>(i % 8));
  }
  const auto again = generate_dataset(c, 1);
  EXPECT_EQ(again[7].snapshots[3].storage(), ds[7].snapshots[3].storage());
}

TEST(Config, ValidationErrors) {
  ShapeConfig s;
  s.tone_corr = 1.0;
  EXPECT_THROW(s.validate(), ConfigError);
  EXPECT_THROW(channel_model_from_string("rayleigh"), ConfigError);
  EXPECT_EQ(channel_model_from_string("gauss_markov"), ChannelModel::kGaussMarkov);
  MobilityProfile p;
  p.num_slots = 1;
  EXPECT_ANY_THROW(p.validate());
}
