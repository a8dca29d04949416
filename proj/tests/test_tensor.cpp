#include <gtest/gtest.h>

#include <cmath>

#include "chandiff/metrics.hpp"
#include "chandiff/random.hpp"
#include "chandiff/tensor.hpp"

using namespace chandiff;

TEST(Tensor, ShapeAndAccess) {
  Tensor<float> t({2, 3, 4}, 1.5f);
  EXPECT_EQ(t.rank(), 3);
  EXPECT_EQ(t.size(), 24u);
  EXPECT_EQ(t.dim(-1), 4);
  EXPECT_EQ(t.shape_string(), "[2,3,4]");
  EXPECT_EQ(t[23], 1.5f);
  const auto r = t.reshaped({6, 4});
  EXPECT_EQ(r.dim(0), 6);
  EXPECT_ANY_THROW(t.reshaped({5, 5}));
  const auto d = t.cast<double>();
  EXPECT_EQ(d[0], 1.5);
}

TEST(Tensor, StackGatherScatter) {
  Tensor<int> a({2}, std::vector<int>{1, 2});
  Tensor<int> b({2}, std::vector<int>{3, 4});
  const auto s = stack<int>({&a, &b});
  EXPECT_EQ(s.shape(), (std::vector<int>{2, 2}));
  EXPECT_EQ(take_row(s, 1).storage(), b.storage());
  const auto g = gather_rows(s, {1, 1, 0});
  EXPECT_EQ(g.storage(), (std::vector<int>{3, 4, 3, 4, 1, 2}));
  Tensor<int> dst({3, 2});
  scatter_rows(dst, {2, 0}, s);
  EXPECT_EQ(dst.storage(), (std::vector<int>{3, 4, 0, 0, 1, 2}));
  Tensor<int> c({3});
  EXPECT_THROW(stack<int>({&a, &c}), ArgumentError);
}

TEST(Random, DeterministicStreams) {
  Rng a(5), b(5), c(6);
  for (int i = 0; i < 100; ++i) {
    const auto x = a.next_u64();
    EXPECT_EQ(x, b.next_u64());
    (void)c;
  }
  EXPECT_NE(Rng(5).next_u64(), Rng(6).next_u64());
  EXPECT_NE(derive_seed(1, 2), derive_seed(1, 3));
  EXPECT_EQ(derive_seed(1, 2), derive_seed(1, 2));
}

TEST(Random, NormalMoments) {
  Rng r(3);
  double m = 0.0, v = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double x = r.normal();
    m += x;
    v += x * x;
  }
  m /= n;
  v = v / n - m * m;
  EXPECT_NEAR(m, 0.0, 0.01);
  EXPECT_NEAR(v, 1.0, 0.01);
}

TEST(Random, UniformIntCoversRange) {
  Rng r(8);
  std::vector<int> hits(5);
  for (int i = 0; i < 5000; ++i) ++hits[r.uniform_int(3, 7) - 3];
  for (int h : hits) EXPECT_GT(h, 850);
}

TEST(Metrics, Anchors) {
  Tensor<double> x({4}, std::vector<double>{1, -1, 2, 0.5});
  EXPECT_EQ(metrics::nmse_db(x, x), metrics::kFloorDb);
  EXPECT_NEAR(metrics::nmse_db(Tensor<double>({4}), x), 0.0, 1e-12);
  EXPECT_THROW(metrics::nmse_ratio(x, Tensor<double>({4})), ArgumentError);
  EXPECT_THROW(metrics::nmse_ratio(x, Tensor<double>({3})), ArgumentError);
}

TEST(Metrics, TenPercentNoiseIsMinusTenDb) {
  Rng r(2);
  std::vector<double> ratios;
  for (int s = 0; s < 2000; ++s) {
    Tensor<double> x({64}), y({64});
    for (int i = 0; i < 64; ++i) {
      x[i] = r.normal();
      y[i] = x[i] + std::sqrt(0.1) * r.normal();
    }
    ratios.push_back(metrics::nmse_ratio(y, x));
  }
  EXPECT_NEAR(metrics::mean_db(ratios), -10.0, 0.15);
}

TEST(Metrics, MeanOfRatiosBeforeLog) {
  const std::vector<double> r{0.1, 0.001};
  EXPECT_NEAR(metrics::mean_db(r), 10.0 * std::log10(0.0505), 1e-12);
}

TEST(Metrics, BootstrapBracketsMean) {
  Rng r(1);
  std::vector<double> ratios(600);
  for (auto& v : ratios) v = 0.05 * (1.0 + r.uniform());
  const auto ci = metrics::bootstrap_db(ratios, 1000, 0.95, 7);
  EXPECT_LT(ci.low_db, ci.mean_db);
  EXPECT_GT(ci.high_db, ci.mean_db);
  EXPECT_LT(ci.high_db - ci.low_db, 0.5);
  const auto again = metrics::bootstrap_db(ratios, 1000, 0.95, 7);
  EXPECT_EQ(ci.low_db, again.low_db);
}
