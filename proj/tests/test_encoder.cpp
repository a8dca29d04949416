#include <gtest/gtest.h>

#include <cmath>

#include "chandiff/context_encoder.hpp"
#include "chandiff/model.hpp"
#include "fixtures.hpp"
#include "grad_check.hpp"

using namespace chandiff;
using namespace chandiff::encoder;
using testutil::randn;

namespace {

EncoderConfig cfg() { return testutil::small_model_config().encoder; }

WindowBatch<double> random_window(const EncoderConfig& c, int n, Rng& rng, bool with_prev = true) {
  auto w = WindowBatch<double>::empty(c, n);
  for (auto& f : w.frames) f = randn(f.shape(), rng);
  std::fill(w.frame_valid.begin(), w.frame_valid.end(), true);
  w.prev = randn(w.prev.shape(), rng);
  std::fill(w.has_prev.begin(), w.has_prev.end(), with_prev);
  return w;
}

bool all_finite(const Tensor<double>& t) {
  for (double v : t.storage())
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace

TEST(SpatialCnn, SharedAndFinite) {
  Rng rng(1);
  ContextEncoder<double> enc(cfg(), rng);
  nn::Tape<double> tape(false);
  const auto one = randn({1, 2, 4, 8}, rng);
  Tensor<double> two({2, 2, 4, 8});
  std::copy(one.data(), one.data() + one.size(), two.data());
  std::copy(one.data(), one.data() + one.size(), two.data() + one.size());
  const auto z = enc.spatial_encode(tape, tape.constant(two)).value();
  ASSERT_EQ(z.shape(), (std::vector<int>{2, 6, cfg().feature_height(), cfg().feature_width()}));
  const std::size_t half = z.size() / 2;
  for (std::size_t i = 0; i < half; ++i) EXPECT_NEAR(z[i], z[half + i], 1e-13);
  EXPECT_TRUE(all_finite(z));
  EXPECT_THROW(enc.spatial_encode(tape, tape.constant(Tensor<double>({1, 2, 4, 7}))), ArgumentError);
  EXPECT_THROW(enc.spatial_encode(tape, tape.constant(Tensor<double>({1, 3, 4, 8}))), ArgumentError);
}

TEST(SpatialCnn, DefaultFeatureGrid) {
  EncoderConfig c;
  EXPECT_EQ(c.feature_height(), 4);
  EXPECT_EQ(c.feature_width(), 13);
}

TEST(ConvLstm, BoundedAndShapePreserving) {
  Rng rng(2);
  ContextEncoder<double> enc(cfg(), rng);
  nn::Tape<double> tape(false);
  auto st = enc.initial_state(tape, 2);
  const auto z = tape.constant(randn(st.h.shape(), rng, 3.0));
  const auto nx = enc.convlstm_step(tape, z, st);
  EXPECT_EQ(nx.h.shape(), st.h.shape());
  for (double v : nx.h.value().storage()) {
    EXPECT_GT(v, -1.0);
    EXPECT_LT(v, 1.0);
  }
  const auto zero = enc.convlstm_step(tape, tape.constant(Tensor<double>(st.h.shape())), st);
  for (double v : zero.h.value().storage()) EXPECT_LT(std::abs(v), 1.0);
  EXPECT_THROW(enc.convlstm_step(tape, tape.constant(Tensor<double>({2, 6, 1, 1})), st), ArgumentError);
}

TEST(ConvLstm, RepeatedInputContracts) {
  Rng rng(3);
  ContextEncoder<double> enc(cfg(), rng);
  nn::Tape<double> tape(false);
  auto st = enc.initial_state(tape, 1);
  const auto z = tape.constant(randn(st.h.shape(), rng));
  std::vector<double> delta;
  for (int i = 0; i < 40; ++i) {
    const auto nx = enc.convlstm_step(tape, z, st);
    delta.push_back(std::sqrt(squared_distance<double>(nx.c.value().values(), st.c.value().values())));
    st = nx;
  }
  int drops = 0;
  for (int i = 20; i < 40; ++i) drops += delta[i] < delta[i - 1];
  EXPECT_GE(drops, 18);
  EXPECT_LT(delta.back(), 0.1 * delta[0]);
}

TEST(Pooling, ConstantMap) {
  nn::Tape<double> tape(false);
  const auto v = ContextEncoder<double>::pool_hidden(tape.constant(Tensor<double>({2, 3, 4, 5}, 0.7)));
  EXPECT_EQ(v.shape(), (std::vector<int>{2, 3}));
  for (double x : v.value().storage()) EXPECT_NEAR(x, 0.7, 1e-15);
}

TEST(Encode, WeightsFormDistributionAndRespectMask) {
  Rng rng(4);
  ContextEncoder<double> enc(cfg(), rng);
  auto w = random_window(cfg(), 3, rng);
  const int l = cfg().history();
  w.frame_valid[0 * l + 0] = false;  // sample 0 misses its oldest frame
  w.has_prev[2] = false;
  nn::Tape<double> tape(false);
  std::vector<double> a;
  const auto c = enc.encode(tape, w, &a);
  EXPECT_EQ(c.shape(), (std::vector<int>{3, 8}));
  ASSERT_EQ(a.size(), 3u * (l + 1));
  for (int i = 0; i < 3; ++i) {
    double s = 0.0;
    for (int j = 0; j <= l; ++j) s += a[i * (l + 1) + j];
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
  EXPECT_EQ(a[0], 0.0);
}

TEST(Encode, FirstSlotUsesOnlyNullRow) {
  Rng rng(5);
  ContextEncoder<double> enc(cfg(), rng);
  auto w = WindowBatch<double>::empty(cfg(), 2);
  nn::Tape<double> tape(false);
  std::vector<double> a;
  const auto c = enc.encode(tape, w, &a);
  EXPECT_TRUE(all_finite(c.value()));
  const int l = cfg().history();
  EXPECT_EQ(a[l], 1.0);
  EXPECT_EQ(a[(l + 1) + l], 1.0);
}

TEST(Encode, BatchRowsAreIndependent) {
  Rng rng(6);
  ContextEncoder<double> enc(cfg(), rng);
  auto w = random_window(cfg(), 3, rng);
  w.frame_valid[1 * cfg().history()] = false;
  w.has_prev[0] = false;
  nn::Tape<double> tape(false);
  const auto all = enc.encode(tape, w).value();
  for (int i = 0; i < 3; ++i) {
    auto s = WindowBatch<double>::empty(cfg(), 1);
    for (int j = 0; j < cfg().history(); ++j) {
      s.frames[j] = take_row(w.frames[j], i).reshaped({1, 2, 4, 8});
      s.frame_valid[j] = w.frame_valid[i * cfg().history() + j];
    }
    s.prev = take_row(w.prev, i).reshaped({1, 2, 4, 8});
    s.has_prev[0] = w.has_prev[i];
    nn::Tape<double> t1(false);
    const auto one = enc.encode(t1, s).value();
    for (int q = 0; q < 8; ++q) EXPECT_NEAR(one[q], all[i * 8 + q], 1e-12) << i;
  }
}

TEST(Encode, SensitiveToPreviousEstimate) {
  Rng rng(7);
  ContextEncoder<double> enc(cfg(), rng);
  auto w = random_window(cfg(), 1, rng);
  nn::Tape<double> tape(false);
  const auto base = enc.encode(tape, w).value();
  w.prev[5] += 1e-3;
  const auto moved = enc.encode(tape, w).value();
  double diff = 0.0;
  for (std::size_t i = 0; i < base.size(); ++i) diff += std::abs(moved[i] - base[i]);
  EXPECT_GT(diff, 1e-9);
}

TEST(Encode, GradientsMatchFiniteDifferences) {
  Rng rng(8);
  ContextEncoder<double> enc(cfg(), rng);
  auto w = random_window(cfg(), 2, rng);
  w.frame_valid[0] = false;
  w.has_prev[1] = false;
  nn::ParamList<double> ps;
  enc.collect(ps);
  const auto target = randn({2, 8}, rng);
  auto loss = [&]() {
    nn::Tape<double> tape;
    auto l = nn::mse(enc.encode(tape, w), tape.constant(target));
    return std::make_pair(l.value()[0], 0);
  };
  nn::zero_grad(ps);
  {
    nn::Tape<double> tape;
    auto l = nn::mse(enc.encode(tape, w), tape.constant(target));
    tape.backward(l);
  }
  int checked = 0;
  for (auto* p : ps) {
    for (std::size_t i = 0; i < p->value.size(); i += std::max<std::size_t>(1, p->value.size() / 6)) {
      const double keep = p->value[i];
      const double h = 1e-6;
      p->value[i] = keep + h;
      const double fp = loss().first;
      p->value[i] = keep - h;
      const double fm = loss().first;
      p->value[i] = keep;
      const double fd = (fp - fm) / (2 * h);
      EXPECT_NEAR(p->grad[i], fd, 1e-6 * std::max(1.0, std::abs(fd))) << p->name << "[" << i << "]";
      ++checked;
    }
  }
  EXPECT_GT(checked, 40);
}

TEST(Encode, RejectsMalformedWindow) {
  Rng rng(9);
  ContextEncoder<double> enc(cfg(), rng);
  auto w = random_window(cfg(), 2, rng);
  w.frames[0] = Tensor<double>({2, 2, 4, 9});
  nn::Tape<double> tape(false);
  EXPECT_THROW(enc.encode(tape, w), ArgumentError);
  auto v = random_window(cfg(), 2, rng);
  v.frames.pop_back();
  EXPECT_THROW(enc.encode(tape, v), ArgumentError);
}
