#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "chandiff/denoiser.hpp"
#include "chandiff/diffsched.hpp"
#include "chandiff/model.hpp"
#include "fixtures.hpp"
#include "grad_check.hpp"

using namespace chandiff;
using namespace chandiff::denoiser;
using testutil::randn;

namespace {

DenoiserConfig cfg() { return testutil::small_model_config().denoiser; }

}  // namespace

TEST(Fuse, DeterministicAndStepSensitive) {
  Rng rng(1);
  ConditionalDenoiser<double> den(cfg(), rng);
  nn::Tape<double> tape(false);
  const auto c = tape.constant(randn({1, 8}, rng));
  const std::vector<int> k{3};
  const std::vector<int> t1{10}, t2{11}, t0{0}, tone{1};
  const auto a = den.fuse_conditioning(tape, t1, k, c);
  const auto b = den.fuse_conditioning(tape, t1, k, c);
  EXPECT_EQ(a.gamma.value().storage(), b.gamma.value().storage());
  EXPECT_EQ(a.beta.value().storage(), b.beta.value().storage());
  EXPECT_EQ(a.gamma.shape(), (std::vector<int>{1, 6}));
  const auto d = den.fuse_conditioning(tape, t2, k, c);
  EXPECT_NE(a.gamma.value().storage(), d.gamma.value().storage());
  // Step 0 is embedded as step 1.
  EXPECT_EQ(den.fuse_conditioning(tape, t0, k, c).gamma.value().storage(),
            den.fuse_conditioning(tape, tone, k, c).gamma.value().storage());
  EXPECT_THROW(den.fuse_conditioning(tape, t1, k, tape.constant(Tensor<double>({1, 7}))), ArgumentError);
}

TEST(Film, IdentityAndDoubling) {
  nn::Tape<double> tape(false);
  Rng rng(2);
  const auto v = tape.constant(randn({1, 3, 2, 2}, rng));
  FiLMParams<double> id{tape.constant(Tensor<double>({1, 3})), tape.constant(Tensor<double>({1, 3}))};
  EXPECT_EQ(film_modulate(v, id).value().storage(), v.value().storage());
  FiLMParams<double> two{tape.constant(Tensor<double>({1, 3}, 1.0)), tape.constant(Tensor<double>({1, 3}))};
  const auto y = film_modulate(v, two).value();
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_EQ(y[i], 2.0 * v.value()[i]);
}

TEST(PredictNoise, ShapesAndErrors) {
  Rng rng(3);
  ConditionalDenoiser<double> den(cfg(), rng);
  nn::Tape<double> tape(false);
  const std::vector<int> t{5, 700}, k{0, 9};
  const auto c = tape.constant(randn({2, 8}, rng));
  const auto x = tape.constant(randn({2, 2, 4, 8}, rng));
  const auto prev = tape.constant(randn({2, 2, 4, 8}, rng));
  const auto e = den.predict_noise(tape, x, t, k, c, prev);
  EXPECT_EQ(e.shape(), x.shape());
  auto bad = randn({2, 2, 4, 8}, rng);
  bad[3] = std::nan("");
  EXPECT_THROW(den.predict_noise(tape, tape.constant(bad), t, k, c, prev), ArgumentError);
  EXPECT_THROW(den.predict_noise(tape, tape.constant(Tensor<double>({2, 2, 4, 7})), t, k, c, prev), ArgumentError);
  EXPECT_THROW(den.predict_noise(tape, x, t, k, c, tape.constant(Tensor<double>({2, 2, 4, 7}))), ArgumentError);
}

TEST(PredictNoise, SpatialPreviousEstimateMatters) {
  Rng rng(4);
  ConditionalDenoiser<double> den(cfg(), rng);
  nn::Tape<double> tape(false);
  const std::vector<int> t{50}, k{2};
  const auto c = tape.constant(randn({1, 8}, rng));
  const auto x = tape.constant(randn({1, 2, 4, 8}, rng));
  const auto p0 = tape.constant(Tensor<double>({1, 2, 4, 8}));
  const auto p1 = tape.constant(randn({1, 2, 4, 8}, rng));
  EXPECT_NE(den.predict_noise(tape, x, t, k, c, p0).value().storage(),
            den.predict_noise(tape, x, t, k, c, p1).value().storage());
  auto off = cfg();
  off.spatial_prev = false;
  Rng r2(4);
  ConditionalDenoiser<double> plain(off, r2);
  EXPECT_EQ(plain.predict_noise(tape, x, t, k, c, p0).value().storage(),
            plain.predict_noise(tape, x, t, k, c, p1).value().storage());
}

TEST(PredictNoise, GradientsMatchFiniteDifferences) {
  Rng rng(5);
  ConditionalDenoiser<double> den(cfg(), rng);
  nn::ParamList<double> ps;
  den.collect(ps);
  const std::vector<int> t{3, 400}, k{1, 7};
  const auto c = randn({2, 8}, rng);
  const auto x = randn({2, 2, 4, 8}, rng);
  const auto prev = randn({2, 2, 4, 8}, rng);
  const auto target = randn({2, 2, 4, 8}, rng);
  auto run = [&](bool back) {
    nn::Tape<double> tape;
    auto l = nn::mse(den.predict_noise(tape, tape.constant(x), t, k, tape.constant(c), tape.constant(prev)),
                     tape.constant(target));
    if (back) tape.backward(l);
    return l.value()[0];
  };
  nn::zero_grad(ps);
  run(true);
  int checked = 0;
  for (auto* p : ps)
    for (std::size_t i = 0; i < p->value.size(); i += std::max<std::size_t>(1, p->value.size() / 4)) {
      const double keep = p->value[i];
      p->value[i] = keep + 1e-6;
      const double fp = run(false);
      p->value[i] = keep - 1e-6;
      const double fm = run(false);
      p->value[i] = keep;
      const double fd = (fp - fm) / 2e-6;
      EXPECT_NEAR(p->grad[i], fd, 1e-6 * std::max(1.0, std::abs(fd))) << p->name;
      ++checked;
    }
  EXPECT_GT(checked, 40);
}

TEST(PredictClean, InvertsForwardSample) {
  const auto s = diffsched::build_schedule(1000, 1e-4, 0.02);
  Rng rng(6);
  double worst = 0.0;
  for (int c = 0; c < 1000; ++c) {
    const int t = rng.uniform_int(1, 1000);
    const auto x0 = randn({16}, rng);
    const auto eps = randn({16}, rng);
    const auto xt = diffsched::forward_sample(x0, t, eps, s);
    const auto back = predict_clean(xt, t, eps, s);
    worst = std::max(worst, std::sqrt(squared_distance<double>(back.values(), x0.values()) /
                                      squared_norm<double>(x0.values())));
  }
  EXPECT_LT(worst, 1e-6);
}

TEST(PredictClean, SmallStepAndErrors) {
  const auto s = diffsched::build_schedule(1000, 1e-4, 0.02);
  Rng rng(7);
  const auto xt = randn({8}, rng);
  const auto x0 = predict_clean(xt, 1, Tensor<double>({8}), s);
  for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(x0[i], xt[i], 1e-4 * std::abs(xt[i]) + 1e-12);
  EXPECT_THROW(predict_clean(xt, 0, Tensor<double>({8}), s), NumericError);
  EXPECT_THROW(predict_clean(xt, 3, Tensor<double>({7}), s), ArgumentError);
}

TEST(PredictClean, BatchedMatchesScalar) {
  const auto s = diffsched::build_schedule(1000, 1e-4, 0.02);
  Rng rng(8);
  const auto x = randn({2, 5}, rng);
  const auto e = randn({2, 5}, rng);
  const std::vector<int> t{17, 640};
  nn::Tape<double> tape(false);
  const auto b = predict_clean(tape.constant(x), t, tape.constant(e), s).value();
  for (int i = 0; i < 2; ++i) {
    const auto r = predict_clean(take_row(x, i), t[i], take_row(e, i), s);
    for (int q = 0; q < 5; ++q) EXPECT_NEAR(b[i * 5 + q], r[q], 1e-12);
  }
}

TEST(Score, ZeroNoiseAndDomain) {
  const auto s = diffsched::build_schedule(1000, 1e-4, 0.02);
  const auto z = score(Tensor<double>({4}), 10, s);
  for (double v : z.storage()) EXPECT_EQ(v, 0.0);
  Tensor<double> e({1}, 0.5);
  EXPECT_NEAR(score(e, 10, s)[0], -0.5 / s.sigma(10), 1e-15);
  EXPECT_THROW(score(e, 0, s), NumericError);
}

TEST(Model, DefaultCapacity) {
  ModelConfig c;
  c.sync(8, 52);
  Model<float> m(c, 1);
  EXPECT_EQ(m.parameter_count(), 174546u);
  EXPECT_LE(m.parameter_count(), 300000u);
  // Unique, stable names define the checkpoint layout.
  std::set<std::string> names;
  for (auto* p : m.parameters()) names.insert(p->name);
  EXPECT_EQ(names.size(), m.parameters().size());
}

TEST(Model, SeedDeterminesInitAndCastPreservesValues) {
  auto c = testutil::small_model_config();
  Model<float> a(c, 3), b(c, 3), d(c, 4);
  EXPECT_EQ(a.parameters()[0]->value.storage(), b.parameters()[0]->value.storage());
  EXPECT_NE(a.parameters()[0]->value.storage(), d.parameters()[0]->value.storage());
  auto x = a.cast<double>();
  auto pa = a.parameters();
  auto px = x.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i)
    for (std::size_t j = 0; j < pa[i]->value.size(); ++j) EXPECT_EQ(static_cast<double>(pa[i]->value[j]), px[i]->value[j]);
}
