#include <gtest/gtest.h>

#include <cmath>

#include "chandiff/autodiff.hpp"
#include "chandiff/nn.hpp"
#include "grad_check.hpp"

using namespace chandiff;
using namespace chandiff::nn;
using testutil::check_gradients;
using testutil::randn;
using V = Var<double>;
using Vs = std::vector<V>;

TEST(Ops, ElementwiseGradients) {
  Rng rng(1);
  const auto a = randn({3, 4}, rng);
  const auto b = randn({3, 4}, rng);
  check_gradients([](Tape<double>&, const Vs& x) { return add(x[0], x[1]); }, {a, b}, rng);
  check_gradients([](Tape<double>&, const Vs& x) { return sub(x[0], x[1]); }, {a, b}, rng);
  check_gradients([](Tape<double>&, const Vs& x) { return mul(x[0], x[1]); }, {a, b}, rng);
  check_gradients([](Tape<double>&, const Vs& x) { return scale(x[0], 2.5); }, {a}, rng);
  check_gradients([](Tape<double>&, const Vs& x) { return sigmoid(x[0]); }, {a}, rng);
  check_gradients([](Tape<double>&, const Vs& x) { return nn::tanh(x[0]); }, {a}, rng);
  check_gradients([](Tape<double>&, const Vs& x) { return silu(x[0]); }, {a}, rng);
}

TEST(Ops, LinearGradients) {
  Rng rng(2);
  check_gradients([](Tape<double>&, const Vs& x) { return linear(x[0], x[1], x[2]); },
                  {randn({5, 3}, rng), randn({4, 3}, rng), randn({4}, rng)}, rng);
}

TEST(Ops, ConvGradients) {
  Rng rng(3);
  for (const auto geo : {same3x3(), strided3x3(1, 2), strided3x3(2, 2), pointwise()}) {
    check_gradients([geo](Tape<double>&, const Vs& x) { return conv2d(x[0], x[1], x[2], geo); },
                    {randn({2, 3, 5, 7}, rng), randn({4, 3, geo.kh, geo.kw}, rng), randn({4}, rng)}, rng, 1e-6, 80);
  }
}

TEST(Ops, ConvMatchesDirectSum) {
  Rng rng(4);
  const auto x = randn({1, 2, 4, 5}, rng);
  const auto w = randn({3, 2, 3, 3}, rng);
  const auto b = randn({3}, rng);
  const auto geo = strided3x3(2, 2);
  Tape<double> tape(false);
  const auto y = conv2d(tape.constant(x), tape.constant(w), tape.constant(b), geo).value();
  const int ho = geo.out_h(4), wo = geo.out_w(5);
  ASSERT_EQ(y.shape(), (std::vector<int>{1, 3, ho, wo}));
  for (int o = 0; o < 3; ++o)
    for (int i = 0; i < ho; ++i)
      for (int j = 0; j < wo; ++j) {
        double s = b[o];
        for (int c = 0; c < 2; ++c)
          for (int u = 0; u < 3; ++u)
            for (int v = 0; v < 3; ++v) {
              const int yy = i * 2 - 1 + u, xx = j * 2 - 1 + v;
              if (yy < 0 || yy >= 4 || xx < 0 || xx >= 5) continue;
              s += w[((o * 2 + c) * 3 + u) * 3 + v] * x[(c * 4 + yy) * 5 + xx];
            }
        EXPECT_NEAR(y[(o * ho + i) * wo + j], s, 1e-12);
      }
}

TEST(Ops, ShapeOpsGradients) {
  Rng rng(5);
  const auto a = randn({2, 3, 2, 2}, rng);
  const auto b = randn({2, 1, 2, 2}, rng);
  check_gradients([](Tape<double>&, const Vs& x) { return concat_channels<double>({x[0], x[1]}); }, {a, b}, rng);
  check_gradients([](Tape<double>&, const Vs& x) { return slice_channels(x[0], 1, 2); }, {a}, rng);
  check_gradients([](Tape<double>&, const Vs& x) { return slice_batch(x[0], 1, 1); }, {a}, rng);
  check_gradients([](Tape<double>&, const Vs& x) { return mean_spatial(x[0]); }, {a}, rng);
  const auto c = randn({3, 4}, rng);
  const auto d = randn({3, 2}, rng);
  check_gradients([](Tape<double>&, const Vs& x) { return concat_cols<double>({x[0], x[1]}); }, {c, d}, rng);
  check_gradients([](Tape<double>&, const Vs& x) { return slice_cols(x[0], 1, 2); }, {c}, rng);
}

TEST(Ops, FilmGradientsAndIdentities) {
  Rng rng(6);
  const auto v = randn({2, 3, 2, 4}, rng);
  const auto g = randn({2, 3}, rng);
  const auto b = randn({2, 3}, rng);
  check_gradients([](Tape<double>&, const Vs& x) { return film(x[0], x[1], x[2]); }, {v, g, b}, rng);

  Tape<float> tape(false);
  Tensor<float> vf({1, 2, 2, 2});
  for (std::size_t i = 0; i < vf.size(); ++i) vf[i] = 0.1f * static_cast<float>(i) - 0.3f;
  const auto vv = tape.constant(vf);
  auto zeros = tape.constant(Tensor<float>({1, 2}));
  auto ones = tape.constant(Tensor<float>({1, 2}, 1.0f));
  auto minus = tape.constant(Tensor<float>({1, 2}, -1.0f));
  auto beta = tape.constant(Tensor<float>({1, 2}, std::vector<float>{0.7f, -0.2f}));
  EXPECT_EQ(film(vv, zeros, zeros).value().storage(), vf.storage());  // bitwise identity
  const auto dbl = film(vv, ones, zeros).value();
  for (std::size_t i = 0; i < vf.size(); ++i) EXPECT_EQ(dbl[i], 2.0f * vf[i]);
  const auto bb = film(vv, minus, beta).value();
  for (std::size_t i = 0; i < vf.size(); ++i) EXPECT_EQ(bb[i], i < 4 ? 0.7f : -0.2f);
  EXPECT_THROW(film(vv, tape.constant(Tensor<float>({1, 3})), zeros), ArgumentError);
}

TEST(Ops, RowSelectionGradients) {
  Rng rng(7);
  const auto a = randn({3, 4}, rng);
  const auto b = randn({3, 4}, rng);
  const auto b1 = randn({1, 4}, rng);
  const std::vector<bool> mask{true, false, true};
  check_gradients([&](Tape<double>&, const Vs& x) { return select_rows(mask, x[0], x[1]); }, {a, b}, rng);
  check_gradients([&](Tape<double>&, const Vs& x) { return select_rows(mask, x[0], x[1]); }, {a, b1}, rng);
  const std::vector<double> m{1.0, 0.0, 0.25};
  check_gradients([&](Tape<double>&, const Vs& x) { return blend_rows(m, x[0], x[1]); }, {a, b}, rng);
  const std::vector<double> ca{0.5, 2.0, -1.0}, cb{1.5, 0.1, 3.0};
  check_gradients([&](Tape<double>&, const Vs& x) { return combine_rows(ca, x[0], cb, x[1]); }, {a, b}, rng);
}

TEST(Ops, AttentionGradientsAndLimits) {
  Rng rng(8);
  const auto q = randn({2, 4}, rng);
  const auto r0 = randn({2, 4}, rng), r1 = randn({2, 4}, rng), r2 = randn({2, 4}, rng);
  const std::vector<bool> mask{true, true, true, false, true, true};
  check_gradients([&](Tape<double>&, const Vs& x) { return cross_attention(x[0], Vs{x[1], x[2], x[3]}, mask); },
                  {q, r0, r1, r2}, rng);

  Tape<double> tape(false);
  std::vector<double> w;
  const auto one = cross_attention(tape.constant(q), {tape.constant(r0)}, {true, true}, &w);
  EXPECT_EQ(w, (std::vector<double>{1.0, 1.0}));
  EXPECT_EQ(one.value().storage(), r0.storage());
  // Identical rows: output is that row whatever the query.
  const auto same = cross_attention(tape.constant(randn({2, 4}, rng)), {tape.constant(r1), tape.constant(r1)},
                                    {true, true, true, true});
  for (std::size_t i = 0; i < r1.size(); ++i) EXPECT_NEAR(same.value()[i], r1[i], 1e-12);
  EXPECT_THROW(cross_attention(tape.constant(q), {}, {}), ArgumentError);
}

TEST(Ops, LossGradients) {
  Rng rng(9);
  const auto a = randn({3, 2, 2}, rng);
  const auto b = randn({3, 2, 2}, rng);
  check_gradients([](Tape<double>&, const Vs& x) { return mse(x[0], x[1]); }, {a, b}, rng);
  const std::vector<bool> mask{false, true, true};
  check_gradients([&](Tape<double>&, const Vs& x) { return masked_mse(x[0], x[1], mask); }, {a, b}, rng);
  Tape<double> tape;
  EXPECT_DOUBLE_EQ(mse(tape.constant(a), tape.constant(a)).value()[0], 0.0);
  EXPECT_THROW(mse(tape.constant(a), tape.constant(randn({2, 2}, rng))), ArgumentError);
}

TEST(Tape, DetachStopsGradient) {
  Tape<double> tape;
  auto x = tape.variable(Tensor<double>({1}, 3.0));
  auto y = mul(x, detach(x));
  tape.backward(y);
  EXPECT_DOUBLE_EQ(x.grad()[0], 3.0);
}

TEST(Tape, NonRecordingRejectsBackward) {
  Tape<double> tape(false);
  auto x = tape.variable(Tensor<double>({1}, 1.0));
  EXPECT_THROW(tape.backward(x), NumericError);
}

TEST(Layers, InitBoundsAndCount) {
  Rng rng(1);
  Linear<float> l("l", 10, 3, rng);
  ParamList<float> ps;
  l.collect(ps);
  EXPECT_EQ(count_parameters(ps), 33u);
  const double bound = 1.0 / std::sqrt(10.0);
  for (float v : l.weight().value.storage()) EXPECT_LE(std::abs(v), bound);
  Conv2d<float> c("c", 2, 4, same3x3(), rng);
  ParamList<float> pc;
  c.collect(pc);
  EXPECT_EQ(count_parameters(pc), 2u * 4 * 9 + 4);
}

TEST(Layers, ClipGradNorm) {
  Parameter<double> p("p", Tensor<double>({2}));
  p.grad[0] = 3.0;
  p.grad[1] = 4.0;
  ParamList<double> ps{&p};
  EXPECT_DOUBLE_EQ(clip_grad_norm(ps, 1.0), 5.0);
  EXPECT_NEAR(p.grad[0], 0.6, 1e-12);
  EXPECT_NEAR(p.grad[1], 0.8, 1e-12);
  p.grad[0] = std::nan("");
  EXPECT_THROW(clip_grad_norm(ps, 1.0), NumericError);
}

TEST(Layers, AdamMinimisesQuadratic) {
  Parameter<double> p("p", Tensor<double>({3}, std::vector<double>{1.0, -2.0, 3.0}));
  ParamList<double> ps{&p};
  Adam<double> opt(ps, AdamConfig{0.05});
  for (int i = 0; i < 2000; ++i) {
    for (std::size_t j = 0; j < 3; ++j) p.grad[j] = 2.0 * p.value[j];
    opt.step();
  }
  for (double v : p.value.storage()) EXPECT_NEAR(v, 0.0, 1e-2);
  EXPECT_EQ(opt.steps_taken(), 2000);
}

TEST(Layers, SinusoidalEmbedding) {
  const std::vector<int> pos{0, 5};
  const auto e = sinusoidal_embedding<double>(pos, 8);
  EXPECT_EQ(e[0], 0.0);
  EXPECT_EQ(e[1], 1.0);
  EXPECT_NEAR(e[8], std::sin(5.0), 1e-15);
  EXPECT_NEAR(e[8 + 3], std::cos(5.0 * std::pow(10000.0, -2.0 / 8)), 1e-15);
  EXPECT_THROW(sinusoidal_embedding<double>(pos, 7), ArgumentError);
}
