#pragma once

#include <gtest/gtest.h>

#include <functional>
#include <vector>

#include "chandiff/autodiff.hpp"
#include "chandiff/random.hpp"

namespace testutil {

using chandiff::Rng;
using chandiff::Tensor;
using chandiff::nn::Tape;
using chandiff::nn::Var;

inline Tensor<double> randn(std::vector<int> shape, Rng& rng, double scale = 1.0) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.storage()) v = scale * rng.normal();
  return t;
}

using Graph = std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)>;

/// Reduces the graph output to a scalar with a fixed random projection so
/// every output coordinate contributes.
inline double eval_scalar(const Graph& g, const std::vector<Tensor<double>>& xs, const Tensor<double>& proj,
                          std::vector<Tensor<double>>* grads) {
  Tape<double> tape;
  std::vector<Var<double>> in;
  for (const auto& x : xs) in.push_back(tape.variable(x));
  auto y = g(tape, in);
  const auto w = tape.constant(proj.reshaped(y.shape()));
  const auto z = chandiff::nn::mul(y, w);
  double s = 0.0;
  for (double v : z.value().storage()) s += v;
  if (grads != nullptr) {
    // Sum reduction node: d(sum z)/dz = 1.
    const auto root = tape.push(Tensor<double>({1}, s), {z}, [z](const Tensor<double>& g0) {
      auto& gz = z.grad();
      for (auto& v : gz.storage()) v += g0[0];
    });
    tape.backward(root);
    grads->clear();
    for (const auto& v : in) grads->push_back(v.grad());
  }
  return s;
}

/// Central-difference check of every input coordinate (or `max_coords` per
/// input, evenly spaced).
inline void check_gradients(const Graph& g, std::vector<Tensor<double>> xs, Rng& rng, double tol = 1e-6,
                            int max_coords = 64, double h = 1e-6) {
  Tensor<double> probe;
  {
    Tape<double> tape;
    std::vector<Var<double>> in;
    for (const auto& x : xs) in.push_back(tape.variable(x));
    probe = randn(g(tape, in).shape(), rng);
  }
  std::vector<Tensor<double>> grads;
  eval_scalar(g, xs, probe, &grads);
  for (std::size_t a = 0; a < xs.size(); ++a) {
    const std::size_t n = xs[a].size();
    const std::size_t stride = std::max<std::size_t>(1, n / static_cast<std::size_t>(max_coords));
    for (std::size_t i = 0; i < n; i += stride) {
      const double keep = xs[a][i];
      xs[a][i] = keep + h;
      const double fp = eval_scalar(g, xs, probe, nullptr);
      xs[a][i] = keep - h;
      const double fm = eval_scalar(g, xs, probe, nullptr);
      xs[a][i] = keep;
      const double fd = (fp - fm) / (2.0 * h);
      const double an = grads[a].size() == n ? grads[a][i] : 0.0;
      EXPECT_NEAR(an, fd, tol * std::max(1.0, std::abs(fd))) << "input " << a << " coord " << i;
    }
  }
}

}  // namespace testutil
