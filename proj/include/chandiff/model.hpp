#pragma once

#include <cstdint>
#include <string>

#include "chandiff/context_encoder.hpp"
#include "chandiff/denoiser.hpp"
#include "chandiff/diffsched.hpp"
#include "chandiff/nn.hpp"
#include "chandiff/random.hpp"

namespace chandiff {

struct ScheduleConfig {
  int steps = 1000;
  double beta_min = 1e-4;
  double beta_max = 0.02;
  std::string kind = "linear";

  diffsched::NoiseSchedule build() const { return diffsched::build_schedule(steps, beta_min, beta_max, kind); }
};

struct ModelConfig {
  encoder::EncoderConfig encoder;
  denoiser::DenoiserConfig denoiser;
  ScheduleConfig schedule;

  /// Propagates the shared snapshot geometry and context width.
  void sync(int height, int width) {
    encoder.height = denoiser.height = height;
    encoder.width = denoiser.width = width;
    denoiser.context_dim = encoder.context_dim;
  }
};

/// Context encoder, denoiser and noise schedule bundled as one trainable unit.
template <class S>
class Model {
 public:
  Model() = default;

  Model(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)), sched_(cfg_.schedule.build()) {
    detail::require<ConfigError>(cfg_.encoder.context_dim == cfg_.denoiser.context_dim &&
                                     cfg_.encoder.height == cfg_.denoiser.height &&
                                     cfg_.encoder.width == cfg_.denoiser.width,
                                 "Model: encoder and denoiser configs disagree");
    Rng rng(derive_seed(seed, 0x1417));
    enc_ = encoder::ContextEncoder<S>(cfg_.encoder, rng);
    den_ = denoiser::ConditionalDenoiser<S>(cfg_.denoiser, rng);
  }

  const ModelConfig& config() const noexcept { return cfg_; }
  const diffsched::NoiseSchedule& schedule() const noexcept { return sched_; }
  void set_schedule(diffsched::NoiseSchedule s) { sched_ = std::move(s); }
  encoder::ContextEncoder<S>& encoder() noexcept { return enc_; }
  denoiser::ConditionalDenoiser<S>& denoiser() noexcept { return den_; }

  /// Fixed-order parameter list; the order defines the checkpoint layout.
  nn::ParamList<S> parameters() {
    nn::ParamList<S> out;
    enc_.collect(out);
    den_.collect(out);
    return out;
  }

  std::size_t parameter_count() { return nn::count_parameters(parameters()); }

  template <class U>
  Model<U> cast() {
    Model<U> m(cfg_, 0);
    m.set_schedule(sched_);
    auto src = parameters();
    auto dst = m.parameters();
    for (std::size_t i = 0; i < src.size(); ++i) {
      dst[i]->value = src[i]->value.template cast<U>();
      dst[i]->zero_grad();
    }
    return m;
  }

 private:
  ModelConfig cfg_;
  diffsched::NoiseSchedule sched_;
  encoder::ContextEncoder<S> enc_;
  denoiser::ConditionalDenoiser<S> den_;
};

}  // namespace chandiff
