#pragma once

#include "chandiff/chansim.hpp"
#include "chandiff/model.hpp"

namespace testutil {

/// Reduced geometry so network tests run in milliseconds.
inline chandiff::ModelConfig small_model_config(int h = 4, int w = 8) {
  chandiff::ModelConfig c;
  c.encoder.stem_channels = 4;
  c.encoder.channels = 6;
  c.encoder.context_dim = 8;
  c.encoder.window = 3;
  c.denoiser.channels = 6;
  c.denoiser.embed_dim = 8;
  c.denoiser.pe_dim = 8;
  c.denoiser.fuse_hidden = 10;
  c.sync(h, w);
  return c;
}

inline chandiff::chansim::ShapeConfig small_shape() {
  chandiff::chansim::ShapeConfig s;
  s.n_tx = 2;
  s.n_rx = 2;
  s.tones = 8;
  s.users = 2;
  return s;
}

}  // namespace testutil
