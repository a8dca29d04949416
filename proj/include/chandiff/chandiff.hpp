#pragma once

#include "chandiff/autodiff.hpp"
#include "chandiff/baselines.hpp"
#include "chandiff/bench.hpp"
#include "chandiff/chansim.hpp"
#include "chandiff/checkpoint.hpp"
#include "chandiff/config.hpp"
#include "chandiff/context_encoder.hpp"
#include "chandiff/denoiser.hpp"
#include "chandiff/diffsched.hpp"
#include "chandiff/errors.hpp"
#include "chandiff/io.hpp"
#include "chandiff/metrics.hpp"
#include "chandiff/model.hpp"
#include "chandiff/nn.hpp"
#include "chandiff/random.hpp"
#include "chandiff/sampler.hpp"
#include "chandiff/tensor.hpp"
#include "chandiff/trainer.hpp"
