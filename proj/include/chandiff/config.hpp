#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include "chandiff/chansim.hpp"
#include "chandiff/errors.hpp"
#include "chandiff/io.hpp"
#include "chandiff/model.hpp"
#include "chandiff/sampler.hpp"
#include "chandiff/trainer.hpp"

namespace chandiff::config {

using json = nlohmann::json;

/// Environment variable naming the default output root.
inline constexpr const char* kOutputEnv = "CHANDIFF_OUT";

/// Built-in defaults; every key here can be overridden by a config file or
/// a --set path=value flag.
inline json defaults() {
  return json::parse(R"({
    "simulator": {
      "n_tx": 4, "n_rx": 2, "tones": 52, "users": 8,
      "antenna_corr": 0.5, "tone_corr": 0.9,
      "model": "sum_of_sinusoids", "num_paths": 32,
      "num_slots": 64, "slot_duration": 0.001, "carrier_hz": 3.5e9,
      "num_sequences": 200,
      "v_start_mph": [2.0, 4.0], "v_end_mph": [30.0, 80.0], "t_accel_s": [1.0, 2.5]
    },
    "schedule": {"steps": 1000, "beta_min": 0.0001, "beta_max": 0.02, "kind": "linear"},
    "model": {
      "stem_channels": 16, "channels": 32, "context_dim": 64, "window": 5,
      "embed_dim": 64, "pe_dim": 64, "fuse_hidden": 128, "spatial_prev": true
    },
    "trainer": {
      "epochs": 30, "batch": 64, "lr": 0.001, "clip_norm": 1.0, "lambda": 0.01,
      "p_tf": 0.5, "tf_anneal": 0.5, "p_tf_floor": 0.5, "snr_min_db": -5.0, "snr_max_db": 25.0,
      "val_snr_db": [0.0, 10.0, 20.0], "val_sequences": 16
    },
    "sampler": {"ratio": 0.9, "mode": "deterministic", "snr": "known", "batch": 64},
    "eval": {
      "snr_grid_db": [-5, 0, 5, 10, 15, 20, 25],
      "test_sequences": 16, "min_snapshots": 500,
      "step_budgets": 60, "plateau_tol_db": 0.5,
      "bootstrap": 1000, "level": 0.95, "lmmse_loading": 1e-6
    },
    "fig2a": {
      "slow_mph": 3.0, "fast_mph": 60.0, "accel_start_mph": 3.0, "accel_end_mph": 60.0,
      "accel_t_s": 1.0, "num_slots": 1200, "max_lag": 40, "ensemble": 400
    },
    "seeds": {"data": 1, "train": 2, "test": 3, "eval": 4},
    "output_dir": ""
  })");
}

/// Reads a JSON config, resolving "include" (a path or list of paths,
/// relative to the including file) before applying the file's own keys.
inline json load_file(const std::filesystem::path& path, int depth = 0) {
  if (depth > 16) throw ConfigError("config include depth exceeded at '" + path.string() + "'");
  json j;
  try {
    j = json::parse(io::read_text(path));
  } catch (const IoError&) {
    throw ConfigError("cannot read config file '" + path.string() + "'");
  } catch (const json::exception& e) {
    throw ConfigError("malformed config '" + path.string() + "': " + e.what());
  }
  if (!j.is_object()) throw ConfigError("config '" + path.string() + "' must be a JSON object");
  json merged = json::object();
  if (j.contains("include")) {
    std::vector<std::string> inc;
    if (j["include"].is_string())
      inc.push_back(j["include"]);
    else if (j["include"].is_array())
      inc = j["include"].get<std::vector<std::string>>();
    else
      throw ConfigError("config 'include' must be a path or list of paths");
    for (const auto& p : inc) merged.merge_patch(load_file(path.parent_path() / p, depth + 1));
    j.erase("include");
  }
  merged.merge_patch(j);
  return merged;
}

/// Parses "a.b.c=value" and writes value (as JSON when it parses, else as a
/// string) at that path.
inline void apply_override(json& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' must look like key.path=value");
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::exception&) {
    value = raw;
  }
  std::string ptr = "/";
  for (char ch : key) ptr += ch == '.' ? '/' : ch;
  const json::json_pointer jp(ptr);
  if (!cfg.contains(jp)) throw ConfigError("unknown config key '" + key + "'");
  cfg[jp] = value;
}

template <class T>
T get(const json& j, const char* section, const char* key) {
  try {
    return j.at(section).at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config key ") + section + "." + key + ": " + e.what());
  }
}

inline chansim::SimulatorConfig simulator(const json& j) {
  chansim::SimulatorConfig s;
  const auto& c = j.at("simulator");
  s.shape = io::shape_from_json(c);
  s.num_slots = get<int>(j, "simulator", "num_slots");
  s.slot_duration = get<double>(j, "simulator", "slot_duration");
  s.carrier_hz = get<double>(j, "simulator", "carrier_hz");
  s.num_sequences = get<int>(j, "simulator", "num_sequences");
  const auto vs = get<std::vector<double>>(j, "simulator", "v_start_mph");
  const auto ve = get<std::vector<double>>(j, "simulator", "v_end_mph");
  const auto ta = get<std::vector<double>>(j, "simulator", "t_accel_s");
  if (vs.size() != 2 || ve.size() != 2 || ta.size() != 2) throw ConfigError("simulator ranges must be [lo, hi] pairs");
  s.ranges = {vs[0], vs[1], ve[0], ve[1], ta[0], ta[1]};
  s.shape.validate();
  if (s.num_slots < 2) throw ConfigError("simulator.num_slots must be >= 2");
  return s;
}

inline ModelConfig model(const json& j) {
  ModelConfig m;
  m.schedule.steps = get<int>(j, "schedule", "steps");
  m.schedule.beta_min = get<double>(j, "schedule", "beta_min");
  m.schedule.beta_max = get<double>(j, "schedule", "beta_max");
  m.schedule.kind = get<std::string>(j, "schedule", "kind");
  m.encoder.stem_channels = get<int>(j, "model", "stem_channels");
  m.encoder.channels = get<int>(j, "model", "channels");
  m.encoder.context_dim = get<int>(j, "model", "context_dim");
  m.encoder.window = get<int>(j, "model", "window");
  m.denoiser.channels = get<int>(j, "model", "channels");
  m.denoiser.embed_dim = get<int>(j, "model", "embed_dim");
  m.denoiser.pe_dim = get<int>(j, "model", "pe_dim");
  m.denoiser.fuse_hidden = get<int>(j, "model", "fuse_hidden");
  m.denoiser.spatial_prev = get<bool>(j, "model", "spatial_prev");
  const auto sim = simulator(j);
  m.sync(sim.shape.height(), sim.shape.width());
  m.encoder.validate();
  m.denoiser.validate();
  return m;
}

inline json model_to_json(const ModelConfig& m) {
  return {{"height", m.encoder.height},
          {"width", m.encoder.width},
          {"stem_channels", m.encoder.stem_channels},
          {"channels", m.encoder.channels},
          {"context_dim", m.encoder.context_dim},
          {"window", m.encoder.window},
          {"embed_dim", m.denoiser.embed_dim},
          {"pe_dim", m.denoiser.pe_dim},
          {"fuse_hidden", m.denoiser.fuse_hidden},
          {"spatial_prev", m.denoiser.spatial_prev},
          {"schedule",
           {{"steps", m.schedule.steps},
            {"beta_min", m.schedule.beta_min},
            {"beta_max", m.schedule.beta_max},
            {"kind", m.schedule.kind}}}};
}

inline ModelConfig model_from_json(const json& j) {
  ModelConfig m;
  try {
    m.encoder.stem_channels = j.at("stem_channels");
    m.encoder.channels = m.denoiser.channels = j.at("channels");
    m.encoder.context_dim = j.at("context_dim");
    m.encoder.window = j.at("window");
    m.denoiser.embed_dim = j.at("embed_dim");
    m.denoiser.pe_dim = j.at("pe_dim");
    m.denoiser.fuse_hidden = j.at("fuse_hidden");
    m.denoiser.spatial_prev = j.at("spatial_prev");
    m.schedule.steps = j.at("schedule").at("steps");
    m.schedule.beta_min = j.at("schedule").at("beta_min");
    m.schedule.beta_max = j.at("schedule").at("beta_max");
    m.schedule.kind = j.at("schedule").at("kind");
    m.sync(j.at("height"), j.at("width"));
  } catch (const json::exception& e) {
    throw IoError(std::string("checkpoint architecture record is incomplete: ") + e.what());
  }
  return m;
}

inline trainer::TrainingConfig training(const json& j) {
  trainer::TrainingConfig t;
  t.epochs = get<int>(j, "trainer", "epochs");
  t.batch = get<int>(j, "trainer", "batch");
  t.lr = get<double>(j, "trainer", "lr");
  t.clip_norm = get<double>(j, "trainer", "clip_norm");
  t.lambda = get<double>(j, "trainer", "lambda");
  t.p_tf = get<double>(j, "trainer", "p_tf");
  t.tf_anneal = get<double>(j, "trainer", "tf_anneal");
  t.p_tf_floor = get<double>(j, "trainer", "p_tf_floor");
  t.snr_min_db = get<double>(j, "trainer", "snr_min_db");
  t.snr_max_db = get<double>(j, "trainer", "snr_max_db");
  t.val_snr_db = get<std::vector<double>>(j, "trainer", "val_snr_db");
  t.seed = get<std::uint64_t>(j, "seeds", "train");
  t.validate();
  return t;
}

inline sampler::SamplerConfig sampling(const json& j) {
  sampler::SamplerConfig s;
  s.ratio = get<double>(j, "sampler", "ratio");
  s.mode = sampler::step_mode_from_string(get<std::string>(j, "sampler", "mode"));
  const auto snr = get<std::string>(j, "sampler", "snr");
  if (snr != "known" && snr != "auto") throw ConfigError("sampler.snr must be 'known' or 'auto'");
  s.estimate_snr = snr == "auto";
  s.batch = get<int>(j, "sampler", "batch");
  s.seed = get<std::uint64_t>(j, "seeds", "eval");
  if (!(s.ratio > 0.0 && s.ratio < 1.0)) throw ConfigError("sampler.ratio must lie in (0, 1)");
  return s;
}

/// Output root: explicit config value, else $CHANDIFF_OUT, else ./chandiff_out.
inline std::filesystem::path output_root(const json& j) {
  const auto v = j.value("output_dir", std::string());
  if (!v.empty()) return v;
  if (const char* env = std::getenv(kOutputEnv); env != nullptr && *env != '\0') return env;
  return "chandiff_out";
}

}  // namespace chandiff::config
