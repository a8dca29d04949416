#pragma once

#include <filesystem>
#include <string>

#include "chandiff/config.hpp"
#include "chandiff/diffsched.hpp"
#include "chandiff/io.hpp"
#include "chandiff/model.hpp"

namespace chandiff::checkpoint {

inline constexpr int kSchemaVersion = 1;

/// Parameters, architecture, the exact beta array and the training record.
inline io::Container to_container(Model<float>& model, const io::json& training = io::json::object()) {
  io::Container c;
  c.kind = "checkpoint";
  c.meta["schema_version"] = kSchemaVersion;
  c.meta["architecture"] = config::model_to_json(model.config());
  c.meta["training"] = training;
  c.meta["training_fingerprint"] = io::fingerprint(training);
  io::json names = io::json::array();
  for (auto* p : model.parameters()) {
    c.add(p->name, p->value);
    names.push_back(p->name);
  }
  c.meta["parameters"] = names;
  const auto& b = model.schedule().betas();
  c.add_f64("schedule.betas", {static_cast<int>(b.size())}, b);
  return c;
}

inline void save(const std::filesystem::path& path, Model<float>& model, const io::json& training = io::json::object()) {
  io::write_container(path, to_container(model, training));
}

inline Model<float> from_container(const io::Container& c) {
  if (c.kind != "checkpoint") throw IoError("expected a checkpoint container, found kind '" + c.kind + "'");
  const int schema = c.meta.value("schema_version", -1);
  if (schema != kSchemaVersion)
    throw IoError("checkpoint schema version " + std::to_string(schema) + " is not supported (expected " +
                  std::to_string(kSchemaVersion) + ")");
  Model<float> m(config::model_from_json(c.meta.at("architecture")), 0);
  const auto& b = c.get("schedule.betas");
  m.set_schedule(diffsched::NoiseSchedule(b.f64));
  for (auto* p : m.parameters()) {
    const auto& a = c.get(p->name);
    if (a.shape != p->value.shape())
      throw IoError("checkpoint parameter '" + p->name + "' has shape mismatching the architecture");
    p->value = a.tensor<float>();
    p->zero_grad();
  }
  return m;
}

inline Model<float> load(const std::filesystem::path& path) { return from_container(io::read_container(path)); }

}  // namespace chandiff::checkpoint
