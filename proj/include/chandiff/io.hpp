#pragma once

// Versioned array container:
//   "CHDF" | u32 version | u64 header length | JSON header | payload
// The payload holds the arrays back to back, row-major, little-endian, each
// as f32 or f64. The header lists name, dtype, shape, byte offset and size
// of every array plus free-form metadata. A copy of the header is written
// next to the file as <file>.json.

#include <nlohmann/json.hpp>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "chandiff/chansim.hpp"
#include "chandiff/errors.hpp"
#include "chandiff/tensor.hpp"

namespace chandiff::io {

static_assert(std::endian::native == std::endian::little, "container I/O assumes a little-endian host");

inline constexpr char kMagic[4] = {'C', 'H', 'D', 'F'};
inline constexpr std::uint32_t kVersion = 1;

using json = nlohmann::json;

struct Array {
  std::string name;
  std::string dtype;  // "f32" or "f64"
  std::vector<int> shape;
  std::vector<float> f32;
  std::vector<double> f64;

  std::size_t count() const { return Tensor<float>::count(shape); }
  std::size_t nbytes() const { return count() * (dtype == "f32" ? 4 : 8); }

  template <class S>
  Tensor<S> tensor() const {
    std::vector<S> v;
    if (dtype == "f32")
      v.assign(f32.begin(), f32.end());
    else
      v.assign(f64.begin(), f64.end());
    return Tensor<S>(shape, std::move(v));
  }
};

class Container {
 public:
  std::string kind;
  json meta = json::object();

  void add_f32(const std::string& name, std::vector<int> shape, std::vector<float> data) {
    detail::require(Tensor<float>::count(shape) == data.size(), "container: array '" + name + "' size mismatch");
    Array a{name, "f32", std::move(shape), std::move(data), {}};
    put(std::move(a));
  }

  void add_f64(const std::string& name, std::vector<int> shape, std::vector<double> data) {
    detail::require(Tensor<float>::count(shape) == data.size(), "container: array '" + name + "' size mismatch");
    Array a{name, "f64", std::move(shape), {}, std::move(data)};
    put(std::move(a));
  }

  template <class S>
  void add(const std::string& name, const Tensor<S>& t) {
    if constexpr (std::is_same_v<S, float>)
      add_f32(name, t.shape(), t.storage());
    else
      add_f64(name, t.shape(), std::vector<double>(t.storage().begin(), t.storage().end()));
  }

  bool has(const std::string& name) const {
    for (const auto& a : arrays_)
      if (a.name == name) return true;
    return false;
  }

  const Array& get(const std::string& name) const {
    for (const auto& a : arrays_)
      if (a.name == name) return a;
    throw IoError("container: no array named '" + name + "'");
  }

  const std::vector<Array>& arrays() const noexcept { return arrays_; }

  json header() const {
    json h;
    h["format"] = "chandiff-container";
    h["version"] = kVersion;
    h["kind"] = kind;
    h["meta"] = meta;
    h["arrays"] = json::array();
    std::size_t off = 0;
    for (const auto& a : arrays_) {
      h["arrays"].push_back({{"name", a.name}, {"dtype", a.dtype}, {"shape", a.shape}, {"offset", off},
                             {"nbytes", a.nbytes()}});
      off += a.nbytes();
    }
    return h;
  }

 private:
  void put(Array a) {
    for (auto& e : arrays_)
      if (e.name == a.name) {
        e = std::move(a);
        return;
      }
    arrays_.push_back(std::move(a));
  }

  std::vector<Array> arrays_;
};

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path.string() + "' for writing");
  f << text;
  if (!f) throw IoError("write failed for '" + path.string() + "'");
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path.string() + "'");
  return std::string(std::istreambuf_iterator<char>(f), {});
}

inline void write_container(const std::filesystem::path& path, const Container& c, bool sidecar = true) {
  const std::string head = c.header().dump();
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path.string() + "' for writing");
  const std::uint64_t len = head.size();
  f.write(kMagic, 4);
  f.write(reinterpret_cast<const char*>(&kVersion), sizeof kVersion);
  f.write(reinterpret_cast<const char*>(&len), sizeof len);
  f.write(head.data(), static_cast<std::streamsize>(head.size()));
  for (const auto& a : c.arrays()) {
    if (a.dtype == "f32")
      f.write(reinterpret_cast<const char*>(a.f32.data()), static_cast<std::streamsize>(a.nbytes()));
    else
      f.write(reinterpret_cast<const char*>(a.f64.data()), static_cast<std::streamsize>(a.nbytes()));
  }
  if (!f) throw IoError("write failed for '" + path.string() + "'");
  if (sidecar) write_text(path.string() + ".json", c.header().dump(2) + "\n");
}

inline Container read_container(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path.string() + "'");
  char magic[4];
  std::uint32_t version = 0;
  std::uint64_t len = 0;
  f.read(magic, 4);
  f.read(reinterpret_cast<char*>(&version), sizeof version);
  f.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!f || std::memcmp(magic, kMagic, 4) != 0) throw IoError("'" + path.string() + "' is not a chandiff container");
  if (version != kVersion)
    throw IoError("'" + path.string() + "' has container version " + std::to_string(version) + ", expected " +
                  std::to_string(kVersion));
  if (len > (1ull << 32)) throw IoError("'" + path.string() + "': implausible header length");
  std::string head(len, '\0');
  f.read(head.data(), static_cast<std::streamsize>(len));
  if (!f) throw IoError("'" + path.string() + "': truncated header");
  json h;
  try {
    h = json::parse(head);
  } catch (const json::exception& e) {
    throw IoError("'" + path.string() + "': malformed header: " + e.what());
  }
  Container c;
  c.kind = h.value("kind", "");
  c.meta = h.value("meta", json::object());
  for (const auto& e : h.at("arrays")) {
    const std::string name = e.at("name");
    const std::string dtype = e.at("dtype");
    const auto shape = e.at("shape").get<std::vector<int>>();
    const std::size_t n = Tensor<float>::count(shape);
    if (dtype == "f32") {
      std::vector<float> v(n);
      f.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * 4));
      c.add_f32(name, shape, std::move(v));
    } else if (dtype == "f64") {
      std::vector<double> v(n);
      f.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * 8));
      c.add_f64(name, shape, std::move(v));
    } else {
      throw IoError("'" + path.string() + "': unsupported dtype '" + dtype + "'");
    }
    if (!f) throw IoError("'" + path.string() + "': truncated payload in array '" + name + "'");
  }
  return c;
}

/// FNV-1a 64-bit.
inline std::uint64_t fnv1a(const std::string& s, std::uint64_t h = 0xcbf29ce484222325ull) {
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  static const char* d = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = d[v & 0xF];
  return s;
}

/// Hash of a JSON value's canonical (sorted-key) serialisation.
inline std::string fingerprint(const json& j) { return hex64(fnv1a(j.dump())); }

// ---------------------------------------------------------------- datasets

inline json shape_to_json(const chansim::ShapeConfig& s) {
  return {{"n_tx", s.n_tx},
          {"n_rx", s.n_rx},
          {"tones", s.tones},
          {"users", s.users},
          {"antenna_corr", s.antenna_corr},
          {"tone_corr", s.tone_corr},
          {"model", chansim::to_string(s.model)},
          {"num_paths", s.num_paths}};
}

inline chansim::ShapeConfig shape_from_json(const json& j) {
  chansim::ShapeConfig s;
  s.n_tx = j.value("n_tx", s.n_tx);
  s.n_rx = j.value("n_rx", s.n_rx);
  s.tones = j.value("tones", s.tones);
  s.users = j.value("users", s.users);
  s.antenna_corr = j.value("antenna_corr", s.antenna_corr);
  s.tone_corr = j.value("tone_corr", s.tone_corr);
  s.model = chansim::channel_model_from_string(j.value("model", chansim::to_string(s.model)));
  s.num_paths = j.value("num_paths", s.num_paths);
  return s;
}

/// Clean sequences and, optionally, matching noisy observations.
struct Dataset {
  std::vector<chansim::ChannelSequence> sequences;
  std::vector<chansim::NoisySequence> observations;  // empty or one per sequence
  json meta = json::object();
};

inline Container dataset_container(const Dataset& d) {
  detail::require(!d.sequences.empty(), "dataset: no sequences");
  const auto& first = d.sequences.front();
  const int s = static_cast<int>(d.sequences.size());
  const int k = first.size();
  const auto snap = first.shape.snapshot_shape();
  std::vector<int> shape{s, k};
  shape.insert(shape.end(), snap.begin(), snap.end());
  std::vector<float> data;
  std::vector<double> prof;
  std::vector<double> users;
  std::vector<double> seeds_hi;
  std::vector<double> seeds_lo;
  for (const auto& q : d.sequences) {
    if (q.size() != k) throw ArgumentError("dataset: sequences must share the slot count");
    for (const auto& x : q.snapshots) data.insert(data.end(), x.storage().begin(), x.storage().end());
    prof.insert(prof.end(), {q.profile.v_start, q.profile.v_end, q.profile.t_accel, q.profile.slot_duration,
                             q.profile.carrier_hz});
    users.push_back(q.user);
    seeds_hi.push_back(static_cast<double>(q.seed >> 32));
    seeds_lo.push_back(static_cast<double>(q.seed & 0xFFFFFFFFull));
  }
  Container c;
  c.kind = "dataset";
  c.meta = d.meta;
  c.meta["shape"] = shape_to_json(first.shape);
  c.meta["num_sequences"] = s;
  c.meta["num_slots"] = k;
  c.add_f32("snapshots", shape, std::move(data));
  c.add_f64("profiles", {s, 5}, std::move(prof));
  c.add_f64("users", {s}, std::move(users));
  c.add_f64("seeds_hi", {s}, std::move(seeds_hi));
  c.add_f64("seeds_lo", {s}, std::move(seeds_lo));
  if (!d.observations.empty()) {
    detail::require(d.observations.size() == d.sequences.size(), "dataset: one observation stream per sequence");
    std::vector<float> obs;
    std::vector<double> snr;
    std::vector<double> sigma;
    for (const auto& o : d.observations) {
      detail::require(o.size() == k, "dataset: observation length mismatch");
      for (const auto& y : o.observations) obs.insert(obs.end(), y.storage().begin(), y.storage().end());
      snr.insert(snr.end(), o.snr.begin(), o.snr.end());
      sigma.insert(sigma.end(), o.sigma.begin(), o.sigma.end());
    }
    c.add_f32("observations", shape, std::move(obs));
    c.add_f64("snr", {s, k}, std::move(snr));
    c.add_f64("sigma", {s, k}, std::move(sigma));
  }
  return c;
}

inline Dataset dataset_from_container(const Container& c) {
  if (c.kind != "dataset") throw IoError("expected a dataset container, found kind '" + c.kind + "'");
  Dataset d;
  d.meta = c.meta;
  const auto shape = shape_from_json(c.meta.at("shape"));
  const auto& snaps = c.get("snapshots");
  const auto& prof = c.get("profiles");
  const auto& users = c.get("users");
  const int s = snaps.shape.at(0);
  const int k = snaps.shape.at(1);
  const auto snap = shape.snapshot_shape();
  const std::size_t row = Tensor<float>::count(snap);
  if (snaps.count() != static_cast<std::size_t>(s) * k * row) throw IoError("dataset: snapshot array size mismatch");
  const bool has_obs = c.has("observations");
  for (int i = 0; i < s; ++i) {
    chansim::ChannelSequence q;
    q.shape = shape;
    q.user = static_cast<int>(users.f64.at(i));
    q.profile.v_start = prof.f64.at(i * 5 + 0);
    q.profile.v_end = prof.f64.at(i * 5 + 1);
    q.profile.t_accel = prof.f64.at(i * 5 + 2);
    q.profile.slot_duration = prof.f64.at(i * 5 + 3);
    q.profile.carrier_hz = prof.f64.at(i * 5 + 4);
    q.profile.num_slots = k;
    if (c.has("seeds_hi"))
      q.seed = (static_cast<std::uint64_t>(c.get("seeds_hi").f64.at(i)) << 32) |
               static_cast<std::uint64_t>(c.get("seeds_lo").f64.at(i));
    chansim::NoisySequence o;
    for (int j = 0; j < k; ++j) {
      const std::size_t off = (static_cast<std::size_t>(i) * k + j) * row;
      q.snapshots.emplace_back(snap, std::vector<float>(snaps.f32.begin() + off, snaps.f32.begin() + off + row));
      if (has_obs) {
        const auto& ob = c.get("observations");
        o.observations.emplace_back(snap, std::vector<float>(ob.f32.begin() + off, ob.f32.begin() + off + row));
        const double snr = c.get("snr").f64.at(static_cast<std::size_t>(i) * k + j);
        o.snr.push_back(snr);
        o.sigma.push_back(c.has("sigma") ? c.get("sigma").f64.at(static_cast<std::size_t>(i) * k + j)
                                         : std::isinf(snr) ? 0.0 : std::sqrt(1.0 / snr));
      }
    }
    d.sequences.push_back(std::move(q));
    if (has_obs) d.observations.push_back(std::move(o));
  }
  return d;
}

inline void save_dataset(const std::filesystem::path& path, const Dataset& d) { write_container(path, dataset_container(d)); }

inline Dataset load_dataset(const std::filesystem::path& path) { return dataset_from_container(read_container(path)); }

}  // namespace chandiff::io
