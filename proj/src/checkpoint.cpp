// SPDX-License-Identifier: Apache-2.0

#include "avse/checkpoint.hpp"

#include "avse/error.hpp"
#include "avse/io.hpp"

namespace avse {

using nlohmann::json;

const NamedArray* Checkpoint::find(const std::string& name) const {
  for (const auto& a : arrays)
    if (a.name == name) return &a;
  return nullptr;
}

const NamedArray& Checkpoint::at(const std::string& name) const {
  if (const auto* a = find(name)) return *a;
  throw FormatError("checkpoint: missing array '" + name + "'");
}

std::vector<NamedArray> Checkpoint::with_prefix(const std::string& prefix) const {
  std::vector<NamedArray> out;
  for (const auto& a : arrays)
    if (a.name.compare(0, prefix.size(), prefix) == 0) out.push_back({a.name.substr(prefix.size()), a.shape, a.values});
  return out;
}

void Checkpoint::put(const std::string& prefix, const std::vector<NamedArray>& items) {
  for (const auto& a : items) arrays.push_back({prefix + a.name, a.shape, a.values});
}

void Checkpoint::put_scalar(const std::string& name, double v) { arrays.push_back({name, {1}, {v}}); }

double Checkpoint::scalar(const std::string& name) const {
  const auto& a = at(name);
  if (a.values.size() != 1) throw FormatError("checkpoint: '" + name + "' is not a scalar");
  return a.values[0];
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& c) {
  ByteWriter w;
  w.bytes("AVSE");
  w.u32(kCheckpointVersion);
  w.u64(fingerprint(c.model));
  const std::string cfg = json{{"model", c.model}, {"train", c.train}}.dump();
  w.u32(static_cast<std::uint32_t>(cfg.size()));
  w.bytes(cfg);
  w.u32(static_cast<std::uint32_t>(c.arrays.size()));
  for (const auto& a : c.arrays) {
    if (shape_numel(a.shape) != a.values.size())
      throw DimensionError("checkpoint: array '" + a.name + "' shape " + shape_str(a.shape) + " holds " +
                           std::to_string(a.values.size()) + " values");
    w.u32(static_cast<std::uint32_t>(a.name.size()));
    w.bytes(a.name);
    w.u32(static_cast<std::uint32_t>(a.shape.size()));
    for (auto e : a.shape) w.u32(static_cast<std::uint32_t>(e));
    for (double v : a.values) w.f64(v);
  }
  return w.take();
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "checkpoint");
  if (r.bytes(4) != "AVSE") throw FormatError("checkpoint: bad magic");
  const auto version = r.u32();
  if (version != kCheckpointVersion)
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  const auto fp = r.u64();
  const auto cfg_len = r.u32();
  Checkpoint c;
  try {
    const json j = json::parse(r.bytes(cfg_len));
    c.model = merge_model_config(ModelConfig::preset_named(j.at("model").value("preset", std::string("paper"))),
                                 j.at("model"));
    c.train = merge_train_config(TrainConfig::paper(), j.at("train"));
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint: bad config block: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint: bad config block: ") + e.what());
  }
  if (fingerprint(c.model) != fp) throw FormatError("checkpoint: config fingerprint mismatch");
  const auto n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    NamedArray a;
    a.name = r.bytes(r.u32());
    const auto rank = r.u32();
    if (rank == 0 || rank > 8) throw FormatError("checkpoint: array '" + a.name + "' has rank " + std::to_string(rank));
    std::size_t count = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      const auto e = r.u32();
      if (e == 0) throw FormatError("checkpoint: array '" + a.name + "' has a zero extent");
      a.shape.push_back(e);
      count *= e;
    }
    if (count * 8 > r.remaining()) throw FormatError("checkpoint: array '" + a.name + "' is truncated");
    a.values.resize(count);
    for (auto& v : a.values) v = r.f64();
    c.arrays.push_back(std::move(a));
  }
  if (r.remaining() != 0) throw FormatError("checkpoint: trailing bytes");
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  write_file_atomic(path, encode_checkpoint(c));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file(path)); }

template <typename T>
Checkpoint model_checkpoint(const AvseModel<T>& m, const TrainConfig& train) {
  Checkpoint c;
  c.model = m.config();
  c.train = train;
  c.put("w/", m.export_state());
  return c;
}

template <typename T>
AvseModel<T> model_from_checkpoint(const Checkpoint& c) {
  auto m = AvseModel<T>::init(c.model, 0);
  m.import_state(c.with_prefix("w/"));
  return m;
}

template Checkpoint model_checkpoint(const AvseModel<float>&, const TrainConfig&);
template Checkpoint model_checkpoint(const AvseModel<double>&, const TrainConfig&);
template AvseModel<float> model_from_checkpoint(const Checkpoint&);
template AvseModel<double> model_from_checkpoint(const Checkpoint&);

}  // namespace avse
