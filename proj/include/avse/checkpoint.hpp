// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "avse/config.hpp"
#include "avse/model.hpp"

namespace avse {

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Layout (little-endian):
//   "AVSE" | u32 version | u64 fingerprint of the model config |
//   u32 n + n bytes of config JSON {"model":..., "train":...} |
//   u32 array count | per array: u32 name length, name, u32 rank,
//   rank x u32 extents, f64 values.
// Array names are prefixed "w/" (weights), "opt/" (optimizer state) and
// "meta/" (epoch counters, scheduler, loss curve).
struct Checkpoint {
  ModelConfig model;
  TrainConfig train;
  std::vector<NamedArray> arrays;

  const NamedArray* find(const std::string& name) const;
  const NamedArray& at(const std::string& name) const;  // FormatError if absent
  std::vector<NamedArray> with_prefix(const std::string& prefix) const;  // prefix stripped
  void put(const std::string& prefix, const std::vector<NamedArray>& items);
  void put_scalar(const std::string& name, double v);
  double scalar(const std::string& name) const;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& c);
// FormatError on bad magic/version, truncation, or a fingerprint that does
// not match the embedded config.
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Weights-only checkpoint for a model.
template <typename T>
Checkpoint model_checkpoint(const AvseModel<T>& m, const TrainConfig& train = {});
// Rebuilds the model from a checkpoint's config and "w/" arrays.
template <typename T>
AvseModel<T> model_from_checkpoint(const Checkpoint& c);

}  // namespace avse
