// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <initializer_list>

namespace avse {

// Counter-based generator. Draw i of a stream keyed by k is
//   splitmix64_finalize(k + (i + 1) * 0x9E3779B97F4A7C15)
// so any draw can be recomputed from (key, counter) alone, which keeps
// results identical across platforms and standard libraries.
// Uniforms take the top 53 bits; normals use the cosine branch of
// Box-Muller on two consecutive uniforms.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : key_(mix(seed)) {}

  // Independent sub-stream for a tuple of tags (epoch, step, item, ...).
  static Rng derive(std::uint64_t seed, std::initializer_list<std::uint64_t> tags);

  std::uint64_t next_u64();
  double uniform();                      // [0, 1)
  double uniform(double lo, double hi);  // [lo, hi)
  double normal();                       // N(0, 1)
  std::uint64_t below(std::uint64_t n);  // [0, n), n > 0

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }
  void set_counter(std::uint64_t c) { counter_ = c; }

  static std::uint64_t mix(std::uint64_t z);

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace avse
