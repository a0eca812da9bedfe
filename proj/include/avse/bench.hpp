// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <ostream>

#include "avse/config.hpp"
#include "avse/model.hpp"

namespace avse {

struct BenchReport {
  std::size_t param_count = 0;
  std::size_t weight_bytes = 0;            // param_count * bytes per element
  std::size_t weight_bytes_f32 = 0;        // the single-precision memory column
  std::size_t peak_activation_bytes = 0;   // analytic, inference, one utterance
  double duration_s = 0;
  std::size_t reps = 0;
  double rtf = 0;                          // median time / audio duration
  double chunk_s = 0;
  double latency_mean_ms = 0;              // per streaming chunk
  double latency_p95_ms = 0;
  std::string precision;
};

struct Timing {
  double median_s = 0;
  double mean_s = 0;
  double p95_s = 0;
};

// Runs fn warmup + reps times and times the last reps on a steady clock.
Timing time_callable(const std::function<void()>& fn, std::size_t reps, std::size_t warmup = 1);
// Timing of fn over audio_s seconds of audio expressed as a real-time factor.
double bench_rtf(const std::function<void()>& fn, double audio_s, std::size_t reps, std::size_t warmup = 1);

// Largest set of simultaneously live activations in one inference pass over
// `samples` samples, in bytes.
std::size_t activation_estimate(const ModelConfig& cfg, std::size_t samples, std::size_t bytes_per_element);

// Whole-utterance RTF on random audio with constant visual features, plus
// per-chunk latency when chunk_s > 0 (each chunk processed independently).
template <typename T>
BenchReport bench_model(const AvseModel<T>& model, double duration_s, std::size_t reps, double chunk_s = 0.0,
                        std::size_t warmup = 1);

void write_bench_json(std::ostream& os, const BenchReport& r);

}  // namespace avse
