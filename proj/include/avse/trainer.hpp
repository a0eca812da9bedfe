// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <filesystem>
#include <ostream>
#include <vector>

#include "avse/config.hpp"
#include "avse/corpus.hpp"
#include "avse/model.hpp"

namespace avse {

struct CurveRow {
  std::size_t epoch = 0;
  double train_loss = 0;
  double val_loss = 0;
  double val_sisdr = 0;
  double lr = 0;  // rate used during this epoch
};

struct TrainOptions {
  std::filesystem::path out_dir;  // best.ckpt, last.ckpt, loss_curve.csv; empty = no files
  bool resume = false;            // continue from out_dir/last.ckpt when present
  std::size_t stop_after = 0;     // stop after this epoch (0 = run cfg.epochs)
  std::ostream* log = nullptr;
};

struct TrainResult {
  std::vector<CurveRow> curve;
  double best_val_loss = 0;
  std::size_t best_epoch = 0;
};

// Random crop of segment_len samples starting on a visual frame boundary,
// so latent and visual offsets are exact: sample s0 = k0 * spf, visual
// frames k0 .. k0 + segment_len / spf.
struct Crop {
  std::size_t sample_start = 0;
  std::size_t frame_start = 0;
  std::size_t frames = 0;
};
Crop draw_crop(std::size_t samples, std::size_t segment_len, std::size_t samples_per_frame, Rng& rng);

struct ValidationScore {
  double loss = 0;   // mean clipped negative SI-SDR over items
  double sisdr = 0;  // mean capped SI-SDR of the raw decoder output
  double noisy_sisdr = 0;
};

// Eval-mode, one utterance at a time, full length.
template <typename T>
ValidationScore validate(const AvseModel<T>& model, const std::vector<Utterance>& items);

template <typename T>
TrainResult train(AvseModel<T>& model, const std::vector<Utterance>& train_set, const std::vector<Utterance>& val_set,
                  const TrainConfig& cfg, const TrainOptions& opt = {});

void write_curve_csv(std::ostream& os, const std::vector<CurveRow>& curve);

}  // namespace avse
