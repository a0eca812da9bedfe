// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "avse/dsp.hpp"

namespace avse {

// Short-time objective intelligibility, following the original algorithm:
// 10 kHz internal rate, 256-sample frames at 50% overlap, silent frames
// (40 dB below the loudest) dropped, 15 third-octave bands from 150 Hz,
// 30-frame segments, -15 dB clipping. SignalTooShortError when fewer than
// 30 frames survive. Inputs must have equal length and rate.
double stoi(const Waveform& clean, const Waveform& processed);

struct MaskScore {
  double hit = 0;           // true-positive rate over reference ones
  double fa = 0;            // false-positive rate over reference zeros
  double hit_minus_fa = 0;
  double accuracy = 0;      // fraction of bins where est == ref
};

// UndefinedDenominatorError naming HIT (no reference ones) or FA (no
// reference zeros).
MaskScore hit_fa(const BinaryMask& est, const BinaryMask& ref);

// ".msk": "MSK1", u32 frames, u32 bins, frames*bins u8 values in {0, 1}.
std::vector<std::uint8_t> encode_msk(const BinaryMask& m);
BinaryMask decode_msk(std::span<const std::uint8_t> bytes);

struct EvalRow {
  std::string utt;
  std::string cond;
  double snr_db = 0;
  double si_sdr_noisy = 0;
  double si_sdr_enh = 0;
  double stoi_noisy = 0;
  double stoi_enh = 0;
  std::optional<MaskScore> mask;
  std::optional<double> pesq;
};

struct EvalItemError {
  std::string utt;
  std::string message;
};

struct EvalReport {
  std::vector<EvalRow> rows;            // input order
  std::vector<EvalRow> per_condition;   // means, sorted by condition name
  EvalRow overall;                      // mean over all rows, utt "ALL"
  std::vector<EvalItemError> errors;
};

struct EvalInput {
  std::string utt;
  std::string cond;
  double snr_db = 0;
  Waveform clean, noisy, enhanced;
  std::optional<BinaryMask> est_mask, ref_mask;
};

// SI-SDR values are capped at +-60 dB.
EvalRow evaluate_item(const EvalInput& in);

// Means of every present column. NaN for a column no row carries.
EvalRow mean_row(const std::vector<EvalRow>& rows, const std::string& utt, const std::string& cond);
EvalReport summarize(std::vector<EvalRow> rows, std::vector<EvalItemError> errors = {});

// CSV header utt,cond,snr_db,si_sdr_noisy,si_sdr_enh,stoi_noisy,stoi_enh,
// hit,fa,hit_fa,acc,pesq; 6 significant digits, empty cells for missing.
void write_report_csv(std::ostream& os, const EvalReport& r, bool with_summary = true);
std::string format_number(double v);

// Runs `command ref.wav deg.wav` and parses the last number it prints.
// nullopt when the command fails or prints no number.
std::optional<double> run_pesq_hook(const std::string& command, const std::string& ref_path,
                                    const std::string& deg_path);

}  // namespace avse
