// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "avse/dsp.hpp"
#include "avse/encoders.hpp"
#include "avse/synth.hpp"

namespace avse {

// One row of manifest.json; paths are relative to the corpus root.
struct CorpusEntry {
  std::string utt;
  std::string split;  // train | val | test
  std::string cond;
  double snr_db = 0;
  std::string clean, noisy, visual;
};

struct Corpus {
  std::filesystem::path root;
  std::vector<CorpusEntry> entries;

  std::vector<CorpusEntry> split(const std::string& name) const;
};

struct Utterance {
  CorpusEntry entry;
  Waveform clean, noisy;
  VisualStream visual;
};

// Writes float32 WAVs, .vft features and manifest.json under root. Item
// indices run train, val, test so each split is a disjoint range.
Corpus write_synth_corpus(const std::filesystem::path& root, const SynthSpec& spec, std::size_t n_train,
                          std::size_t n_val, std::size_t n_test);
Corpus load_corpus(const std::filesystem::path& root);
Utterance load_utterance(const Corpus& c, const CorpusEntry& e);
std::vector<Utterance> load_split(const Corpus& c, const std::string& split);

}  // namespace avse
