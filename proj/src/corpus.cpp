// SPDX-License-Identifier: Apache-2.0

#include "avse/corpus.hpp"

#include <cstdio>
#include <json.hpp>

#include "avse/error.hpp"
#include "avse/io.hpp"
#include "avse/wav.hpp"

namespace avse {

using nlohmann::json;

std::vector<CorpusEntry> Corpus::split(const std::string& name) const {
  std::vector<CorpusEntry> out;
  for (const auto& e : entries)
    if (e.split == name) out.push_back(e);
  return out;
}

Corpus write_synth_corpus(const std::filesystem::path& root, const SynthSpec& spec, std::size_t n_train,
                          std::size_t n_val, std::size_t n_test) {
  spec.validate();
  Corpus c;
  c.root = root;
  std::filesystem::create_directories(root);
  const std::pair<const char*, std::size_t> splits[] = {{"train", n_train}, {"val", n_val}, {"test", n_test}};
  std::uint64_t index = 0;
  json items = json::array();
  for (const auto& [name, count] : splits) {
    std::filesystem::create_directories(root / name);
    for (std::size_t i = 0; i < count; ++i, ++index) {
      const auto item = synth_item(spec, index);
      char id[32];
      std::snprintf(id, sizeof id, "%s%04zu", name, i);
      CorpusEntry e;
      e.utt = id;
      e.split = name;
      e.cond = item.cond;
      e.snr_db = item.snr_db;
      e.clean = std::string(name) + "/" + id + "_clean.wav";
      e.noisy = std::string(name) + "/" + id + "_noisy.wav";
      e.visual = std::string(name) + "/" + id + ".vft";
      write_wav(root / e.clean, item.clean, WavEncoding::kFloat32);
      write_wav(root / e.noisy, item.noisy, WavEncoding::kFloat32);
      write_visual(root / e.visual, item.visual);
      items.push_back({{"utt", e.utt}, {"split", e.split}, {"cond", e.cond}, {"snr_db", e.snr_db},
                       {"clean", e.clean}, {"noisy", e.noisy}, {"visual", e.visual}});
      c.entries.push_back(std::move(e));
    }
  }
  const json manifest{{"seed", spec.seed},       {"duration_s", spec.duration_s}, {"snr_lo_db", spec.snr_lo_db},
                      {"snr_hi_db", spec.snr_hi_db}, {"noise", to_string(spec.noise)}, {"visual_dim", spec.visual_dim},
                      {"fps", spec.fps},         {"items", items}};
  const std::string text = manifest.dump(2) + "\n";
  write_file_atomic(root / "manifest.json", std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  return c;
}

Corpus load_corpus(const std::filesystem::path& root) {
  const auto bytes = read_file(root / "manifest.json");
  Corpus c;
  c.root = root;
  try {
    const json j = json::parse(bytes.begin(), bytes.end());
    for (const auto& it : j.at("items")) {
      CorpusEntry e;
      e.utt = it.at("utt").get<std::string>();
      e.split = it.value("split", std::string("test"));
      e.cond = it.value("cond", std::string(""));
      e.snr_db = it.value("snr_db", 0.0);
      e.clean = it.at("clean").get<std::string>();
      e.noisy = it.at("noisy").get<std::string>();
      e.visual = it.value("visual", std::string(""));
      c.entries.push_back(std::move(e));
    }
  } catch (const json::exception& e) {
    throw FormatError("manifest " + (root / "manifest.json").string() + ": " + e.what());
  }
  return c;
}

Utterance load_utterance(const Corpus& c, const CorpusEntry& e) {
  Utterance u;
  u.entry = e;
  u.clean = read_wav(c.root / e.clean);
  u.noisy = read_wav(c.root / e.noisy);
  if (u.clean.size() != u.noisy.size())
    throw DimensionError(e.utt + ": clean has " + std::to_string(u.clean.size()) + " samples, noisy has " +
                         std::to_string(u.noisy.size()));
  if (!e.visual.empty()) u.visual = read_visual(c.root / e.visual);
  return u;
}

std::vector<Utterance> load_split(const Corpus& c, const std::string& split) {
  std::vector<Utterance> out;
  for (const auto& e : c.split(split)) out.push_back(load_utterance(c, e));
  return out;
}

}  // namespace avse
