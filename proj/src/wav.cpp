// SPDX-License-Identifier: Apache-2.0

#include "avse/wav.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <string>

#include "avse/error.hpp"
#include "avse/io.hpp"

namespace avse {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
      out.close();
      std::filesystem::remove(tmp);
      throw FormatError("short write to " + tmp.string());
    }
  }
  std::filesystem::rename(tmp, path);
}

std::string ByteReader::bytes(std::size_t n) {
  need(n);
  std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
  pos_ += n;
  return s;
}

void ByteReader::skip(std::size_t n) {
  need(n);
  pos_ += n;
}

void ByteReader::need(std::size_t n) const {
  if (data_.size() - pos_ < n)
    throw FormatError(what_ + ": truncated at byte " + std::to_string(pos_));
}

namespace {
constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;
}  // namespace

Waveform decode_wav(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "wav");
  if (r.bytes(4) != "RIFF") throw FormatError("wav: missing RIFF header");
  r.u32();
  if (r.bytes(4) != "WAVE") throw FormatError("wav: not a WAVE file");
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  while (r.remaining() >= 8) {
    const std::string id = r.bytes(4);
    const std::uint32_t size = r.u32();
    if (id == "fmt ") {
      const std::size_t start = r.position();
      format = r.u16();
      channels = r.u16();
      rate = r.u32();
      r.u32();
      r.u16();
      bits = r.u16();
      if (format == kFormatExtensible && size >= 40) {
        r.u16();
        r.u16();
        r.u32();
        format = r.u16();
      }
      r.skip(size - (r.position() - start));
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) throw FormatError("wav: data chunk before fmt chunk");
      if (channels != 1) throw FormatError("wav: only mono is supported, got " + std::to_string(channels) + " channels");
      if (rate != static_cast<std::uint32_t>(kSampleRate))
        throw FormatError("wav: sample rate " + std::to_string(rate) + " Hz not supported (16000 Hz only)");
      Waveform w;
      w.rate = static_cast<int>(rate);
      const std::uint32_t avail = static_cast<std::uint32_t>(std::min<std::size_t>(size, r.remaining()));
      if (format == kFormatPcm && bits == 16) {
        w.samples.resize(avail / 2);
        for (auto& s : w.samples) s = static_cast<std::int16_t>(r.u16()) / 32768.0;
      } else if (format == kFormatFloat && bits == 32) {
        w.samples.resize(avail / 4);
        for (auto& s : w.samples) s = r.f32();
      } else {
        throw FormatError("wav: unsupported encoding (format " + std::to_string(format) + ", " +
                          std::to_string(bits) + " bits)");
      }
      return w;
    } else {
      r.skip(std::min<std::size_t>(size + (size & 1), r.remaining()));
    }
  }
  throw FormatError("wav: no data chunk");
}

std::vector<std::uint8_t> encode_wav(const Waveform& w, WavEncoding enc) {
  if (w.rate != kSampleRate) throw FormatError("wav: refusing to write rate " + std::to_string(w.rate));
  const bool pcm = enc == WavEncoding::kPcm16;
  const std::uint16_t bits = pcm ? 16 : 32;
  const std::uint32_t data_bytes = static_cast<std::uint32_t>(w.samples.size() * bits / 8);
  ByteWriter b;
  b.bytes("RIFF");
  b.u32(36 + data_bytes);
  b.bytes("WAVE");
  b.bytes("fmt ");
  b.u32(16);
  b.u16(pcm ? kFormatPcm : kFormatFloat);
  b.u16(1);
  b.u32(static_cast<std::uint32_t>(w.rate));
  b.u32(static_cast<std::uint32_t>(w.rate) * bits / 8);
  b.u16(bits / 8);
  b.u16(bits);
  b.bytes("data");
  b.u32(data_bytes);
  for (double s : w.samples) {
    if (pcm) {
      const double q = std::round(std::clamp(s, -1.0, 1.0) * 32768.0);
      b.u16(static_cast<std::uint16_t>(static_cast<std::int16_t>(std::clamp(q, -32768.0, 32767.0))));
    } else {
      b.f32(static_cast<float>(s));
    }
  }
  return b.take();
}

Waveform read_wav(const std::filesystem::path& path) { return decode_wav(read_file(path)); }

void write_wav(const std::filesystem::path& path, const Waveform& w, WavEncoding enc) {
  write_file_atomic(path, encode_wav(w, enc));
}

}  // namespace avse
