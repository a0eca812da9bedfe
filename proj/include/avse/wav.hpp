// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "avse/dsp.hpp"

namespace avse {

enum class WavEncoding { kPcm16, kFloat32 };

// Mono RIFF/WAVE at 16 kHz only; anything else is a FormatError.
Waveform decode_wav(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_wav(const Waveform& w, WavEncoding enc = WavEncoding::kFloat32);

Waveform read_wav(const std::filesystem::path& path);
void write_wav(const std::filesystem::path& path, const Waveform& w,
               WavEncoding enc = WavEncoding::kFloat32);

}  // namespace avse
