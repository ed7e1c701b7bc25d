#pragma once

#include <string>

#include "ccstereo/dsp.hpp"

namespace ccs {

// RIFF/WAVE, PCM 16-bit little-endian only. One channel maps to the mono
// channel, two channels to left/right. Amplitudes map to [-1, 1] by division
// by 32768.
WaveformClip read_wav(const std::string& path);

// Writes mono (1 channel) when only the mono channel is present, otherwise
// stereo L/R. Samples are clamped to [-1, 1] before quantization.
void write_wav(const std::string& path, const WaveformClip& clip);

}  // namespace ccs
