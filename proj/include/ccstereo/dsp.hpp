#pragma once

#include <complex>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

namespace ccs {

inline constexpr int kSampleRate = 16000;
inline constexpr double kDefaultTargetRms = 0.1;

// Thrown for clips whose mono mixture is effectively silent; callers skip
// the clip rather than treating this as a hard failure.
struct silent_input_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Channel { left, right, mono };

// Sampled audio with any subset of {left, right, mono} channels. All present
// channels share the same length and sample rate.
struct WaveformClip {
  int sample_rate = kSampleRate;
  std::optional<std::vector<double>> left;
  std::optional<std::vector<double>> right;
  std::optional<std::vector<double>> mono;

  bool has(Channel c) const;
  const std::vector<double>& channel(Channel c) const;
  std::vector<double>& channel(Channel c);
  // Common sample count; throws if present channels disagree.
  size_t length() const;
  bool is_stereo() const { return has(Channel::left) && has(Channel::right); }

  static WaveformClip stereo(std::vector<double> l, std::vector<double> r,
                             int sample_rate = kSampleRate);
  static WaveformClip from_mono(std::vector<double> m, int sample_rate = kSampleRate);
};

struct StftConfig {
  int window_ms = 25;
  int hop_ms = 10;
  int fft_size = 512;
  bool center_pad = true;

  int window_samples(int sample_rate = kSampleRate) const {
    return sample_rate * window_ms / 1000;
  }
  int hop_samples(int sample_rate = kSampleRate) const {
    return sample_rate * hop_ms / 1000;
  }
  int freq_bins() const { return fft_size / 2 + 1; }
};

// Complex time-frequency grid, F bins by T_s frames, stored row-major with
// the frame index fastest: bins[f * frames + t].
struct ComplexSpectrogram {
  int freq_bins = 0;
  int frames = 0;
  StftConfig config;
  std::vector<std::complex<double>> bins;

  static ComplexSpectrogram zeros(int freq_bins, int frames,
                                  const StftConfig& cfg = StftConfig{});

  std::complex<double>& at(int f, int t) { return bins[static_cast<size_t>(f) * frames + t]; }
  const std::complex<double>& at(int f, int t) const {
    return bins[static_cast<size_t>(f) * frames + t];
  }
  // Element count F * T_s; the loss normalization constant.
  size_t element_count() const { return bins.size(); }
  bool same_shape(const ComplexSpectrogram& other) const {
    return freq_bins == other.freq_bins && frames == other.frames;
  }
};

// Periodic Hann analysis window of cfg.window_samples() taps, centered inside
// the fft_size frame (zero-padded symmetrically on both sides).
std::vector<double> analysis_window(const StftConfig& cfg, int sample_rate = kSampleRate);

// Short-time Fourier transform of one channel. With center_pad the signal is
// reflect-padded by fft_size/2 on both ends, giving T_s = floor(T'/hop) + 1.
ComplexSpectrogram stft(const std::vector<double>& samples, const StftConfig& cfg,
                        int sample_rate = kSampleRate);

// Least-squares overlap-add synthesis: each sample is the windowed-frame sum
// divided by the summed squared analysis window at that sample. Output is
// truncated or zero-padded to out_len.
std::vector<double> istft(const ComplexSpectrogram& spec, const StftConfig& cfg,
                          size_t out_len, int sample_rate = kSampleRate);

// M[t] = L[t] + R[t] (sum, not average).
WaveformClip make_mono(const WaveformClip& clip);

// STFT(L - R).
ComplexSpectrogram difference_spectrogram(const WaveformClip& clip, const StftConfig& cfg,
                                          int sample_rate = kSampleRate);

// left = (mono + diff) / 2, right = (mono - diff) / 2.
std::pair<ComplexSpectrogram, ComplexSpectrogram> recover_channels(
    const ComplexSpectrogram& mono, const ComplexSpectrogram& diff);

double rms(const std::vector<double>& samples);

struct RmsNormalized {
  WaveformClip clip;
  double scale = 1.0;  // factor applied to every channel; keep for de-normalization
};

// Scales all channels by one factor so the mono mixture RMS equals
// target_rms. Throws silent_input_error when the mixture RMS is below 1e-8.
RmsNormalized rms_normalize(const WaveformClip& clip, double target_rms = kDefaultTargetRms);

}  // namespace ccs
