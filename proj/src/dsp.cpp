#include "ccstereo/dsp.hpp"

#include <cmath>
#include <cstddef>

#include "ccstereo/fft.hpp"

namespace ccs {

namespace {

constexpr double kPi = 3.14159265358979323846264338327950288;
constexpr double kWindowPowerFloor = 1e-8;

// Reflect index without edge repetition: -1 -> 1, n -> n-2.
size_t reflect_index(long long i, long long n) {
  if (n == 1) return 0;
  const long long period = 2 * (n - 1);
  long long j = i % period;
  if (j < 0) j += period;
  if (j >= n) j = period - j;
  return static_cast<size_t>(j);
}

}  // namespace

bool WaveformClip::has(Channel c) const {
  switch (c) {
    case Channel::left: return left.has_value();
    case Channel::right: return right.has_value();
    case Channel::mono: return mono.has_value();
  }
  return false;
}

const std::vector<double>& WaveformClip::channel(Channel c) const {
  const std::optional<std::vector<double>>* p = nullptr;
  switch (c) {
    case Channel::left: p = &left; break;
    case Channel::right: p = &right; break;
    case Channel::mono: p = &mono; break;
  }
  if (!p || !p->has_value()) throw std::invalid_argument("WaveformClip: channel not present");
  return **p;
}

std::vector<double>& WaveformClip::channel(Channel c) {
  return const_cast<std::vector<double>&>(static_cast<const WaveformClip*>(this)->channel(c));
}

size_t WaveformClip::length() const {
  size_t n = 0;
  bool seen = false;
  for (const auto* ch : {&left, &right, &mono}) {
    if (!ch->has_value()) continue;
    if (seen && (*ch)->size() != n)
      throw std::invalid_argument("WaveformClip: channel lengths differ");
    n = (*ch)->size();
    seen = true;
  }
  if (!seen) throw std::invalid_argument("WaveformClip: no channels");
  return n;
}

WaveformClip WaveformClip::stereo(std::vector<double> l, std::vector<double> r, int sample_rate) {
  WaveformClip clip;
  clip.sample_rate = sample_rate;
  clip.left = std::move(l);
  clip.right = std::move(r);
  clip.length();
  return clip;
}

WaveformClip WaveformClip::from_mono(std::vector<double> m, int sample_rate) {
  WaveformClip clip;
  clip.sample_rate = sample_rate;
  clip.mono = std::move(m);
  return clip;
}

ComplexSpectrogram ComplexSpectrogram::zeros(int freq_bins, int frames, const StftConfig& cfg) {
  ComplexSpectrogram s;
  s.freq_bins = freq_bins;
  s.frames = frames;
  s.config = cfg;
  s.bins.assign(static_cast<size_t>(freq_bins) * frames, {0.0, 0.0});
  return s;
}

std::vector<double> analysis_window(const StftConfig& cfg, int sample_rate) {
  const int win = cfg.window_samples(sample_rate);
  const int nfft = cfg.fft_size;
  if (win <= 0 || win > nfft)
    throw std::invalid_argument("StftConfig: window length must be in (0, fft_size]");
  std::vector<double> w(static_cast<size_t>(nfft), 0.0);
  const int pad = (nfft - win) / 2;
  for (int n = 0; n < win; ++n) {
    w[static_cast<size_t>(pad + n)] = 0.5 * (1.0 - std::cos(2.0 * kPi * n / win));
  }
  return w;
}

ComplexSpectrogram stft(const std::vector<double>& samples, const StftConfig& cfg,
                        int sample_rate) {
  if (samples.empty()) throw std::invalid_argument("stft: empty input");
  const int nfft = cfg.fft_size;
  const int hop = cfg.hop_samples(sample_rate);
  const auto window = analysis_window(cfg, sample_rate);
  const long long n = static_cast<long long>(samples.size());

  int frames = 0;
  long long frame0_offset = 0;
  if (cfg.center_pad) {
    frames = static_cast<int>(n / hop) + 1;
    frame0_offset = -nfft / 2;
  } else {
    if (n < nfft) throw std::invalid_argument("stft: input shorter than fft_size without padding");
    frames = static_cast<int>((n - nfft) / hop) + 1;
  }

  ComplexSpectrogram out = ComplexSpectrogram::zeros(cfg.freq_bins(), frames, cfg);
  std::vector<std::complex<double>> frame(static_cast<size_t>(nfft));
  for (int t = 0; t < frames; ++t) {
    const long long start = frame0_offset + static_cast<long long>(t) * hop;
    for (int i = 0; i < nfft; ++i) {
      const long long src = start + i;
      double v;
      if (src >= 0 && src < n) {
        v = samples[static_cast<size_t>(src)];
      } else if (cfg.center_pad) {
        v = samples[reflect_index(src, n)];
      } else {
        v = 0.0;
      }
      frame[static_cast<size_t>(i)] = {v * window[static_cast<size_t>(i)], 0.0};
    }
    fft_pow2(&frame, false);
    for (int f = 0; f < out.freq_bins; ++f) {
      out.at(f, t) = frame[static_cast<size_t>(f)];
    }
  }
  return out;
}

std::vector<double> istft(const ComplexSpectrogram& spec, const StftConfig& cfg, size_t out_len,
                          int sample_rate) {
  const int nfft = cfg.fft_size;
  const int hop = cfg.hop_samples(sample_rate);
  const auto window = analysis_window(cfg, sample_rate);
  if (spec.freq_bins != cfg.freq_bins())
    throw std::invalid_argument("istft: spectrogram bin count does not match config");

  const size_t padded_len = static_cast<size_t>(spec.frames - 1) * hop + nfft;
  std::vector<double> num(padded_len, 0.0);
  std::vector<double> den(padded_len, 0.0);

  std::vector<std::complex<double>> frame(static_cast<size_t>(nfft));
  for (int t = 0; t < spec.frames; ++t) {
    for (int f = 0; f < spec.freq_bins; ++f) frame[static_cast<size_t>(f)] = spec.at(f, t);
    for (int f = spec.freq_bins; f < nfft; ++f) {
      frame[static_cast<size_t>(f)] = std::conj(spec.at(nfft - f, t));
    }
    fft_pow2(&frame, true);
    const size_t base = static_cast<size_t>(t) * hop;
    for (int i = 0; i < nfft; ++i) {
      const double w = window[static_cast<size_t>(i)];
      num[base + i] += frame[static_cast<size_t>(i)].real() * w;
      den[base + i] += w * w;
    }
  }

  const size_t lead = cfg.center_pad ? static_cast<size_t>(nfft / 2) : 0;
  std::vector<double> out(out_len, 0.0);
  for (size_t i = 0; i < out_len; ++i) {
    const size_t j = i + lead;
    if (j < padded_len && den[j] >= kWindowPowerFloor) out[i] = num[j] / den[j];
  }
  return out;
}

WaveformClip make_mono(const WaveformClip& clip) {
  if (!clip.is_stereo()) throw std::invalid_argument("make_mono: clip must have L and R channels");
  const auto& l = *clip.left;
  const auto& r = *clip.right;
  if (l.size() != r.size()) throw std::invalid_argument("make_mono: channel lengths differ");
  std::vector<double> m(l.size());
  for (size_t i = 0; i < l.size(); ++i) m[i] = l[i] + r[i];
  return WaveformClip::from_mono(std::move(m), clip.sample_rate);
}

ComplexSpectrogram difference_spectrogram(const WaveformClip& clip, const StftConfig& cfg,
                                          int sample_rate) {
  if (!clip.is_stereo())
    throw std::invalid_argument("difference_spectrogram: clip must have L and R channels");
  const auto& l = *clip.left;
  const auto& r = *clip.right;
  if (l.size() != r.size())
    throw std::invalid_argument("difference_spectrogram: channel lengths differ");
  std::vector<double> d(l.size());
  for (size_t i = 0; i < l.size(); ++i) d[i] = l[i] - r[i];
  return stft(d, cfg, sample_rate);
}

std::pair<ComplexSpectrogram, ComplexSpectrogram> recover_channels(
    const ComplexSpectrogram& mono, const ComplexSpectrogram& diff) {
  if (!mono.same_shape(diff))
    throw std::invalid_argument("recover_channels: mono/diff shapes differ");
  ComplexSpectrogram left = mono;
  ComplexSpectrogram right = mono;
  for (size_t i = 0; i < mono.bins.size(); ++i) {
    left.bins[i] = (mono.bins[i] + diff.bins[i]) * 0.5;
    right.bins[i] = (mono.bins[i] - diff.bins[i]) * 0.5;
  }
  return {std::move(left), std::move(right)};
}

double rms(const std::vector<double>& samples) {
  if (samples.empty()) return 0.0;
  double acc = 0.0;
  for (double s : samples) acc += s * s;
  return std::sqrt(acc / static_cast<double>(samples.size()));
}

RmsNormalized rms_normalize(const WaveformClip& clip, double target_rms) {
  std::vector<double> mixture;
  if (clip.is_stereo()) {
    const auto& l = *clip.left;
    const auto& r = *clip.right;
    mixture.resize(l.size());
    for (size_t i = 0; i < l.size(); ++i) mixture[i] = l[i] + r[i];
  } else if (clip.has(Channel::mono)) {
    mixture = *clip.mono;
  } else {
    throw std::invalid_argument("rms_normalize: clip must be stereo or mono");
  }
  const double level = rms(mixture);
  if (level <= 1e-8) throw silent_input_error("rms_normalize: silent clip");

  RmsNormalized out;
  out.scale = target_rms / level;
  out.clip = clip;
  for (auto* ch : {&out.clip.left, &out.clip.right, &out.clip.mono}) {
    if (!ch->has_value()) continue;
    for (double& s : **ch) s *= out.scale;
  }
  return out;
}

}  // namespace ccs
