#pragma once

#include <string>
#include <vector>

#include "ccstereo/dsp.hpp"
#include "ccstereo/image.hpp"
#include "ccstereo/rng.hpp"
#include "ccstereo/tensor.hpp"

namespace ccs {

// One rendered scene: a source panned across the stereo field with a matching
// bright blob in the video frames.
struct SceneSpec {
  double azimuth_start = 0.5;  // 0 = full left, 1 = full right
  double azimuth_end = 0.5;    // equal to start for a static scene
  bool noise_source = false;   // tone mixture otherwise
  bool itd = false;            // add a fractional delay on the far channel
  double duration_s = 10.0;
  int fps = 10;
  uint64_t seed = 0;
};

struct SyntheticClip {
  WaveformClip audio;  // stereo, pre-quantization
  std::vector<Image> frames;
  int fps = 10;
};

SyntheticClip generate_synthetic_clip(const SceneSpec& spec);

struct ClipRecord {
  std::string clip_id;
  std::string audio_path;  // resolved against the manifest directory at load
  std::string frames_dir;
  int fps = 10;
  double duration_s = 10.0;
};

struct ClipManifest {
  std::vector<ClipRecord> records;
};

// JSON-lines manifest. Parse errors carry the line number; referenced files
// are checked up front and all missing paths are reported together. An empty
// manifest is legal but warned about on stderr.
ClipManifest load_manifest(const std::string& path);

// Sorted frame image paths of a clip.
std::vector<std::string> frame_files(const std::string& frames_dir);

inline constexpr double kSegmentSeconds = 0.63;
inline constexpr int kSegmentSamples = 10080;  // 0.63 s at 16 kHz

struct TrainingPair {
  std::vector<double> mono;   // RMS-normalized mixture segment
  std::vector<double> left;   // ground truth, scaled by the same factor
  std::vector<double> right;
  Image frame_t;
  Image frame_prev;
  int frame_index = 0;
  int start_sample = 0;
};

// Uniform random segment plus its centre frame and the preceding frame
// (following frame when the centre frame is the first). The mixture is
// normalized to the default target RMS and the stereo ground truth is scaled
// by the same factor.
TrainingPair sample_training_pair(const WaveformClip& stereo,
                                  const std::vector<std::string>& frames, int fps, Rng* rng);

// Train-time view: resize to 480x240 when needed, random 224x448 crop
// (row offset 0..16, column offset 0..32, drawn in that order), then
// brightness/contrast/saturation jitter.
Image augment_train(const Image& frame, Rng* rng);

// Packs spectrograms into an (N, 2, freq_bins, frames) grid, dropping rows
// at and above freq_bins (the Nyquist row for the 257-bin default).
template <typename T>
ad::Tensor<T> pack_spectrograms(const std::vector<const ComplexSpectrogram*>& specs,
                                int freq_bins, bool requires_grad = false) {
  if (specs.empty()) throw std::invalid_argument("pack_spectrograms: empty batch");
  const int frames = specs[0]->frames;
  const int64_t plane = static_cast<int64_t>(freq_bins) * frames;
  std::vector<T> values(static_cast<size_t>(specs.size()) * 2 * plane);
  for (size_t i = 0; i < specs.size(); ++i) {
    const ComplexSpectrogram& s = *specs[i];
    if (s.frames != frames || s.freq_bins < freq_bins)
      throw std::invalid_argument("pack_spectrograms: shape mismatch in batch");
    T* re = values.data() + static_cast<int64_t>(i) * 2 * plane;
    T* im = re + plane;
    for (int f = 0; f < freq_bins; ++f)
      for (int t = 0; t < frames; ++t) {
        const std::complex<double>& z = s.at(f, t);
        re[static_cast<int64_t>(f) * frames + t] = static_cast<T>(z.real());
        im[static_cast<int64_t>(f) * frames + t] = static_cast<T>(z.imag());
      }
  }
  return ad::Tensor<T>::leaf({static_cast<int>(specs.size()), 2, freq_bins, frames},
                             std::move(values), requires_grad);
}

// Inverse of pack_spectrograms for one item: restores the full bin count with
// zeros in the dropped top rows.
template <typename T>
ComplexSpectrogram unpack_spectrogram(const ad::Tensor<T>& grid, int item, int full_bins,
                                      const StftConfig& cfg = StftConfig{}) {
  const int fb = grid.dim(2);
  const int frames = grid.dim(3);
  if (full_bins < fb) throw std::invalid_argument("unpack_spectrogram: full_bins too small");
  ComplexSpectrogram out = ComplexSpectrogram::zeros(full_bins, frames, cfg);
  const int64_t plane = static_cast<int64_t>(fb) * frames;
  const T* re = grid.node()->values.data() + static_cast<int64_t>(item) * 2 * plane;
  const T* im = re + plane;
  for (int f = 0; f < fb; ++f)
    for (int t = 0; t < frames; ++t)
      out.at(f, t) = {static_cast<double>(re[static_cast<int64_t>(f) * frames + t]),
                      static_cast<double>(im[static_cast<int64_t>(f) * frames + t])};
  return out;
}

// Stacks frames into an (N, 3, H, W) grid with (p/255 - 0.5) / 0.25 scaling.
template <typename T>
ad::Tensor<T> stack_frames(const std::vector<const Image*>& frames) {
  if (frames.empty()) throw std::invalid_argument("stack_frames: empty batch");
  const int h = frames[0]->height;
  const int w = frames[0]->width;
  const int64_t plane = static_cast<int64_t>(h) * w;
  std::vector<T> values(static_cast<size_t>(frames.size()) * 3 * plane);
  for (size_t i = 0; i < frames.size(); ++i) {
    const Image& img = *frames[i];
    if (img.height != h || img.width != w)
      throw std::invalid_argument("stack_frames: frame size mismatch in batch");
    T* base = values.data() + static_cast<int64_t>(i) * 3 * plane;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int c = 0; c < 3; ++c)
          base[c * plane + static_cast<int64_t>(y) * w + x] =
              static_cast<T>((img.at(y, x, c) / 255.0 - 0.5) / 0.25);
  }
  return ad::Tensor<T>::leaf({static_cast<int>(frames.size()), 3, h, w}, std::move(values), false);
}

}  // namespace ccs
