#pragma once

#include <string>
#include <utility>
#include <vector>

#include "ccstereo/data.hpp"
#include "ccstereo/dsp.hpp"
#include "ccstereo/image.hpp"
#include "ccstereo/metrics.hpp"
#include "ccstereo/model.hpp"
#include "ccstereo/wav.hpp"

namespace ccs {

inline constexpr int kHopSamples = 1600;  // 0.1 s at 16 kHz

struct WindowEntry {
  int start_sample = 0;
  double start_s = 0.0;
  int frame_index = 0;
  int tdss_region = 0;
};

struct WindowPlan {
  std::vector<WindowEntry> entries;
  bool has_tail = false;
};

// Starts every 0.1 s while a full window fits; a final window aligned to the
// clip end covers any remainder. Each window is paired with the frame nearest
// its centre.
WindowPlan plan_windows(size_t total_samples, int fps, int frame_count);

// Five-region schedule cycling with the frame index:
// top-left, top-right, bottom-left, bottom-right, centre.
Image tdss_crop(const Image& frame, int frame_index);

// The fixed centre view used when the five-region schedule is off.
Image center_crop(const Image& frame);

// Per-sample mean of all window predictions covering that sample.
std::vector<double> overlap_integrate(
    const std::vector<std::pair<int, std::vector<double>>>& windows, size_t total_len);

struct InferOptions {
  bool tdss = true;
  int batch_size = 8;
};

// Full-clip binauralization: normalize, window, predict the difference
// spectrogram per window, recover both channels, integrate, de-normalize.
template <typename T>
WaveformClip binauralize_clip(Model<T>& model, const WaveformClip& mono_clip,
                              const std::vector<Image>& frames, int fps,
                              const InferOptions& opts) {
  if (!mono_clip.has(Channel::mono)) throw std::invalid_argument("binauralize: need mono input");
  if (frames.empty()) throw std::invalid_argument("binauralize: need frames");
  if (opts.batch_size < 1) throw std::invalid_argument("binauralize: batch_size must be positive");

  const StftConfig cfg;
  const RmsNormalized norm = rms_normalize(mono_clip);
  const std::vector<double>& mono = norm.clip.channel(Channel::mono);
  const WindowPlan plan = plan_windows(mono.size(), fps, static_cast<int>(frames.size()));
  const int model_bins = model.config().freq_bins;

  std::vector<std::pair<int, std::vector<double>>> left_parts, right_parts;
  left_parts.reserve(plan.entries.size());
  right_parts.reserve(plan.entries.size());

  for (size_t begin = 0; begin < plan.entries.size(); begin += opts.batch_size) {
    const size_t end = std::min(begin + opts.batch_size, plan.entries.size());
    std::vector<ComplexSpectrogram> specs;
    std::vector<Image> views;
    specs.reserve(end - begin);
    views.reserve(end - begin);
    for (size_t i = begin; i < end; ++i) {
      const WindowEntry& w = plan.entries[i];
      std::vector<double> segment(mono.begin() + w.start_sample,
                                  mono.begin() + w.start_sample + kSegmentSamples);
      specs.push_back(stft(segment, cfg));
      const Image& raw = frames[static_cast<size_t>(w.frame_index)];
      const Image sized =
          (raw.width == 480 && raw.height == 240) ? raw : resize_bilinear(raw, 480, 240);
      views.push_back(opts.tdss ? tdss_crop(sized, w.frame_index) : center_crop(sized));
    }

    std::vector<const ComplexSpectrogram*> spec_ptrs;
    std::vector<const Image*> view_ptrs;
    for (const auto& s : specs) spec_ptrs.push_back(&s);
    for (const auto& v : views) view_ptrs.push_back(&v);
    ad::Tensor<T> spec_grid = pack_spectrograms<T>(spec_ptrs, model_bins);
    ad::Tensor<T> frame_grid = stack_frames<T>(view_ptrs);

    ad::Tensor<T> mask = model.forward_mask(spec_grid, frame_grid, false, false);
    ad::Tensor<T> pred_diff = complex_mask_multiply(mask, spec_grid);

    for (size_t i = begin; i < end; ++i) {
      const WindowEntry& w = plan.entries[i];
      const ComplexSpectrogram diff =
          unpack_spectrogram(pred_diff, static_cast<int>(i - begin), cfg.freq_bins(), cfg);
      auto channels = recover_channels(specs[i - begin], diff);
      left_parts.emplace_back(w.start_sample, istft(channels.first, cfg, kSegmentSamples));
      right_parts.emplace_back(w.start_sample, istft(channels.second, cfg, kSegmentSamples));
    }
  }

  std::vector<double> left = overlap_integrate(left_parts, mono.size());
  std::vector<double> right = overlap_integrate(right_parts, mono.size());
  const double undo = 1.0 / norm.scale;
  for (auto& v : left) v *= undo;
  for (auto& v : right) v *= undo;
  return WaveformClip::stereo(std::move(left), std::move(right), mono_clip.sample_rate);
}

struct EvalResult {
  MetricReport report;
  std::vector<std::string> errors;  // one entry per skipped clip
};

// Scores every manifest clip against its stereo ground truth. A null model
// selects the mono-mono baseline. Clip failures are recorded and skipped.
template <typename T>
EvalResult evaluate_split(Model<T>* model, const ClipManifest& manifest,
                          const InferOptions& opts) {
  const StftConfig cfg;
  EvalResult result;
  result.report.config = {{"mode", model ? "model" : "baseline"},
                          {"tdss", opts.tdss},
                          {"clips", manifest.records.size()}};
  for (const auto& rec : manifest.records) {
    try {
      WaveformClip gt = read_wav(rec.audio_path);
      if (!gt.is_stereo())
        throw std::runtime_error("ground truth must be stereo: " + rec.audio_path);
      WaveformClip mono = make_mono(gt);

      WaveformClip pred;
      if (model) {
        std::vector<Image> frames;
        for (const auto& f : frame_files(rec.frames_dir)) frames.push_back(read_png(f));
        pred = binauralize_clip(*model, mono, frames, rec.fps, opts);
      } else {
        std::vector<double> half = mono.channel(Channel::mono);
        for (auto& v : half) v *= 0.5;
        pred = WaveformClip::stereo(half, half, mono.sample_rate);
      }
      result.report.per_clip.push_back(measure_clip(rec.clip_id, pred, gt, cfg));
    } catch (const std::exception& e) {
      result.errors.push_back(rec.clip_id + ": " + e.what());
    }
  }
  result.report.aggregate = aggregate_metrics(result.report.per_clip);
  return result;
}

}  // namespace ccs
