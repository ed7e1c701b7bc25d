#include "ccstereo/inference.hpp"

#include <cmath>
#include <stdexcept>

namespace ccs {

WindowPlan plan_windows(size_t total_samples, int fps, int frame_count) {
  if (total_samples < static_cast<size_t>(kSegmentSamples))
    throw std::invalid_argument("plan_windows: clip shorter than one window");
  if (fps <= 0 || frame_count <= 0) throw std::invalid_argument("plan_windows: need frames");

  WindowPlan plan;
  auto push = [&](int start) {
    WindowEntry w;
    w.start_sample = start;
    w.start_s = start / static_cast<double>(kSampleRate);
    const int idx = static_cast<int>(std::floor((w.start_s + kSegmentSeconds / 2.0) * fps));
    w.frame_index = std::clamp(idx, 0, frame_count - 1);
    w.tdss_region = w.frame_index % 5;
    plan.entries.push_back(w);
  };

  int start = 0;
  while (static_cast<size_t>(start) + kSegmentSamples <= total_samples) {
    push(start);
    start += kHopSamples;
  }
  const size_t covered =
      static_cast<size_t>(plan.entries.back().start_sample) + kSegmentSamples;
  if (covered < total_samples) {
    push(static_cast<int>(total_samples) - kSegmentSamples);
    plan.has_tail = true;
  }
  return plan;
}

namespace {

void check_frame_dims(const Image& frame) {
  if (frame.width != 480 || frame.height != 240)
    throw std::invalid_argument("crop: expected a 480x240 frame");
}

}  // namespace

Image tdss_crop(const Image& frame, int frame_index) {
  check_frame_dims(frame);
  static constexpr int kRow[5] = {0, 0, 16, 16, 8};
  static constexpr int kCol[5] = {0, 32, 0, 32, 16};
  const int region = frame_index % 5;
  return crop(frame, kRow[region], kCol[region], 224, 448);
}

Image center_crop(const Image& frame) {
  check_frame_dims(frame);
  return crop(frame, 8, 16, 224, 448);
}

std::vector<double> overlap_integrate(
    const std::vector<std::pair<int, std::vector<double>>>& windows, size_t total_len) {
  std::vector<double> sums(total_len, 0.0);
  std::vector<uint32_t> counts(total_len, 0);
  for (const auto& [start, values] : windows) {
    if (start < 0 || static_cast<size_t>(start) + values.size() > total_len)
      throw std::invalid_argument("overlap_integrate: window outside clip");
    for (size_t i = 0; i < values.size(); ++i) {
      sums[start + i] += values[i];
      ++counts[start + i];
    }
  }
  for (size_t i = 0; i < total_len; ++i) {
    if (counts[i] == 0) throw std::logic_error("overlap_integrate: uncovered sample");
    sums[i] /= counts[i];
  }
  return sums;
}

}  // namespace ccs
