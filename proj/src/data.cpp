#include "ccstereo/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace ccs {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kSourceRms = 0.15;
constexpr double kMaxItdSeconds = 0.6e-3;

struct SineComponent {
  double freq;
  double phase;
};

double lerp_azimuth(const SceneSpec& spec, double t) {
  const double u = spec.duration_s > 0.0 ? t / spec.duration_s : 0.0;
  const double x = spec.azimuth_start + (spec.azimuth_end - spec.azimuth_start) * u;
  return std::clamp(x, 0.0, 1.0);
}

}  // namespace

SyntheticClip generate_synthetic_clip(const SceneSpec& spec) {
  if (spec.duration_s <= 0.0 || spec.fps <= 0) throw std::invalid_argument("scene: empty clip");
  Rng rng(spec.seed);

  const int components = spec.noise_source ? 64 : 2 + static_cast<int>(rng.below(4));
  std::vector<SineComponent> parts(components);
  for (auto& p : parts) {
    p.freq = rng.uniform(200.0, 4000.0);
    p.phase = rng.uniform(0.0, 2.0 * kPi);
  }
  auto source = [&parts](double t) {
    double s = 0.0;
    for (const auto& p : parts) s += std::sin(2.0 * kPi * p.freq * t + p.phase);
    return s;
  };

  const size_t samples = static_cast<size_t>(std::llround(spec.duration_s * kSampleRate));
  double energy = 0.0;
  for (size_t n = 0; n < samples; ++n) {
    const double v = source(static_cast<double>(n) / kSampleRate);
    energy += v * v;
  }
  const double raw_rms = std::sqrt(energy / static_cast<double>(samples));
  const double amp = raw_rms > 1e-12 ? kSourceRms / raw_rms : 0.0;

  std::vector<double> left(samples), right(samples);
  for (size_t n = 0; n < samples; ++n) {
    const double t = static_cast<double>(n) / kSampleRate;
    const double x = lerp_azimuth(spec, t);
    const double gl = std::cos(x * kPi / 2.0);
    const double gr = std::sin(x * kPi / 2.0);
    if (spec.itd) {
      // The channel away from the source lags by up to 0.6 ms; the lag
      // vanishes at centre so drifting scenes stay continuous.
      const double delay = kMaxItdSeconds * std::abs(2.0 * x - 1.0);
      const double near_t = t;
      const double far_t = t - delay;
      if (x < 0.5) {
        left[n] = gl * amp * source(near_t);
        right[n] = gr * amp * source(far_t);
      } else {
        left[n] = gl * amp * source(far_t);
        right[n] = gr * amp * source(near_t);
      }
    } else {
      const double s = amp * source(t);
      left[n] = gl * s;
      right[n] = gr * s;
    }
  }

  SyntheticClip clip;
  clip.audio = WaveformClip::stereo(std::move(left), std::move(right));
  clip.fps = spec.fps;
  const int frame_count = static_cast<int>(std::llround(spec.duration_s * spec.fps));
  clip.frames.reserve(frame_count);
  for (int i = 0; i < frame_count; ++i) {
    const double t = (i + 0.5) / spec.fps;
    const double x = lerp_azimuth(spec, t);
    Image frame = Image::filled(480, 240, 16);
    const int cx = static_cast<int>(std::lround(x * 480.0));
    const int top = 100, bottom = 140;
    const int lo = std::max(0, cx - 20);
    const int hi = std::min(480, cx + 20);
    for (int y = top; y < bottom; ++y)
      for (int col = lo; col < hi; ++col)
        for (int c = 0; c < 3; ++c) frame.at(y, col, c) = 230;
    clip.frames.push_back(std::move(frame));
  }
  return clip;
}

ClipManifest load_manifest(const std::string& path) {
  namespace fs = std::filesystem;
  std::ifstream in(path);
  if (!in) throw std::runtime_error("manifest: cannot open " + path);
  const fs::path base = fs::absolute(fs::path(path)).parent_path();

  ClipManifest manifest;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const std::exception& e) {
      throw std::runtime_error("manifest " + path + " line " + std::to_string(line_no) +
                               ": parse error: " + e.what());
    }
    auto require = [&](const char* key) {
      if (!j.contains(key) || !j[key].is_string())
        throw std::runtime_error("manifest " + path + " line " + std::to_string(line_no) +
                                 ": missing field \"" + key + "\"");
      return j[key].get<std::string>();
    };
    ClipRecord rec;
    rec.clip_id = require("clip_id");
    rec.audio_path = (base / require("audio_path")).lexically_normal().string();
    rec.frames_dir = (base / require("frames_dir")).lexically_normal().string();
    if (j.contains("fps")) rec.fps = j["fps"].get<int>();
    if (j.contains("duration_s")) rec.duration_s = j["duration_s"].get<double>();
    manifest.records.push_back(std::move(rec));
  }

  if (manifest.records.empty()) {
    std::fprintf(stderr, "warning: manifest %s is empty\n", path.c_str());
    return manifest;
  }

  std::vector<std::string> missing;
  for (const auto& rec : manifest.records) {
    if (!fs::is_regular_file(rec.audio_path))
      missing.push_back(rec.clip_id + ": missing audio " + rec.audio_path);
    if (!fs::is_directory(rec.frames_dir)) {
      missing.push_back(rec.clip_id + ": missing frames dir " + rec.frames_dir);
      continue;
    }
    const auto frames = frame_files(rec.frames_dir);
    const long expected = std::lround(rec.duration_s * rec.fps);
    if (std::llabs(static_cast<long long>(frames.size()) - expected) > 1)
      missing.push_back(rec.clip_id + ": expected about " + std::to_string(expected) +
                        " frames, found " + std::to_string(frames.size()));
  }
  if (!missing.empty()) {
    std::string msg = "manifest " + path + " validation failed:";
    for (const auto& m : missing) msg += "\n  " + m;
    throw std::runtime_error(msg);
  }
  return manifest;
}

std::vector<std::string> frame_files(const std::string& frames_dir) {
  namespace fs = std::filesystem;
  std::vector<std::string> files;
  for (const auto& entry : fs::directory_iterator(frames_dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".png")
      files.push_back(entry.path().string());
  }
  std::sort(files.begin(), files.end());
  return files;
}

TrainingPair sample_training_pair(const WaveformClip& stereo,
                                  const std::vector<std::string>& frames, int fps, Rng* rng) {
  if (!stereo.is_stereo()) throw std::invalid_argument("sample_training_pair: need stereo audio");
  const size_t length = stereo.length();
  if (length < static_cast<size_t>(kSegmentSamples))
    throw std::invalid_argument("sample_training_pair: clip shorter than segment");
  if (frames.size() < 2)
    throw std::invalid_argument("sample_training_pair: need at least two frames");

  TrainingPair pair;
  pair.start_sample = static_cast<int>(rng->below(length - kSegmentSamples + 1));

  const double center_s = pair.start_sample / static_cast<double>(kSampleRate) + kSegmentSeconds / 2.0;
  int idx = static_cast<int>(std::floor(center_s * fps));
  idx = std::clamp(idx, 0, static_cast<int>(frames.size()) - 1);
  pair.frame_index = idx;
  const int prev = idx > 0 ? idx - 1 : idx + 1;

  const auto& l = stereo.channel(Channel::left);
  const auto& r = stereo.channel(Channel::right);
  pair.left.assign(l.begin() + pair.start_sample, l.begin() + pair.start_sample + kSegmentSamples);
  pair.right.assign(r.begin() + pair.start_sample, r.begin() + pair.start_sample + kSegmentSamples);
  pair.mono.resize(kSegmentSamples);
  for (int i = 0; i < kSegmentSamples; ++i) pair.mono[i] = pair.left[i] + pair.right[i];

  const double mix_rms = rms(pair.mono);
  if (mix_rms < 1e-8) throw silent_input_error("sample_training_pair: silent segment");
  const double gain = kDefaultTargetRms / mix_rms;
  for (int i = 0; i < kSegmentSamples; ++i) {
    pair.mono[i] *= gain;
    pair.left[i] *= gain;
    pair.right[i] *= gain;
  }

  pair.frame_t = read_png(frames[idx]);
  pair.frame_prev = read_png(frames[prev]);
  return pair;
}

Image augment_train(const Image& frame, Rng* rng) {
  const Image* src = &frame;
  Image resized;
  if (frame.width != 480 || frame.height != 240) {
    resized = resize_bilinear(frame, 480, 240);
    src = &resized;
  }
  const int row = static_cast<int>(rng->below(17));
  const int col = static_cast<int>(rng->below(33));
  Image cropped = crop(*src, row, col, 224, 448);
  return apply_jitter(cropped, sample_jitter(rng));
}

}  // namespace ccs
