#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ccstereo/dsp.hpp"

namespace ccs {

// Compensated summation; keeps clip aggregation order-insensitive below 1e-12.
struct KahanSum {
  double sum = 0.0;
  double carry = 0.0;

  void add(double x) {
    const double y = x - carry;
    const double t = sum + y;
    carry = (t - sum) - y;
    sum = t;
  }
};

struct StereoSpectrogram {
  ComplexSpectrogram left;
  ComplexSpectrogram right;
};

// Distances between complex grids are summed over channels and normalized by
// frame count; waveform distances are normalized by sample count. snr_db uses
// the +inf sentinel for a perfect prediction and serializes as null.
double stft_distance(const StereoSpectrogram& pred, const StereoSpectrogram& gt);
double mag_distance(const StereoSpectrogram& pred, const StereoSpectrogram& gt);
double phs_distance(const StereoSpectrogram& pred, const StereoSpectrogram& gt);
double env_distance(const WaveformClip& pred, const WaveformClip& gt);
double wav_distance(const WaveformClip& pred, const WaveformClip& gt);
double snr_db(const WaveformClip& pred, const WaveformClip& gt);

// Principal angle in (-pi, pi].
double wrap_angle(double x);

// Magnitude of the analytic signal, computed with a full-length FFT.
std::vector<double> amplitude_envelope(const std::vector<double>& x);

// Predicts zero difference audio: left = right = mono / 2.
StereoSpectrogram mono_mono_baseline(const ComplexSpectrogram& mono);

struct ClipMetrics {
  std::string clip_id;
  double stft_d = 0.0;
  double env_d = 0.0;
  double mag_d = 0.0;
  double phs_d = 0.0;
  double wav_d = 0.0;
  double snr_db = 0.0;
};

ClipMetrics measure_clip(const std::string& clip_id, const WaveformClip& pred,
                         const WaveformClip& gt, const StftConfig& config);

struct MetricReport {
  nlohmann::json config;
  std::vector<ClipMetrics> per_clip;
  ClipMetrics aggregate;
};

ClipMetrics aggregate_metrics(const std::vector<ClipMetrics>& per_clip);

// Formula strings embedded in every report so the numbers are self-describing.
nlohmann::json metric_definitions();

nlohmann::json report_to_json(const MetricReport& report);
std::string report_to_csv(const MetricReport& report);
MetricReport report_from_json(const nlohmann::json& j);

}  // namespace ccs
