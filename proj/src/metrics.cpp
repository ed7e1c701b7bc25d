#include "ccstereo/metrics.hpp"

#include <cmath>
#include <complex>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "ccstereo/fft.hpp"

namespace ccs {

namespace {

constexpr double kPi = 3.14159265358979323846;

void require_same_shape(const StereoSpectrogram& pred, const StereoSpectrogram& gt) {
  if (!pred.left.same_shape(gt.left) || !pred.right.same_shape(gt.right) ||
      !pred.left.same_shape(pred.right))
    throw std::invalid_argument("metrics: spectrogram shape mismatch");
}

void require_same_length(const WaveformClip& pred, const WaveformClip& gt) {
  if (!pred.is_stereo() || !gt.is_stereo())
    throw std::invalid_argument("metrics: waveform metrics need stereo clips");
  if (pred.length() != gt.length())
    throw std::invalid_argument("metrics: waveform length mismatch");
}

double frobenius(const ComplexSpectrogram& a, const ComplexSpectrogram& b) {
  KahanSum acc;
  for (size_t i = 0; i < a.bins.size(); ++i) acc.add(std::norm(a.bins[i] - b.bins[i]));
  return std::sqrt(acc.sum);
}

double magnitude_frobenius(const ComplexSpectrogram& a, const ComplexSpectrogram& b) {
  KahanSum acc;
  for (size_t i = 0; i < a.bins.size(); ++i) {
    const double d = std::abs(a.bins[i]) - std::abs(b.bins[i]);
    acc.add(d * d);
  }
  return std::sqrt(acc.sum);
}

double euclidean(const std::vector<double>& a, const std::vector<double>& b) {
  KahanSum acc;
  for (size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc.add(d * d);
  }
  return std::sqrt(acc.sum);
}

}  // namespace

double wrap_angle(double x) {
  double w = std::remainder(x, 2.0 * kPi);
  if (w <= -kPi) w = kPi;
  return w;
}

double stft_distance(const StereoSpectrogram& pred, const StereoSpectrogram& gt) {
  require_same_shape(pred, gt);
  const double d = frobenius(pred.left, gt.left) + frobenius(pred.right, gt.right);
  return d / static_cast<double>(gt.left.frames);
}

double mag_distance(const StereoSpectrogram& pred, const StereoSpectrogram& gt) {
  require_same_shape(pred, gt);
  const double d = magnitude_frobenius(pred.left, gt.left) + magnitude_frobenius(pred.right, gt.right);
  return d / static_cast<double>(gt.left.frames);
}

double phs_distance(const StereoSpectrogram& pred, const StereoSpectrogram& gt) {
  require_same_shape(pred, gt);
  KahanSum acc;
  for (size_t i = 0; i < gt.left.bins.size(); ++i) {
    const std::complex<double> dp = pred.left.bins[i] - pred.right.bins[i];
    const std::complex<double> dg = gt.left.bins[i] - gt.right.bins[i];
    acc.add(std::abs(wrap_angle(std::arg(dp) - std::arg(dg))));
  }
  return acc.sum / static_cast<double>(gt.left.bins.size());
}

std::vector<double> amplitude_envelope(const std::vector<double>& x) {
  const size_t n = x.size();
  if (n == 0) return {};
  std::vector<std::complex<double>> spec(n);
  for (size_t i = 0; i < n; ++i) spec[i] = x[i];
  fft_any(&spec, false);
  // Analytic signal: keep DC (and Nyquist when n is even), double the positive
  // frequencies, zero the negative half.
  const size_t last_positive = (n % 2 == 0) ? n / 2 - 1 : (n - 1) / 2;
  for (size_t k = 1; k <= last_positive; ++k) spec[k] *= 2.0;
  for (size_t k = n / 2 + 1; k < n; ++k) spec[k] = 0.0;
  fft_any(&spec, true);
  std::vector<double> env(n);
  for (size_t i = 0; i < n; ++i) env[i] = std::abs(spec[i]);
  return env;
}

double env_distance(const WaveformClip& pred, const WaveformClip& gt) {
  require_same_length(pred, gt);
  const double d = euclidean(amplitude_envelope(*pred.left), amplitude_envelope(*gt.left)) +
                   euclidean(amplitude_envelope(*pred.right), amplitude_envelope(*gt.right));
  return d / static_cast<double>(gt.length());
}

double wav_distance(const WaveformClip& pred, const WaveformClip& gt) {
  require_same_length(pred, gt);
  KahanSum acc;
  for (size_t i = 0; i < gt.length(); ++i) {
    const double dl = (*pred.left)[i] - (*gt.left)[i];
    const double dr = (*pred.right)[i] - (*gt.right)[i];
    acc.add(dl * dl + dr * dr);
  }
  return 1e3 * std::sqrt(acc.sum) / static_cast<double>(gt.length());
}

double snr_db(const WaveformClip& pred, const WaveformClip& gt) {
  require_same_length(pred, gt);
  KahanSum signal, noise;
  for (size_t i = 0; i < gt.length(); ++i) {
    const double gl = (*gt.left)[i];
    const double gr = (*gt.right)[i];
    signal.add(gl * gl + gr * gr);
    const double dl = (*pred.left)[i] - gl;
    const double dr = (*pred.right)[i] - gr;
    noise.add(dl * dl + dr * dr);
  }
  if (signal.sum <= 0.0) throw std::invalid_argument("snr: silent ground truth");
  if (noise.sum == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(signal.sum / noise.sum);
}

StereoSpectrogram mono_mono_baseline(const ComplexSpectrogram& mono) {
  ComplexSpectrogram zero = ComplexSpectrogram::zeros(mono.freq_bins, mono.frames, mono.config);
  auto [left, right] = recover_channels(mono, zero);
  return {std::move(left), std::move(right)};
}

ClipMetrics measure_clip(const std::string& clip_id, const WaveformClip& pred,
                         const WaveformClip& gt, const StftConfig& config) {
  require_same_length(pred, gt);
  StereoSpectrogram ps{stft(*pred.left, config), stft(*pred.right, config)};
  StereoSpectrogram gs{stft(*gt.left, config), stft(*gt.right, config)};
  ClipMetrics m;
  m.clip_id = clip_id;
  m.stft_d = stft_distance(ps, gs);
  m.mag_d = mag_distance(ps, gs);
  m.phs_d = phs_distance(ps, gs);
  m.env_d = env_distance(pred, gt);
  m.wav_d = wav_distance(pred, gt);
  m.snr_db = snr_db(pred, gt);
  return m;
}

ClipMetrics aggregate_metrics(const std::vector<ClipMetrics>& per_clip) {
  if (per_clip.empty()) throw std::invalid_argument("aggregate_metrics: no clips");
  KahanSum stft_s, env_s, mag_s, phs_s, wav_s, snr_s;
  for (const auto& m : per_clip) {
    stft_s.add(m.stft_d);
    env_s.add(m.env_d);
    mag_s.add(m.mag_d);
    phs_s.add(m.phs_d);
    wav_s.add(m.wav_d);
    snr_s.add(m.snr_db);
  }
  const double n = static_cast<double>(per_clip.size());
  ClipMetrics agg;
  agg.clip_id = "aggregate";
  agg.stft_d = stft_s.sum / n;
  agg.env_d = env_s.sum / n;
  agg.mag_d = mag_s.sum / n;
  agg.phs_d = phs_s.sum / n;
  agg.wav_d = wav_s.sum / n;
  agg.snr_db = std::isfinite(snr_s.sum) ? snr_s.sum / n : snr_s.sum;
  return agg;
}

nlohmann::json metric_definitions() {
  return {
      {"stft_d", "sum over channels of ||pred - gt||_F on complex STFT grids, divided by frame count"},
      {"mag_d", "sum over channels of ||(|pred| - |gt|)||_F on STFT magnitude grids, divided by frame count"},
      {"phs_d", "mean over bins of |wrapped angle(pred_diff) - angle(gt_diff)|, diff = left - right spectrogram"},
      {"env_d", "sum over channels of ||env(pred) - env(gt)||_2, env = |analytic signal|, divided by sample count"},
      {"wav_d", "1e3 * joint ||pred - gt||_2 over both channels, divided by sample count"},
      {"snr_db", "10 log10(sum gt^2 / sum (gt - pred)^2) over both channels; null = perfect prediction"},
  };
}

namespace {

nlohmann::json metric_values_json(const ClipMetrics& m) {
  nlohmann::json j{{"stft_d", m.stft_d}, {"env_d", m.env_d},   {"mag_d", m.mag_d},
                   {"phs_d", m.phs_d},   {"wav_d", m.wav_d}};
  if (std::isfinite(m.snr_db))
    j["snr_db"] = m.snr_db;
  else
    j["snr_db"] = nullptr;
  return j;
}

ClipMetrics metric_values_from_json(const std::string& id, const nlohmann::json& j) {
  ClipMetrics m;
  m.clip_id = id;
  m.stft_d = j.at("stft_d").get<double>();
  m.env_d = j.at("env_d").get<double>();
  m.mag_d = j.at("mag_d").get<double>();
  m.phs_d = j.at("phs_d").get<double>();
  m.wav_d = j.at("wav_d").get<double>();
  m.snr_db = j.at("snr_db").is_null() ? std::numeric_limits<double>::infinity()
                                      : j.at("snr_db").get<double>();
  return m;
}

std::string csv_number(double v) {
  if (!std::isfinite(v)) return "";
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

nlohmann::json report_to_json(const MetricReport& report) {
  nlohmann::json per_clip = nlohmann::json::array();
  for (const auto& m : report.per_clip) {
    nlohmann::json row = metric_values_json(m);
    row["clip_id"] = m.clip_id;
    per_clip.push_back(std::move(row));
  }
  return {{"config", report.config},
          {"per_clip", std::move(per_clip)},
          {"aggregate", metric_values_json(report.aggregate)}};
}

MetricReport report_from_json(const nlohmann::json& j) {
  MetricReport report;
  report.config = j.at("config");
  for (const auto& row : j.at("per_clip"))
    report.per_clip.push_back(metric_values_from_json(row.at("clip_id").get<std::string>(), row));
  report.aggregate = metric_values_from_json("aggregate", j.at("aggregate"));
  return report;
}

std::string report_to_csv(const MetricReport& report) {
  std::ostringstream os;
  os << "clip_id,stft_d,env_d,mag_d,phs_d,wav_d,snr_db\n";
  auto row = [&os](const ClipMetrics& m) {
    os << m.clip_id << ',' << csv_number(m.stft_d) << ',' << csv_number(m.env_d) << ','
       << csv_number(m.mag_d) << ',' << csv_number(m.phs_d) << ',' << csv_number(m.wav_d) << ','
       << csv_number(m.snr_db) << '\n';
  };
  for (const auto& m : report.per_clip) row(m);
  row(report.aggregate);
  return os.str();
}

}  // namespace ccs
