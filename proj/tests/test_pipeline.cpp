#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <vector>

#include "ccstereo/checkpoint.hpp"
#include "ccstereo/config.hpp"
#include "ccstereo/data.hpp"
#include "ccstereo/inference.hpp"
#include "ccstereo/losses.hpp"
#include "ccstereo/model.hpp"

using namespace ccs;
using ad::Tensor;

namespace {

constexpr double kPi = 3.14159265358979323846;

// (N, 2, F, T) grid with explicit real/imag planes.
Tensor<double> grid(int n, int f, int t, const std::vector<double>& values) {
  return Tensor<double>::leaf({n, 2, f, t}, values);
}

Tensor<double> unit_rows(const std::vector<std::vector<double>>& rows) {
  const int n = static_cast<int>(rows.size());
  const int d = static_cast<int>(rows[0].size());
  std::vector<double> v;
  for (const auto& r : rows) {
    double norm = 0.0;
    for (double x : r) norm += x * x;
    norm = std::sqrt(norm);
    for (double x : r) v.push_back(x / norm);
  }
  return Tensor<double>::leaf({n, d}, std::move(v));
}

double scl_value(double s_pos, double s_neg, double tau) {
  LossConfig cfg;
  cfg.tau = tau;
  ContrastiveBatch<double> cb;
  cb.anchors = unit_rows({{1.0, 0.0}});
  cb.positives = Tensor<double>::leaf({1, 2}, {s_pos, std::sqrt(std::max(0.0, 1.0 - s_pos * s_pos))});
  cb.negatives = Tensor<double>::leaf({1, 2}, {s_neg, std::sqrt(std::max(0.0, 1.0 - s_neg * s_neg))});
  return loss_scl(cb, cfg).item();
}

ModelConfig mini_config() {
  ModelConfig cfg;
  cfg.image_channels = {4, 6};
  cfg.audio_channels = {4, 6};
  cfg.attention_heads = 2;
  cfg.attention_dim = 8;
  cfg.avad_hidden = 6;
  cfg.freq_bins = 16;
  cfg.frames = 8;
  cfg.image_height = 32;
  cfg.image_width = 64;
  return cfg;
}

std::filesystem::path fresh_temp_dir(const char* tag) {
  auto dir = std::filesystem::temp_directory_path() / tag;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("mse loss closed forms") {
  // one bin off by 1 + 1i over four bins
  auto gt = grid(1, 2, 2, std::vector<double>(8, 0.0));
  std::vector<double> pv(8, 0.0);
  pv[0] = 1.0;  // re of bin (0,0)
  pv[4] = 1.0;  // im of bin (0,0)
  auto pred = grid(1, 2, 2, pv);
  CHECK(loss_mse(gt, pred).item() == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(loss_mse(gt, gt).item() == 0.0);
}

TEST_CASE("apm loss closed form") {
  auto gt = grid(1, 1, 1, {0.0, 0.0});
  auto pred = grid(1, 1, 1, {3.0, 4.0});
  CHECK(loss_apm(gt, pred).item() == doctest::Approx(5.0).epsilon(1e-15));
}

TEST_CASE("phase loss masks silence and squares the wrapped offset") {
  // left gt along +1, prediction rotated a quarter turn; right channel silent
  auto gt_l = grid(1, 1, 1, {1.0, 0.0});
  auto pred_l = grid(1, 1, 1, {0.0, 1.0});
  auto gt_r = grid(1, 1, 1, {0.0, 0.0});
  auto pred_r = grid(1, 1, 1, {0.7, -0.3});
  const double got = loss_phs(gt_l, gt_r, pred_l, pred_r).item();
  CHECK(got == doctest::Approx(kPi * kPi / 4.0).epsilon(1e-12));

  // bins below a thousandth of the per-item peak do not count
  auto gt_l2 = grid(1, 1, 2, {1.0, 1e-4, 0.0, 0.0});
  auto pred_l2 = grid(1, 1, 2, {1.0, -1e-4, 0.0, 0.0});
  CHECK(loss_phs(gt_l2, gt_r, pred_l2, pred_r).item() == 0.0);
}

TEST_CASE("rec loss composes its three terms") {
  LossConfig cfg;
  // mse 25 and apm 5 from one bin, phase silent
  auto gt = grid(1, 1, 1, {0.0, 0.0});
  auto pred = grid(1, 1, 1, {3.0, 4.0});
  auto rec = loss_rec(gt, pred, gt, gt, pred, pred, cfg);
  CHECK(rec.item() == doctest::Approx(25.0 + 0.005 * 5.0).epsilon(1e-13));

  // equal diff grids leave only the phase term
  auto gt_l = grid(1, 1, 1, {1.0, 0.0});
  auto pred_l = grid(1, 1, 1, {0.0, 1.0});
  auto zero = grid(1, 1, 1, {0.0, 0.0});
  auto rec2 = loss_rec(gt, gt, gt_l, zero, pred_l, zero, cfg);
  CHECK(rec2.item() == doctest::Approx(kPi * kPi / 4.0).epsilon(1e-12));
}

TEST_CASE("contrastive loss oracles") {
  // s+ = 1, s- = 0 at temperature 0.1
  const double sharp = scl_value(1.0, 0.0, 0.1);
  const double expected = std::log(1.0 + std::exp(-10.0));
  CHECK(std::abs(sharp - expected) < 1e-9);

  // indistinguishable positive and negative
  const double tied = scl_value(1.0, 1.0, 0.1);
  CHECK(std::abs(tied - std::log(2.0)) < 1e-12);

  // pulling the positive closer always helps
  double prev = scl_value(0.0, 0.5, 0.1);
  for (double s : {0.25, 0.5, 0.75, 1.0}) {
    const double cur = scl_value(s, 0.5, 0.1);
    CHECK(cur < prev);
    prev = cur;
  }

  LossConfig bad;
  bad.tau = 0.0;
  ContrastiveBatch<double> cb;
  cb.anchors = unit_rows({{1.0, 0.0}});
  cb.positives = cb.anchors;
  cb.negatives = cb.anchors;
  CHECK_THROWS_AS(loss_scl(cb, bad), std::invalid_argument);

  ContrastiveBatch<double> mismatched = cb;
  mismatched.negatives = Tensor<double>::leaf({1, 3}, {1.0, 0.0, 0.0});
  LossConfig cfg;
  CHECK_THROWS_AS(loss_scl(mismatched, cfg), std::invalid_argument);
}

TEST_CASE("contrastive loss with shared negatives matches a direct evaluation") {
  LossConfig cfg;  // tau 0.1
  ContrastiveBatch<double> cb;
  cb.anchors = unit_rows({{1.0, 0.2, -0.4}, {-0.3, 0.8, 0.1}});
  cb.positives = unit_rows({{0.9, 0.1, -0.2}, {-0.2, 0.7, 0.3}});
  cb.negatives = unit_rows({{0.1, -0.9, 0.2}, {0.5, 0.5, 0.5}, {-1.0, 0.1, 0.0}});

  double expected = 0.0;
  for (int i = 0; i < 2; ++i) {
    double s_pos = 0.0;
    for (int d = 0; d < 3; ++d)
      s_pos += cb.anchors.values()[i * 3 + d] * cb.positives.values()[i * 3 + d];
    double denom = std::exp(s_pos / cfg.tau);
    for (int m = 0; m < 3; ++m) {
      double s_neg = 0.0;
      for (int d = 0; d < 3; ++d)
        s_neg += cb.anchors.values()[i * 3 + d] * cb.negatives.values()[m * 3 + d];
      denom += std::exp(s_neg / cfg.tau);
    }
    expected += -std::log(std::exp(s_pos / cfg.tau) / denom);
  }
  expected /= 2.0;
  CHECK(loss_scl(cb, cfg).item() == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("total loss weighs the contrastive term by lambda") {
  LossConfig cfg;  // lambda 0.1
  auto rec = Tensor<double>::scalar(1.0);
  auto scl = Tensor<double>::scalar(std::log(2.0));
  CHECK(total_loss(rec, scl, cfg).item() ==
        doctest::Approx(1.0 + 0.1 * std::log(2.0)).epsilon(1e-15));
}

TEST_CASE("spatial shuffle permutes cells without losing pixels") {
  Rng rng(31);
  Image img = Image::filled(448, 224, 0);
  for (size_t i = 0; i < img.pixels.size(); ++i)
    img.pixels[i] = static_cast<uint8_t>((i * 131) % 256);

  Image shuffled = spatial_shuffle(img, 14, 28, &rng);
  REQUIRE(shuffled.width == img.width);
  REQUIRE(shuffled.height == img.height);

  auto histogram = [](const Image& im) {
    std::vector<int> h(256, 0);
    for (uint8_t p : im.pixels) ++h[p];
    return h;
  };
  CHECK(histogram(shuffled) == histogram(img));
  CHECK(shuffled.pixels != img.pixels);  // 392 cells, identity is astronomically unlikely

  Rng rng_a(55), rng_b(55);
  CHECK(spatial_shuffle(img, 14, 28, &rng_a).pixels == spatial_shuffle(img, 14, 28, &rng_b).pixels);

  Rng one(1);
  CHECK(spatial_shuffle(img, 1, 1, &one).pixels == img.pixels);
  CHECK_THROWS_AS(spatial_shuffle(img, 3, 28, &one), std::invalid_argument);
}

TEST_CASE("window plan covers ten seconds with a tail") {
  auto plan = plan_windows(160000, 10, 100);
  CHECK(plan.entries.size() == 95);
  CHECK(plan.has_tail);
  CHECK(plan.entries.front().start_sample == 0);
  CHECK(plan.entries.front().frame_index == 3);  // centre at 0.315 s
  CHECK(plan.entries.back().start_sample == 160000 - kSegmentSamples);
  for (size_t i = 0; i + 1 < plan.entries.size() - 1; ++i)
    CHECK(plan.entries[i + 1].start_sample - plan.entries[i].start_sample == kHopSamples);
  for (const auto& w : plan.entries) CHECK(w.tdss_region == w.frame_index % 5);

  // hop 0.1 s advances the paired frame by exactly one at fps 10
  for (size_t i = 0; i + 1 < plan.entries.size() - 1; ++i)
    CHECK(plan.entries[i + 1].frame_index == plan.entries[i].frame_index + 1);
}

TEST_CASE("window plan of a single segment") {
  auto plan = plan_windows(kSegmentSamples, 10, 6);
  CHECK(plan.entries.size() == 1);
  CHECK_FALSE(plan.has_tail);
  CHECK(plan.entries[0].frame_index == 3);
  CHECK_THROWS_AS(plan_windows(kSegmentSamples - 1, 10, 6), std::invalid_argument);
}

TEST_CASE("tdss schedule cycles through the five regions") {
  Image frame = Image::filled(480, 240, 0);
  for (int y = 0; y < 240; ++y)
    for (int x = 0; x < 480; ++x) frame.at(y, x, 0) = static_cast<uint8_t>((y * 7 + x * 3) % 256);

  const int rows[5] = {0, 0, 16, 16, 8};
  const int cols[5] = {0, 32, 0, 32, 16};
  for (int idx = 0; idx < 10; ++idx) {
    Image got = tdss_crop(frame, idx);
    Image expected = crop(frame, rows[idx % 5], cols[idx % 5], 224, 448);
    CHECK(got.pixels == expected.pixels);
  }
  CHECK(center_crop(frame).pixels == crop(frame, 8, 16, 224, 448).pixels);

  Image wrong = Image::filled(100, 100, 0);
  CHECK_THROWS_AS(tdss_crop(wrong, 0), std::invalid_argument);
}

TEST_CASE("overlap integration averages covering windows") {
  std::vector<std::pair<int, std::vector<double>>> windows = {
      {0, {1.0, 1.0, 1.0, 1.0}}, {2, {3.0, 3.0, 3.0, 3.0}}};
  auto out = overlap_integrate(windows, 6);
  CHECK(out == std::vector<double>{1.0, 1.0, 2.0, 2.0, 3.0, 3.0});

  // constant windows integrate exactly, whatever the overlap pattern
  std::vector<std::pair<int, std::vector<double>>> constant = {
      {0, std::vector<double>(7, 0.5)}, {3, std::vector<double>(5, 0.5)},
      {1, std::vector<double>(4, 0.5)}};
  auto flat = overlap_integrate(constant, 8);
  for (double v : flat) CHECK(v == 0.5);

  std::vector<std::pair<int, std::vector<double>>> gapped = {{0, {1.0, 1.0}}, {4, {1.0, 1.0}}};
  CHECK_THROWS_AS(overlap_integrate(gapped, 6), std::logic_error);
  std::vector<std::pair<int, std::vector<double>>> outside = {{5, {1.0, 1.0}}};
  CHECK_THROWS_AS(overlap_integrate(outside, 6), std::invalid_argument);
}

TEST_CASE("synthetic scenes pan with equal power") {
  SceneSpec left_spec;
  left_spec.azimuth_start = left_spec.azimuth_end = 0.1;
  left_spec.duration_s = 1.0;
  left_spec.seed = 5;
  auto left_clip = generate_synthetic_clip(left_spec);

  SceneSpec right_spec = left_spec;
  right_spec.azimuth_start = right_spec.azimuth_end = 0.9;
  auto right_clip = generate_synthetic_clip(right_spec);

  auto energy = [](const std::vector<double>& v) {
    double e = 0.0;
    for (double x : v) e += x * x;
    return e;
  };
  const auto& ll = left_clip.audio.channel(Channel::left);
  const auto& lr = left_clip.audio.channel(Channel::right);
  const auto& rl = right_clip.audio.channel(Channel::left);
  const auto& rr = right_clip.audio.channel(Channel::right);

  CHECK(energy(ll) > 10.0 * energy(lr));   // panned hard left
  CHECK(energy(rr) > 10.0 * energy(rl));   // panned hard right
  // same source, same total power regardless of pan
  CHECK(energy(ll) + energy(lr) ==
        doctest::Approx(energy(rl) + energy(rr)).epsilon(1e-9));

  // frames light up on the source side
  const Image& lf = left_clip.frames[0];
  int bright_cols = 0;
  for (int x = 0; x < 480; ++x)
    if (lf.at(120, x, 0) > 100) ++bright_cols;
  CHECK(bright_cols > 0);
  CHECK(lf.at(120, 48, 0) == 230);   // blob centred at 0.1 * 480
  CHECK(lf.at(120, 400, 0) == 16);   // far side stays background
  CHECK(left_clip.frames.size() == 10);
}

TEST_CASE("synthetic generation is deterministic") {
  SceneSpec spec;
  spec.azimuth_start = 0.2;
  spec.azimuth_end = 0.8;
  spec.duration_s = 0.7;
  spec.seed = 11;
  auto a = generate_synthetic_clip(spec);
  auto b = generate_synthetic_clip(spec);
  CHECK(a.audio.channel(Channel::left) == b.audio.channel(Channel::left));
  CHECK(a.audio.channel(Channel::right) == b.audio.channel(Channel::right));
  REQUIRE(a.frames.size() == b.frames.size());
  for (size_t i = 0; i < a.frames.size(); ++i) CHECK(a.frames[i].pixels == b.frames[i].pixels);

  SceneSpec other = spec;
  other.seed = 12;
  auto c = generate_synthetic_clip(other);
  CHECK(a.audio.channel(Channel::left) != c.audio.channel(Channel::left));
}

TEST_CASE("itd delays the far channel") {
  SceneSpec spec;
  spec.azimuth_start = spec.azimuth_end = 0.25;  // left of centre: right lags
  spec.noise_source = true;
  spec.itd = true;
  spec.duration_s = 1.0;
  spec.seed = 9;
  auto clip = generate_synthetic_clip(spec);
  const auto& l = clip.audio.channel(Channel::left);
  const auto& r = clip.audio.channel(Channel::right);

  auto best_lag = [&](const std::vector<double>& a, const std::vector<double>& b) {
    int best = 0;
    double best_corr = -1e300;
    for (int lag = -20; lag <= 20; ++lag) {
      double corr = 0.0;
      for (size_t n = 100; n + 100 < a.size(); ++n) {
        const long j = static_cast<long>(n) + lag;
        corr += a[n] * b[static_cast<size_t>(j)];
      }
      if (corr > best_corr) {
        best_corr = corr;
        best = lag;
      }
    }
    return best;
  };
  // delay 0.3 ms = 4.8 samples at 16 kHz
  const int lag = best_lag(l, r);
  CHECK(lag >= 4);
  CHECK(lag <= 5);

  SceneSpec no_itd = spec;
  no_itd.itd = false;
  auto aligned = generate_synthetic_clip(no_itd);
  CHECK(best_lag(aligned.audio.channel(Channel::left), aligned.audio.channel(Channel::right)) == 0);
}

TEST_CASE("manifest loading resolves paths and reports errors precisely") {
  namespace fs = std::filesystem;
  auto dir = fresh_temp_dir("ccs_manifest_test");
  auto frames_dir = dir / "clip_frames";
  fs::create_directories(frames_dir);
  for (int i = 0; i < 7; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "frame_%03d.png", i);
    write_png((frames_dir / name).string(), Image::filled(4, 4, static_cast<uint8_t>(i)));
  }
  std::vector<double> tone(static_cast<size_t>(0.7 * kSampleRate), 0.05);
  write_wav((dir / "clip.wav").string(), WaveformClip::stereo(tone, tone));

  {
    std::ofstream out(dir / "good.jsonl");
    out << R"({"clip_id":"a","audio_path":"clip.wav","frames_dir":"clip_frames","fps":10,"duration_s":0.7})"
        << "\n\n";  // blank lines are skipped
  }
  auto manifest = load_manifest((dir / "good.jsonl").string());
  REQUIRE(manifest.records.size() == 1);
  CHECK(manifest.records[0].clip_id == "a");
  CHECK(manifest.records[0].fps == 10);
  CHECK(fs::path(manifest.records[0].audio_path).is_absolute());
  CHECK(frame_files(manifest.records[0].frames_dir).size() == 7);

  {
    std::ofstream out(dir / "bad_json.jsonl");
    out << R"({"clip_id":"a","audio_path":"clip.wav","frames_dir":"clip_frames"})" << "\n";
    out << "{not json\n";
  }
  try {
    load_manifest((dir / "bad_json.jsonl").string());
    FAIL("expected parse error");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }

  {
    std::ofstream out(dir / "missing.jsonl");
    out << R"({"clip_id":"ghost","audio_path":"nope.wav","frames_dir":"clip_frames","fps":10,"duration_s":0.7})"
        << "\n";
  }
  try {
    load_manifest((dir / "missing.jsonl").string());
    FAIL("expected missing-file error");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("ghost") != std::string::npos);
    CHECK(std::string(e.what()).find("nope.wav") != std::string::npos);
  }

  CHECK_THROWS(load_manifest((dir / "does_not_exist.jsonl").string()));
  fs::remove_all(dir);
}

TEST_CASE("training pairs sample segments uniformly with matched gains") {
  namespace fs = std::filesystem;
  auto dir = fresh_temp_dir("ccs_pair_test");
  std::vector<std::string> frame_paths;
  for (int i = 0; i < 16; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "f_%02d.png", i);
    auto p = (dir / name).string();
    write_png(p, Image::filled(4, 4, static_cast<uint8_t>(10 * i)));
    frame_paths.push_back(p);
  }

  const size_t total = 20160;  // 1.26 s: start range [0, 10080]
  Rng gen(41);
  std::vector<double> l(total), r(total);
  for (size_t i = 0; i < total; ++i) {
    l[i] = 0.3 * std::sin(2.0 * kPi * 220.0 * i / kSampleRate) + 0.05 * gen.normal();
    r[i] = 0.2 * std::sin(2.0 * kPi * 330.0 * i / kSampleRate) + 0.05 * gen.normal();
  }
  auto stereo = WaveformClip::stereo(l, r);

  Rng rng(42);
  std::vector<int> buckets(4, 0);
  for (int round = 0; round < 10000; ++round) {
    Rng probe(rng.next_u64());
    TrainingPair pair = sample_training_pair(stereo, frame_paths, 10, &probe);
    REQUIRE(pair.start_sample >= 0);
    REQUIRE(pair.start_sample <= static_cast<int>(total) - kSegmentSamples);
    ++buckets[static_cast<size_t>(pair.start_sample) * 4 / 10081];
  }
  for (int count : buckets) {
    CHECK(count > 2200);
    CHECK(count < 2800);
  }

  Rng one(43);
  TrainingPair pair = sample_training_pair(stereo, frame_paths, 10, &one);
  CHECK(rms(pair.mono) == doctest::Approx(0.1).epsilon(1e-9));
  for (int i = 0; i < kSegmentSamples; ++i)
    CHECK(pair.mono[i] == doctest::Approx(pair.left[i] + pair.right[i]).epsilon(1e-12));

  const double center_s = pair.start_sample / 16000.0 + 0.315;
  const int expected_idx = std::clamp(static_cast<int>(std::floor(center_s * 10)), 0, 15);
  CHECK(pair.frame_index == expected_idx);
  CHECK(pair.frame_t.pixels[0] == 10 * expected_idx);
  const int prev = expected_idx > 0 ? expected_idx - 1 : expected_idx + 1;
  CHECK(pair.frame_prev.pixels[0] == 10 * prev);

  auto silent = WaveformClip::stereo(std::vector<double>(total, 0.0),
                                     std::vector<double>(total, 0.0));
  Rng two(44);
  CHECK_THROWS_AS(sample_training_pair(silent, frame_paths, 10, &two), silent_input_error);
  fs::remove_all(dir);
}

TEST_CASE("train augmentation yields the model view") {
  Rng rng(45);
  Image frame = Image::filled(480, 240, 90);
  Image out = augment_train(frame, &rng);
  CHECK(out.width == 448);
  CHECK(out.height == 224);

  Rng a(7), b(7);
  CHECK(augment_train(frame, &a).pixels == augment_train(frame, &b).pixels);

  // odd sizes go through the resize path and still produce the crop size
  Image odd = Image::filled(123, 77, 90);
  Image out2 = augment_train(odd, &rng);
  CHECK(out2.width == 448);
  CHECK(out2.height == 224);
}

TEST_CASE("spectrogram packing drops the nyquist row and round trips") {
  StftConfig cfg;
  Rng rng(46);
  std::vector<double> x(4000);
  for (auto& v : x) v = rng.uniform(-0.5, 0.5);
  auto spec = stft(x, cfg);
  REQUIRE(spec.freq_bins == 257);

  auto packed = pack_spectrograms<double>({&spec, &spec}, 256);
  CHECK(packed.shape() == std::vector<int>{2, 2, 256, spec.frames});
  // channel 0 real, channel 1 imaginary
  const size_t plane = static_cast<size_t>(256) * spec.frames;
  for (int f = 0; f < 4; ++f)
    for (int t = 0; t < spec.frames; ++t) {
      const size_t idx = static_cast<size_t>(f) * spec.frames + t;
      CHECK(packed.values()[idx] == spec.at(f, t).real());
      CHECK(packed.values()[plane + idx] == spec.at(f, t).imag());
    }

  auto back = unpack_spectrogram(packed, 1, 257, cfg);
  REQUIRE(back.freq_bins == 257);
  REQUIRE(back.frames == spec.frames);
  for (int f = 0; f < 256; ++f)
    for (int t = 0; t < spec.frames; ++t) CHECK(back.at(f, t) == spec.at(f, t));
  for (int t = 0; t < spec.frames; ++t) CHECK(back.at(256, t) == std::complex<double>(0.0, 0.0));
}

TEST_CASE("frame stacking normalizes pixels") {
  Image img = Image::filled(2, 2, 0);
  img.at(0, 0, 0) = 255;
  img.at(0, 0, 1) = 127;
  auto t = stack_frames<double>({&img});
  CHECK(t.shape() == std::vector<int>{1, 3, 2, 2});
  CHECK(t.values()[0] == doctest::Approx((1.0 - 0.5) / 0.25));
  CHECK(t.values()[4] == doctest::Approx((127.0 / 255.0 - 0.5) / 0.25));
  CHECK(t.values()[8] == doctest::Approx(-2.0));
}

TEST_CASE("run config round trips and rejects unknown keys") {
  RunConfig cfg;
  cfg.optim.seed = 99;
  cfg.data.synth_clips = 12;
  auto back = RunConfig::from_json(cfg.to_json());
  CHECK(back.to_json() == cfg.to_json());

  auto j = cfg.to_json();
  j["optim"]["learning_rate"] = 0.1;
  CHECK_THROWS_AS(RunConfig::from_json(j), std::invalid_argument);

  auto j2 = cfg.to_json();
  j2["extra_section"] = nlohmann::json::object();
  CHECK_THROWS_AS(RunConfig::from_json(j2), std::invalid_argument);
}

TEST_CASE("run config validation") {
  RunConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.optim.batch_size = 1;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = RunConfig{};
  cfg.data.train_ratio = 0.9;
  cfg.data.val_ratio = 0.2;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = RunConfig{};
  cfg.optim.shuffle_rows = 13;  // does not divide 224
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = RunConfig{};
  cfg.data.clip_duration_s = 0.5;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("environment variables override config values by type") {
  RunConfig cfg;
  setenv("CCS_OPTIM_SEED", "123", 1);
  setenv("CCS_INFER_TDSS", "false", 1);
  setenv("CCS_LOSS_LAMBDA", "0.25", 1);
  setenv("CCS_INFER_OUT_DIR", "elsewhere", 1);
  auto merged = apply_env_overrides(cfg.to_json());
  unsetenv("CCS_OPTIM_SEED");
  unsetenv("CCS_INFER_TDSS");
  unsetenv("CCS_LOSS_LAMBDA");
  unsetenv("CCS_INFER_OUT_DIR");

  auto back = RunConfig::from_json(merged);
  CHECK(back.optim.seed == 123);
  CHECK(back.infer.tdss == false);
  CHECK(back.loss.lambda == doctest::Approx(0.25));
  CHECK(back.infer.out_dir == "elsewhere");

  setenv("CCS_OPTIM_SEED", "not_a_number", 1);
  CHECK_THROWS(apply_env_overrides(cfg.to_json()));
  unsetenv("CCS_OPTIM_SEED");
}

TEST_CASE("checkpoints round trip through float32 storage deterministically") {
  namespace fs = std::filesystem;
  auto dir = fresh_temp_dir("ccs_ckpt_test");
  const auto path = (dir / "model.ckpt").string();

  auto make_optimizer = [](Model<double>& m) {
    std::vector<ad::AdamGroup<double>> groups(1);
    for (auto& [name, t] : m.params().entries()) groups[0].params.push_back(t);
    groups[0].lr = 1e-3;
    return ad::Adam<double>(groups);
  };
  auto fake_grads = [](Model<double>& m) {
    Rng g(777);  // identical pseudo-gradients for every model
    for (auto& [name, t] : m.params().entries()) {
      auto& grad = t.grad();
      for (auto& v : grad) v = g.normal();
    }
  };

  Rng rng_a(51);
  Model<double> a(mini_config(), &rng_a);
  auto opt_a = make_optimizer(a);
  fake_grads(a);
  opt_a.step();  // non-trivial moments

  CheckpointMeta meta;
  meta.step = 17;
  meta.epoch = 2;
  meta.best_val = 0.125;
  save_checkpoint(path, a, &opt_a, meta);

  // loaded values are the float32 roundings of the saved state
  Rng rng_b(99);
  Model<double> b(mini_config(), &rng_b);
  auto opt_b = make_optimizer(b);
  auto loaded = load_checkpoint(path, &b, &opt_b);
  CHECK(loaded.step == 17);
  CHECK(loaded.epoch == 2);
  CHECK(loaded.best_val == 0.125);
  CHECK(opt_b.step_count() == 17);  // bias correction resumes from the recorded step

  const auto& ea = a.params().entries();
  const auto& eb = b.params().entries();
  REQUIRE(ea.size() == eb.size());
  for (size_t i = 0; i < ea.size(); ++i)
    for (size_t k = 0; k < ea[i].second.size(); ++k)
      CHECK(eb[i].second.values()[k] ==
            static_cast<double>(static_cast<float>(ea[i].second.values()[k])));

  // two loads of the same file agree bitwise and stay in lockstep
  Rng rng_c(7);
  Model<double> c(mini_config(), &rng_c);
  auto opt_c = make_optimizer(c);
  load_checkpoint(path, &c, &opt_c);

  auto models_bitwise_equal = [](const Model<double>& x, const Model<double>& y) {
    const auto& ex = x.params().entries();
    const auto& ey = y.params().entries();
    for (size_t i = 0; i < ex.size(); ++i)
      if (std::memcmp(ex[i].second.values().data(), ey[i].second.values().data(),
                      ex[i].second.size() * sizeof(double)) != 0)
        return false;
    for (size_t i = 0; i < x.params().buffer_count(); ++i)
      if (x.params().buffer(i) != y.params().buffer(i)) return false;
    return true;
  };
  CHECK(models_bitwise_equal(b, c));

  fake_grads(b);
  fake_grads(c);
  opt_b.step();
  opt_c.step();
  CHECK(models_bitwise_equal(b, c));

  // weights-only load ignores the stored moments
  Rng rng_w(8);
  Model<double> w(mini_config(), &rng_w);
  auto meta_w = load_checkpoint<double>(path, &w, nullptr);
  CHECK(meta_w.step == 17);
  CHECK(models_bitwise_equal(w, b) == false);  // b already stepped past the file

  // a different architecture must not load
  ModelConfig other = mini_config();
  other.frames = 16;
  Rng rng_d(9);
  Model<double> d(other, &rng_d);
  CHECK_THROWS_AS(load_checkpoint<double>(path, &d, nullptr), std::runtime_error);

  fs::remove_all(dir);
}
