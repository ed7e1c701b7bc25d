#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ccstereo/checkpoint.hpp"
#include "ccstereo/config.hpp"
#include "ccstereo/data.hpp"
#include "ccstereo/gradcheck.hpp"
#include "ccstereo/inference.hpp"
#include "ccstereo/losses.hpp"
#include "ccstereo/train.hpp"

namespace fs = std::filesystem;
using Scalar = float;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

std::string zero_pad(int value, int digits) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%0*d", digits, value);
  return buf;
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << content;
  if (!out) throw std::runtime_error("write failed for " + path);
}

// ---------------------------------------------------------------- synth ----

int cmd_synth(const ccs::RunConfig& cfg, const std::string& out, bool force) {
  const fs::path root(out);
  if (fs::exists(root) && !fs::is_empty(root)) {
    if (!force)
      throw std::runtime_error("synth: output directory is not empty (use --force): " + out);
    fs::remove_all(root);
  }
  fs::create_directories(root / "clips");

  const int n = cfg.data.synth_clips;
  const double test_ratio = 1.0 - cfg.data.train_ratio - cfg.data.val_ratio;
  int n_train = static_cast<int>(n * cfg.data.train_ratio);
  const int n_val = static_cast<int>(n * cfg.data.val_ratio);
  const int n_test = static_cast<int>(n * test_ratio);
  n_train += n - (n_train + n_val + n_test);  // remainder goes to train

  ccs::Rng master(cfg.optim.seed);
  const std::pair<std::string, int> splits[] = {{"train", n_train}, {"val", n_val}, {"test", n_test}};
  for (const auto& [split, count] : splits) {
    std::ofstream manifest(root / ("manifest_" + split + ".jsonl"), std::ios::trunc);
    if (!manifest) throw std::runtime_error("synth: cannot write manifest for " + split);
    for (int i = 0; i < count; ++i) {
      ccs::Rng clip_rng = master.stream("scene/" + split, static_cast<uint64_t>(i));
      ccs::SceneSpec spec;
      // Stratified azimuth: one scene per decile, uniform within it.
      spec.azimuth_start = ((i % 10) + clip_rng.uniform()) / 10.0;
      const bool drift = clip_rng.uniform() < 0.3;
      spec.azimuth_end = drift ? clip_rng.uniform() : spec.azimuth_start;
      spec.noise_source = clip_rng.uniform() < 0.25;
      spec.itd = cfg.data.synth_itd;
      spec.duration_s = cfg.data.clip_duration_s;
      spec.fps = cfg.data.fps;
      spec.seed = clip_rng.next_u64();

      const ccs::SyntheticClip clip = ccs::generate_synthetic_clip(spec);
      const std::string id = split + "_" + zero_pad(i, 4);
      const fs::path clip_dir = root / "clips" / id;
      fs::create_directories(clip_dir / "frames");
      ccs::write_wav((clip_dir / "audio.wav").string(), clip.audio);
      for (size_t f = 0; f < clip.frames.size(); ++f)
        ccs::write_png((clip_dir / "frames" / (zero_pad(static_cast<int>(f), 6) + ".png")).string(),
                       clip.frames[f]);

      const nlohmann::json rec = {{"clip_id", id},
                                  {"audio_path", "clips/" + id + "/audio.wav"},
                                  {"frames_dir", "clips/" + id + "/frames"},
                                  {"fps", spec.fps},
                                  {"duration_s", spec.duration_s}};
      manifest << rec.dump() << "\n";
    }
  }
  write_text_file((root / "config.json").string(), cfg.to_json().dump(2) + "\n");
  std::printf("synth: wrote %d/%d/%d clips under %s\n", n_train, n_val, n_test, out.c_str());
  return 0;
}

// ---------------------------------------------------------------- train ----

int cmd_train(const ccs::RunConfig& cfg, const std::string& out, const std::string& resume) {
  ccs::Trainer<Scalar> trainer(cfg, out);
  const ccs::TrainResult result = trainer.run(resume);
  std::printf("train: %lld steps, best val %.6f\n", static_cast<long long>(result.steps),
              result.best_val);
  std::printf("train: best checkpoint %s\n", result.best_checkpoint.c_str());
  std::printf("train: last checkpoint %s\n", result.last_checkpoint.c_str());
  return 0;
}

// ----------------------------------------------------------------- eval ----

void print_aggregate(const ccs::MetricReport& report) {
  const ccs::ClipMetrics& a = report.aggregate;
  std::printf("%-8s %12s\n", "metric", "value");
  std::printf("%-8s %12.6f\n", "stft_d", a.stft_d);
  std::printf("%-8s %12.6f\n", "env_d", a.env_d);
  std::printf("%-8s %12.6f\n", "mag_d", a.mag_d);
  std::printf("%-8s %12.6f\n", "phs_d", a.phs_d);
  std::printf("%-8s %12.6f\n", "wav_d", a.wav_d);
  if (std::isinf(a.snr_db))
    std::printf("%-8s %12s\n", "snr_db", "inf");
  else
    std::printf("%-8s %12.6f\n", "snr_db", a.snr_db);
}

int cmd_eval(const ccs::RunConfig& cfg, const std::string& checkpoint, bool baseline,
             const std::string& out) {
  if (cfg.data.test_manifest.empty())
    throw std::invalid_argument("eval: config has no data.test_manifest");
  const ccs::ClipManifest manifest = ccs::load_manifest(cfg.data.test_manifest);

  ccs::InferOptions opts;
  opts.tdss = cfg.infer.tdss;
  opts.batch_size = cfg.infer.batch_size;

  ccs::EvalResult result;
  std::string label;
  if (baseline) {
    result = ccs::evaluate_split<Scalar>(nullptr, manifest, opts);
    label = "baseline";
  } else {
    if (checkpoint.empty())
      throw std::invalid_argument("eval: need --checkpoint (or --baseline)");
    ccs::Rng init_rng(0);
    ccs::Model<Scalar> model(cfg.model, &init_rng);
    ccs::load_checkpoint<Scalar>(checkpoint, &model, nullptr);
    result = ccs::evaluate_split(&model, manifest, opts);
    label = std::string("model_tdss_") + (opts.tdss ? "on" : "off");
  }

  result.report.config["errors"] = result.errors;
  fs::create_directories(out);
  const std::string stem = (fs::path(out) / ("report_" + label)).string();
  write_text_file(stem + ".json", ccs::report_to_json(result.report).dump(2) + "\n");
  write_text_file(stem + ".csv", ccs::report_to_csv(result.report));

  std::printf("eval (%s): %zu clips scored, %zu skipped\n", label.c_str(),
              result.report.per_clip.size(), result.errors.size());
  for (const auto& e : result.errors) std::fprintf(stderr, "eval: skipped %s\n", e.c_str());
  print_aggregate(result.report);
  std::printf("eval: wrote %s.json\n", stem.c_str());
  return result.errors.empty() ? 0 : kExitData;
}

// ---------------------------------------------------------------- infer ----

// Log-magnitude of the predicted difference spectrogram, mapped to 8-bit via
// 20*log10(|z|/max) clamped to [-80, 0] dB, low frequencies at the bottom.
void write_diff_spectrogram_png(const std::string& path, const ccs::WaveformClip& stereo) {
  const auto& l = stereo.channel(ccs::Channel::left);
  const auto& r = stereo.channel(ccs::Channel::right);
  std::vector<double> diff(l.size());
  for (size_t i = 0; i < diff.size(); ++i) diff[i] = l[i] - r[i];
  const ccs::ComplexSpectrogram spec = ccs::stft(diff, ccs::StftConfig{});

  double peak = 0.0;
  for (const auto& z : spec.bins) peak = std::max(peak, std::abs(z));
  if (peak <= 0.0) peak = 1.0;

  std::vector<uint8_t> pixels(static_cast<size_t>(spec.freq_bins) * spec.frames);
  for (int f = 0; f < spec.freq_bins; ++f) {
    for (int t = 0; t < spec.frames; ++t) {
      const double mag = std::abs(spec.at(f, t)) / peak;
      const double db = std::clamp(20.0 * std::log10(std::max(mag, 1e-9)), -80.0, 0.0);
      const int row = spec.freq_bins - 1 - f;
      pixels[static_cast<size_t>(row) * spec.frames + t] =
          static_cast<uint8_t>(std::lround((db + 80.0) / 80.0 * 255.0));
    }
  }
  ccs::write_png_gray(path, spec.frames, spec.freq_bins, pixels);
}

int cmd_infer(const ccs::RunConfig& cfg, const std::string& checkpoint,
              const std::string& manifest_path, const std::string& wav_path,
              const std::string& frames_dir, const std::string& out, bool spectrograms) {
  if (checkpoint.empty()) throw std::invalid_argument("infer: need --checkpoint");
  ccs::Rng init_rng(0);
  ccs::Model<Scalar> model(cfg.model, &init_rng);
  ccs::load_checkpoint<Scalar>(checkpoint, &model, nullptr);

  std::vector<ccs::ClipRecord> records;
  if (!manifest_path.empty()) {
    records = ccs::load_manifest(manifest_path).records;
  } else if (!wav_path.empty() && !frames_dir.empty()) {
    ccs::ClipRecord rec;
    rec.clip_id = fs::path(wav_path).stem().string();
    rec.audio_path = wav_path;
    rec.frames_dir = frames_dir;
    rec.fps = cfg.data.fps;
    records.push_back(rec);
  } else {
    throw std::invalid_argument("infer: need --manifest or both --wav and --frames");
  }

  ccs::InferOptions opts;
  opts.tdss = cfg.infer.tdss;
  opts.batch_size = cfg.infer.batch_size;
  fs::create_directories(out);

  size_t failures = 0;
  for (const auto& rec : records) {
    try {
      ccs::WaveformClip input = ccs::read_wav(rec.audio_path);
      const ccs::WaveformClip mono =
          input.has(ccs::Channel::mono) ? input : ccs::make_mono(input);
      std::vector<ccs::Image> frames;
      for (const auto& f : ccs::frame_files(rec.frames_dir)) frames.push_back(ccs::read_png(f));

      const ccs::WaveformClip pred = ccs::binauralize_clip(model, mono, frames, rec.fps, opts);
      const std::string stem = (fs::path(out) / rec.clip_id).string();
      ccs::write_wav(stem + "_binaural.wav", pred);
      if (spectrograms) write_diff_spectrogram_png(stem + "_diff.png", pred);
      std::printf("infer: %s -> %s_binaural.wav\n", rec.clip_id.c_str(), stem.c_str());
    } catch (const std::exception& e) {
      ++failures;
      std::fprintf(stderr, "infer: %s failed: %s\n", rec.clip_id.c_str(), e.what());
    }
  }
  return failures == 0 ? 0 : kExitData;
}

// ------------------------------------------------------------ gradcheck ----

// Every primitive and loss is checked on several random shapes; the loop body
// rebuilds fresh inputs per shape so no check shares a graph with another.
int cmd_gradcheck() {
  using ccs::ad::Tensor;
  using namespace ccs::ad;
  ccs::Rng rng(20240901);
  auto randn = [&rng](std::vector<int> shape) {
    std::vector<double> v(ccs::ad::numel(shape));
    for (auto& x : v) x = rng.normal();
    return Tensor<double>::leaf(std::move(shape), std::move(v), true);
  };
  auto randpos = [&rng](std::vector<int> shape) {
    std::vector<double> v(ccs::ad::numel(shape));
    for (auto& x : v) x = 0.3 + rng.uniform();
    return Tensor<double>::leaf(std::move(shape), std::move(v), true);
  };
  auto dim = [&rng](int lo, int hi) { return rng.range_int(lo, hi); };
  auto sum1 = [](Tensor<double> t) { return mean_all(t); };

  struct Check {
    std::string name;
    std::function<Tensor<double>(const std::vector<Tensor<double>>&)> fn;
    std::vector<Tensor<double>> inputs;
    double tol = 1e-3;
  };
  constexpr int kShapeRounds = 5;

  // One generator per primitive, invoked once per shape round.
  struct Generator {
    std::string name;
    std::function<Check()> make;
  };
  std::vector<Generator> gens;

  auto elementwise_pair = [&](const std::string& name, auto op, bool positive_b) {
    gens.push_back({name, [&, name, op, positive_b]() -> Check {
                      std::vector<int> s{dim(1, 3), dim(2, 6), dim(1, 4)};
                      auto b = positive_b ? randpos(s) : randn(s);
                      return {name, [op](const auto& in) { return op(in[0], in[1]); },
                              {randn(s), b}};
                    }});
  };
  elementwise_pair("add", [sum1](const Tensor<double>& a, const Tensor<double>& b) {
    return sum1(add(a, b)); }, false);
  elementwise_pair("mul", [sum1](const Tensor<double>& a, const Tensor<double>& b) {
    return sum1(mul(a, b)); }, false);
  elementwise_pair("div", [sum1](const Tensor<double>& a, const Tensor<double>& b) {
    return sum1(div(a, b)); }, true);

  gens.push_back({"hypot", [&]() -> Check {
                    std::vector<int> s{dim(2, 4), dim(2, 5)};
                    return {"hypot",
                            [sum1](const auto& in) { return sum1(hypot_op(in[0], in[1])); },
                            {randpos(s), randpos(s)}};
                  }});
  gens.push_back({"atan2", [&]() -> Check {
                    std::vector<int> s{dim(2, 4), dim(2, 5)};
                    return {"atan2",
                            [sum1](const auto& in) { return sum1(atan2_op(in[0], in[1])); },
                            {randpos(s), randpos(s)}};
                  }});

  auto unary = [&](const std::string& name, auto op, bool positive) {
    gens.push_back({name, [&, name, op, positive]() -> Check {
                      std::vector<int> s{dim(1, 3), dim(2, 8)};
                      auto x = positive ? randpos(s) : randn(s);
                      return {name, [op](const auto& in) { return op(in[0]); }, {x}};
                    }});
  };
  unary("exp", [sum1](const Tensor<double>& x) { return sum1(exp_op(x)); }, false);
  unary("log", [sum1](const Tensor<double>& x) { return sum1(log_op(x)); }, true);
  unary("sqrt", [sum1](const Tensor<double>& x) { return sum1(sqrt_op(x)); }, true);
  unary("tanh", [sum1](const Tensor<double>& x) { return sum1(tanh_op(x)); }, false);
  unary("sigmoid", [sum1](const Tensor<double>& x) { return sum1(sigmoid(x)); }, false);
  unary("leaky_relu", [sum1](const Tensor<double>& x) { return sum1(leaky_relu(x, 0.2)); }, true);
  unary("relu", [sum1](const Tensor<double>& x) { return sum1(relu(x)); }, true);
  unary("scale", [sum1](const Tensor<double>& x) { return sum1(scale(x, 1.7)); }, false);
  unary("wrap_angle", [sum1](const Tensor<double>& x) { return sum1(wrap_angle_op(x)); }, true);

  gens.push_back({"softmax", [&]() -> Check {
                    std::vector<int> s{dim(2, 4), dim(2, 6)};
                    return {"softmax",
                            [sum1](const auto& in) { return sum1(mul(softmax(in[0], 1), in[1])); },
                            {randn(s), randn(s)}};
                  }});
  gens.push_back({"l2_normalize", [&]() -> Check {
                    std::vector<int> s{dim(2, 4), dim(2, 6)};
                    return {"l2_normalize",
                            [sum1](const auto& in) {
                              return sum1(mul(l2_normalize(in[0], 1), in[1]));
                            },
                            {randn(s), randn(s)}};
                  }});
  gens.push_back({"matmul", [&]() -> Check {
                    const int m = dim(1, 4), k = dim(1, 5), n = dim(1, 4);
                    return {"matmul", [sum1](const auto& in) { return sum1(matmul(in[0], in[1])); },
                            {randn({m, k}), randn({k, n})}};
                  }});
  gens.push_back({"matmul_batched", [&]() -> Check {
                    const int b = dim(1, 3), m = dim(1, 4), k = dim(1, 4), n = dim(1, 3);
                    return {"matmul_batched",
                            [sum1](const auto& in) { return sum1(matmul(in[0], in[1])); },
                            {randn({b, m, k}), randn({b, k, n})}};
                  }});
  gens.push_back({"matmul_shared_rhs", [&]() -> Check {
                    const int b = dim(1, 3), m = dim(1, 4), k = dim(1, 4), n = dim(1, 3);
                    return {"matmul_shared_rhs",
                            [sum1](const auto& in) { return sum1(matmul(in[0], in[1])); },
                            {randn({b, m, k}), randn({k, n})}};
                  }});
  gens.push_back({"add_bias", [&]() -> Check {
                    const int m = dim(2, 4), n = dim(2, 5);
                    return {"add_bias",
                            [sum1](const auto& in) { return sum1(add_bias(in[0], in[1])); },
                            {randn({m, n}), randn({n})}};
                  }});
  gens.push_back({"conv2d", [&]() -> Check {
                    const int n = dim(1, 2), ci = dim(1, 3), co = dim(1, 3);
                    const int h = dim(4, 7), w = dim(4, 7);
                    const int stride = dim(1, 2);
                    return {"conv2d",
                            [sum1, stride](const auto& in) {
                              return sum1(conv2d(in[0], in[1], in[2], stride, 1));
                            },
                            {randn({n, ci, h, w}), randn({co, ci, 3, 3}), randn({co})}};
                  }});
  gens.push_back({"conv2d_transpose", [&]() -> Check {
                    const int n = dim(1, 2), ci = dim(1, 3), co = dim(1, 3);
                    const int h = dim(3, 5), w = dim(3, 5);
                    return {"conv2d_transpose",
                            [sum1](const auto& in) {
                              return sum1(conv2d_transpose(in[0], in[1], 2, 1));
                            },
                            {randn({n, ci, h, w}), randn({ci, co, 3, 3})}};
                  }});
  gens.push_back({"batchnorm_train", [&]() -> Check {
                    const int n = dim(2, 3), c = dim(1, 4);
                    const int h = dim(2, 5), w = dim(2, 5);
                    // Running buffers live outside the graph; shared_ptr keeps
                    // them alive inside the closures.
                    auto mean = std::make_shared<std::vector<double>>(c, 0.0);
                    auto var = std::make_shared<std::vector<double>>(c, 1.0);
                    return {"batchnorm_train",
                            [sum1, mean, var](const auto& in) {
                              return sum1(mul(batchnorm2d(in[0], in[1], in[2], mean.get(),
                                                          var.get(), true, false),
                                              in[3]));
                            },
                            {randn({n, c, h, w}), randpos({c}), randn({c}), randn({n, c, h, w})}};
                  }});
  gens.push_back({"avgpool", [&]() -> Check {
                    const int n = dim(1, 2), c = dim(1, 3), k = dim(1, 3);
                    const int h = k * dim(1, 3), w = k * dim(1, 3);
                    return {"avgpool",
                            [sum1, k](const auto& in) { return sum1(avgpool2d(in[0], k, k)); },
                            {randn({n, c, h, w})}};
                  }});
  gens.push_back({"upsample", [&]() -> Check {
                    const int n = dim(1, 2), c = dim(1, 3), h = dim(2, 4), w = dim(2, 4);
                    return {"upsample",
                            [sum1](const auto& in) {
                              return sum1(mul(upsample_nearest2(in[0]), in[1]));
                            },
                            {randn({n, c, h, w}), randn({n, c, 2 * h, 2 * w})}};
                  }});
  gens.push_back({"reshape_permute", [&]() -> Check {
                    const int a = dim(2, 3), b = dim(2, 4), c = dim(2, 3);
                    return {"reshape_permute",
                            [sum1, a, b, c](const auto& in) {
                              return sum1(mul(permute(reshape(in[0], {a, b, c}), {2, 0, 1}),
                                              in[1]));
                            },
                            {randn({a * b, c}), randn({c, a, b})}};
                  }});
  gens.push_back({"slice_concat", [&]() -> Check {
                    const int m = dim(2, 4), n = dim(3, 6);
                    return {"slice_concat",
                            [sum1, n](const auto& in) {
                              auto head = slice(in[0], 1, 0, 1);
                              auto tail = slice(in[0], 1, 1, n - 1);
                              return sum1(mul(concat<double>({tail, head}, 1), in[1]));
                            },
                            {randn({m, n}), randn({m, n})}};
                  }});
  gens.push_back({"expand_batch", [&]() -> Check {
                    const int n = dim(2, 4), c = dim(2, 4), h = dim(2, 3);
                    return {"expand_batch",
                            [sum1, n](const auto& in) {
                              return sum1(mul(expand_batch(in[0], n), in[1]));
                            },
                            {randn({c, h}), randn({n, c, h})}};
                  }});
  gens.push_back({"sum_axis", [&]() -> Check {
                    const int a = dim(2, 4), b = dim(2, 5), c = dim(2, 3);
                    const int axis = dim(0, 2);
                    return {"sum_axis",
                            [axis](const auto& in) { return mean_all(sum_axis(in[0], axis)); },
                            {randn({a, b, c})}};
                  }});

  // Losses on random grid shapes.
  gens.push_back({"loss_mse", [&]() -> Check {
                    std::vector<int> s{dim(1, 3), 2, dim(2, 5), dim(2, 4)};
                    auto gt = randn(s);
                    return {"loss_mse",
                            [gt](const auto& in) { return ccs::loss_mse(gt, in[0]); },
                            {randn(s)}};
                  }});
  gens.push_back({"loss_apm", [&]() -> Check {
                    std::vector<int> s{dim(1, 3), 2, dim(2, 5), dim(2, 4)};
                    auto gt = randn(s);
                    return {"loss_apm",
                            [gt](const auto& in) { return ccs::loss_apm(gt, in[0]); },
                            {randpos(s)}};
                  }});
  gens.push_back({"loss_phs", [&]() -> Check {
                    std::vector<int> s{dim(1, 3), 2, dim(2, 5), dim(2, 4)};
                    auto gl = randn(s), gr = randn(s);
                    return {"loss_phs",
                            [gl, gr](const auto& in) {
                              return ccs::loss_phs(gl, gr, in[0], in[1]);
                            },
                            {randpos(s), randpos(s)}};
                  }});
  gens.push_back({"loss_scl", [&]() -> Check {
                    const int n = dim(2, 5), d = dim(3, 8), m = dim(1, 5);
                    return {"loss_scl",
                            [](const auto& in) {
                              ccs::ContrastiveBatch<double> cb{in[0], in[1], in[2]};
                              return ccs::loss_scl(cb, ccs::LossConfig{});
                            },
                            {randn({n, d}), randn({n, d}), randn({m, d})}};
                  }});

  bool all_pass = true;
  for (auto& gen : gens) {
    double worst = 0.0;
    bool pass = true;
    std::string detail;
    for (int round = 0; round < kShapeRounds; ++round) {
      Check check = gen.make();
      const GradCheckResult result =
          grad_check(check.fn, check.inputs, 1e-4, check.tol, 60, 7 + round);
      worst = std::max(worst, result.max_rel_err);
      if (!result.pass) {
        pass = false;
        detail = result.detail;
      }
    }
    std::printf("%-18s %s  max rel err %.3e\n", gen.name.c_str(), pass ? "PASS" : "FAIL", worst);
    if (!pass) {
      std::printf("  %s\n", detail.c_str());
      all_pass = false;
    }
  }

  // Full model at miniature dimensions: reconstruction plus contrastive loss,
  // probing a parameter from every module family.
  {
    ccs::ModelConfig mini;
    mini.image_channels = {4, 6};
    mini.audio_channels = {4, 6};
    mini.attention_heads = 2;
    mini.attention_dim = 8;
    mini.avad_hidden = 6;
    mini.freq_bins = 16;
    mini.frames = 8;
    mini.image_height = 32;
    mini.image_width = 64;
    ccs::Rng model_rng(42);
    ccs::Model<double> model(mini, &model_rng);

    const int n = 2;
    auto spec = randn({n, 2, mini.freq_bins, mini.frames});
    auto frames_t = randn({n, 3, mini.image_height, mini.image_width});
    auto frames_prev = randn({n, 3, mini.image_height, mini.image_width});
    auto frames_neg = randn({n, 3, mini.image_height, mini.image_width});
    auto gt_diff = randn({n, 2, mini.freq_bins, mini.frames});
    auto gt_l = randn({n, 2, mini.freq_bins, mini.frames});
    auto gt_r = randn({n, 2, mini.freq_bins, mini.frames});
    ccs::LossConfig loss_cfg;

    auto forward = [&](const std::vector<Tensor<double>>&) {
      auto visual = model.encode_image(frames_t, true, false);
      auto enc = model.encode_audio(spec, true, false);
      auto fused = model.fuse(enc.bottleneck, visual);
      auto mask = model.decode(fused, enc.skips, visual, true, false);
      auto pred_diff = ccs::complex_mask_multiply(mask, spec);
      auto binaural = ccs::recover_binaural(spec, pred_diff);
      auto rec = ccs::loss_rec(gt_diff, pred_diff, gt_l, gt_r, binaural.first, binaural.second,
                               loss_cfg);
      ccs::ContrastiveBatch<double> cb;
      cb.anchors = model.pooled_embedding(fused);
      cb.positives =
          model.pooled_embedding(model.fuse(enc.bottleneck, model.encode_image(frames_prev, true, false)));
      cb.negatives =
          model.pooled_embedding(model.fuse(enc.bottleneck, model.encode_image(frames_neg, true, false)));
      return ccs::total_loss(rec, ccs::loss_scl(cb, loss_cfg), loss_cfg);
    };

    std::vector<Tensor<double>> probes;
    for (const char* name :
         {"image_encoder.stage0.conv.w", "audio_encoder.stage0.conv.w", "attention.wq",
          "decoder.stage0.conv.w", "decoder.stage0.avad.shared.w", "decoder.stage0.avad.alpha.w",
          "decoder.final.w"})
      probes.push_back(model.params().at(name));

    const GradCheckResult result = grad_check(forward, probes, 1e-4, 3e-3, 12, 99);
    std::printf("%-18s %s  max rel err %.3e\n", "model_mini", result.pass ? "PASS" : "FAIL",
                result.max_rel_err);
    if (!result.pass) {
      std::printf("  %s\n", result.detail.c_str());
      all_pass = false;
    }
  }
  return all_pass ? 0 : kExitNumeric;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mono-to-binaural audio pipeline"};
  app.require_subcommand(1);

  std::string config_path, out_dir, checkpoint, manifest_path, wav_path, frames_dir;
  std::string tdss_mode;
  uint64_t seed = 0;
  bool seed_given = false, force = false, baseline = false, spectrograms = false;
  int threads = 1;

  std::vector<CLI::Option*> seed_opts;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON config file");
    seed_opts.push_back(sub->add_option("--seed", seed, "Override optim.seed"));
    sub->add_option("--threads", threads, "Worker cap (single-threaded build accepts 1)")
        ->check(CLI::PositiveNumber);
  };

  CLI::App* synth = app.add_subcommand("synth", "Generate a synthetic binaural dataset");
  add_common(synth);
  synth->add_option("--out", out_dir, "Dataset root")->required();
  synth->add_flag("--force", force, "Replace a non-empty output directory");

  CLI::App* train = app.add_subcommand("train", "Train the model");
  add_common(train);
  train->add_option("--out", out_dir, "Checkpoint and log directory")->required();
  train->add_option("--checkpoint", checkpoint, "Resume from this checkpoint");

  CLI::App* eval = app.add_subcommand("eval", "Score a checkpoint on the test split");
  add_common(eval);
  eval->add_option("--out", out_dir, "Report directory")->required();
  eval->add_option("--checkpoint", checkpoint, "Checkpoint to evaluate");
  eval->add_flag("--baseline", baseline, "Score the mono-mono baseline instead");
  eval->add_option("--tdss", tdss_mode, "on|off")->check(CLI::IsMember({"on", "off"}));

  CLI::App* infer = app.add_subcommand("infer", "Binauralize clips");
  add_common(infer);
  infer->add_option("--out", out_dir, "Output directory")->required();
  infer->add_option("--checkpoint", checkpoint, "Trained checkpoint")->required();
  infer->add_option("--manifest", manifest_path, "Manifest of clips to process");
  infer->add_option("--wav", wav_path, "Single input WAV");
  infer->add_option("--frames", frames_dir, "Frame directory for --wav");
  infer->add_option("--tdss", tdss_mode, "on|off")->check(CLI::IsMember({"on", "off"}));
  infer->add_flag("--spectrograms", spectrograms, "Also write difference-spectrogram images");

  CLI::App* gradcheck = app.add_subcommand("gradcheck", "Run numeric gradient checks");
  (void)gradcheck;

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }

  for (const CLI::Option* opt : seed_opts)
    if (opt->count() > 0) seed_given = true;

  try {
    if (gradcheck->parsed()) return cmd_gradcheck();

    ccs::RunConfig cfg = ccs::RunConfig::load(config_path);
    if (seed_given) cfg.optim.seed = seed;
    if (tdss_mode == "on") cfg.infer.tdss = true;
    if (tdss_mode == "off") cfg.infer.tdss = false;
    if (threads != 1)
      std::fprintf(stderr, "note: this build is single-threaded; --threads ignored\n");

    if (synth->parsed()) return cmd_synth(cfg, out_dir, force);
    if (train->parsed()) return cmd_train(cfg, out_dir, checkpoint);
    if (eval->parsed()) return cmd_eval(cfg, checkpoint, baseline, out_dir);
    if (infer->parsed())
      return cmd_infer(cfg, checkpoint, manifest_path, wav_path, frames_dir, out_dir, spectrograms);
  } catch (const ccs::train_abort& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitNumeric;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitData;
  }
  return kExitUsage;
}
