// End-to-end acceptance suite. Each criterion prints exactly one line,
// "criterion N: PASS ..." or "criterion N: FAIL ...", and the process exits
// non-zero if any selected criterion fails. Criteria 1 and 6-8 shell out to
// the ccstereo binary named by CCSTEREO_BIN; the rest run in-process.
#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ccstereo/data.hpp"
#include "ccstereo/dsp.hpp"
#include "ccstereo/image.hpp"
#include "ccstereo/inference.hpp"
#include "ccstereo/losses.hpp"
#include "ccstereo/model.hpp"
#include "ccstereo/rng.hpp"

namespace fs = std::filesystem;
using namespace ccs;

namespace {

struct Timer {
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }
};

std::string g_bin;
fs::path g_work;

bool report(int criterion, bool pass, const std::string& detail) {
  std::printf("criterion %d: %s  %s\n", criterion, pass ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
  return pass;
}

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = g_bin + " " + args + " > " + log.string() + " 2>&1";
  const int rc = std::system(cmd.c_str());
  if (rc == -1) return -1;
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : 128;
}

std::string fmt(const char* pattern, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, pattern);
  std::vsnprintf(buf, sizeof buf, pattern, ap);
  va_end(ap);
  return buf;
}

nlohmann::json load_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return nlohmann::json::parse(in);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  out << text;
}

// The desk-scale run configuration shared by criteria 6-8. Channel widths an
// eighth of the full-size model: this suite runs on one CPU core, and the
// twenty-minute budget binds hardest there. itd toggles the dataset cue.
std::string desk_config(const fs::path& root, bool itd, int epochs, double eta) {
  nlohmann::json j = {
      {"data",
       {{"train_manifest", (root / "data/manifest_train.jsonl").string()},
        {"val_manifest", (root / "data/manifest_val.jsonl").string()},
        {"test_manifest", (root / "data/manifest_test.jsonl").string()},
        {"synth_clips", 64},
        {"train_ratio", 0.8125},   // 52 of 64
        {"val_ratio", 0.09375},    // 6 of 64, remainder 6 test
        {"synth_itd", itd},
        {"clip_duration_s", 10.0},
        {"fps", 10}}},
      {"model",
       {{"image_channels", {4, 8, 16, 32}},
        {"audio_channels", {4, 8, 16, 32, 64}},
        {"attention_heads", 4},
        {"attention_dim", 32},
        {"avad_hidden", 16},
        {"freq_bins", 256},
        {"frames", 64},
        {"image_height", 224},
        {"image_width", 448}}},
      {"loss", {{"lambda", 0.1}, {"zeta", 0.005}, {"eta", eta}, {"tau", 0.1}}},
      {"optim",
       {{"lr_audio", 1e-3},
        {"lr_image", 1e-4},
        {"batch_size", 16},
        {"epochs", epochs},
        {"batches_per_epoch", 10},
        {"seed", 7},
        {"shuffle_rows", 14},
        {"shuffle_cols", 28}}},
      {"infer", {{"tdss", true}, {"batch_size", 8}, {"out_dir", "out"}}}};
  return j.dump(2) + "\n";
}

double agg(const nlohmann::json& report, const char* key) {
  const auto& v = report["aggregate"][key];
  if (v.is_null()) return std::numeric_limits<double>::infinity();
  return v.get<double>();
}

// ------------------------------------------------------------ criterion 1 --

bool criterion_1() {
  Timer t;
  const int rc = run_cli("gradcheck", g_work / "c1_gradcheck.log");
  const double elapsed = t.seconds();
  if (rc != 0)
    return report(1, false, fmt("(gradient suite exited %d, log %s)", rc,
                                (g_work / "c1_gradcheck.log").string().c_str()));
  if (elapsed >= 120.0) return report(1, false, fmt("(took %.1f s, budget 120 s)", elapsed));
  return report(1, true, fmt("(all primitives, losses and full-model check in %.1f s)", elapsed));
}

// ------------------------------------------------------------ criterion 2 --

bool criterion_2() {
  Timer t;
  const StftConfig cfg;
  Rng rng(202);
  double worst_rt = 0.0;
  for (int round = 0; round < 100; ++round) {
    std::vector<double> x(kSegmentSamples);
    for (auto& v : x) v = rng.uniform(-0.5, 0.5);
    auto spec = stft(x, cfg);
    auto y = istft(spec, cfg, x.size());
    for (size_t i = 400; i + 400 < x.size(); ++i)
      worst_rt = std::max(worst_rt, std::abs(y[i] - x[i]));
  }

  double worst_rc = 0.0;
  for (int round = 0; round < 5; ++round) {
    std::vector<double> l(kSegmentSamples), r(kSegmentSamples);
    for (auto& v : l) v = rng.uniform(-0.5, 0.5);
    for (auto& v : r) v = rng.uniform(-0.5, 0.5);
    std::vector<double> sum(l.size()), diff(l.size());
    for (size_t i = 0; i < l.size(); ++i) {
      sum[i] = l[i] + r[i];
      diff[i] = l[i] - r[i];
    }
    auto [left, right] = recover_channels(stft(sum, cfg), stft(diff, cfg));
    auto gl = stft(l, cfg);
    auto gr = stft(r, cfg);
    for (size_t i = 0; i < gl.bins.size(); ++i) {
      worst_rc = std::max(worst_rc, std::abs(left.bins[i] - gl.bins[i]));
      worst_rc = std::max(worst_rc, std::abs(right.bins[i] - gr.bins[i]));
    }
  }
  const double elapsed = t.seconds();

  if (worst_rt >= 1e-4)
    return report(2, false, fmt("(round-trip interior error %.3g >= 1e-4)", worst_rt));
  if (worst_rc >= 1e-6)
    return report(2, false, fmt("(recover_channels error %.3g >= 1e-6)", worst_rc));
  if (elapsed >= 30.0) return report(2, false, fmt("(took %.1f s, budget 30 s)", elapsed));
  return report(2, true,
                fmt("(round-trip %.2g, recovery %.2g, %.1f s)", worst_rt, worst_rc, elapsed));
}

// ------------------------------------------------------------ criterion 3 --

bool criterion_3() {
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

  Rng init(303);
  Model<double> model(cfg, &init);  // alpha/beta heads are zero at init
  Rng rng(304);
  auto leaf = [&rng](std::vector<int> shape) {
    std::vector<double> v(ad::numel(shape));
    for (auto& x : v) x = rng.normal() * 0.5;
    return ad::Tensor<double>::leaf(std::move(shape), std::move(v));
  };

  for (int round = 0; round < 10; ++round) {
    auto spec = leaf({2, 2, 16, 8});
    auto frames = leaf({2, 3, 32, 64});
    auto visual = model.encode_image(frames, false, false);
    auto enc = model.encode_audio(spec, false, false);
    auto fused = model.fuse(enc.bottleneck, visual);
    auto full = model.decode(fused, enc.skips, visual, false, false, false);
    auto bn = model.decode(fused, enc.skips, visual, false, false, true);
    if (full.shape() != bn.shape() ||
        std::memcmp(full.values().data(), bn.values().data(),
                    full.size() * sizeof(double)) != 0)
      return report(3, false, fmt("(mismatch on input %d)", round));
  }
  return report(3, true, "(10 random inputs bitwise identical at 64-bit)");
}

// ------------------------------------------------------------ criterion 4 --

bool criterion_4() {
  LossConfig cfg;
  cfg.tau = 0.1;
  auto row = [](double x, double y) { return ad::Tensor<double>::leaf({1, 2}, {x, y}); };

  ContrastiveBatch<double> sharp;
  sharp.anchors = row(1.0, 0.0);
  sharp.positives = row(1.0, 0.0);  // s+ = 1
  sharp.negatives = row(0.0, 1.0);  // s- = 0
  const double got_sharp = loss_scl(sharp, cfg).item();
  const double want_sharp = -std::log(std::exp(10.0) / (std::exp(10.0) + 1.0));
  if (std::abs(got_sharp - want_sharp) >= 1e-9)
    return report(4, false, fmt("(sharp case %.12g, want %.12g)", got_sharp, want_sharp));

  ContrastiveBatch<double> tied = sharp;
  tied.negatives = row(1.0, 0.0);  // s- = s+
  const double got_tied = loss_scl(tied, cfg).item();
  if (std::abs(got_tied - std::log(2.0)) >= 1e-12)
    return report(4, false, fmt("(symmetric case %.15g, want ln 2)", got_tied));

  return report(4, true,
                fmt("(1-vs-0 case off by %.2g, ln-2 case off by %.2g)",
                    std::abs(got_sharp - want_sharp), std::abs(got_tied - std::log(2.0))));
}

// ------------------------------------------------------------ criterion 5 --

bool criterion_5() {
  Image frame = Image::filled(480, 240, 0);
  for (int y = 0; y < 240; ++y)
    for (int x = 0; x < 480; ++x)
      for (int c = 0; c < 3; ++c)
        frame.at(y, x, c) = static_cast<uint8_t>((y * 31 + x * 17 + c * 101) % 256);

  // TL, TR, BL, BR, C offsets, cycling twice over frame indices 0-9
  const int rows[5] = {0, 0, 16, 16, 8};
  const int cols[5] = {0, 32, 0, 32, 16};
  for (int idx = 0; idx < 10; ++idx) {
    const Image got = tdss_crop(frame, idx);
    const Image want = crop(frame, rows[idx % 5], cols[idx % 5], 224, 448);
    if (got.pixels != want.pixels)
      return report(5, false, fmt("(frame %d does not match offset (%d,%d))", idx, rows[idx % 5],
                                  cols[idx % 5]));
  }

  // 0.5 sums and divides exactly, so seams would show up as literal inequality
  std::vector<std::pair<int, std::vector<double>>> windows;
  Rng rng(505);
  int cursor = 0;
  while (cursor + 48 < 400) {
    windows.emplace_back(cursor, std::vector<double>(48, 0.5));
    cursor += 1 + static_cast<int>(rng.below(20));
  }
  windows.emplace_back(400 - 48, std::vector<double>(48, 0.5));
  const auto merged = overlap_integrate(windows, 400);
  for (double v : merged)
    if (v != 0.5) return report(5, false, "(constant windows did not integrate exactly)");

  return report(5, true, "(region schedule exact, constant integration exact)");
}

// ------------------------------------------------------- criteria 6 and 7 --

bool criterion_6() {
  Timer t;
  const fs::path root = g_work / "c6";
  fs::remove_all(root);
  fs::create_directories(root);
  write_file(root / "desk.json", desk_config(root, false, 20, 1.0));
  const std::string cfg_arg = "--config " + (root / "desk.json").string();

  if (run_cli("synth " + cfg_arg + " --out " + (root / "data").string() + " --force",
              root / "synth.log") != 0)
    return report(6, false, "(synth failed, see c6/synth.log)");

  if (run_cli("train " + cfg_arg + " --out " + (root / "run").string(), root / "train.log") != 0)
    return report(6, false, "(train failed, see c6/train.log)");
  const double train_s = t.seconds();

  const std::string ckpt = " --checkpoint " + (root / "run/best.ckpt").string();
  if (run_cli("eval " + cfg_arg + " --baseline --out " + (root / "eval").string(),
              root / "eval_base.log") != 0)
    return report(6, false, "(baseline eval failed)");
  if (run_cli("eval " + cfg_arg + ckpt + " --tdss on --out " + (root / "eval").string(),
              root / "eval_on.log") != 0)
    return report(6, false, "(tdss-on eval failed)");
  if (run_cli("eval " + cfg_arg + ckpt + " --tdss off --out " + (root / "eval").string(),
              root / "eval_off.log") != 0)
    return report(6, false, "(tdss-off eval failed)");

  const auto base = load_json(root / "eval/report_baseline.json");
  const auto on = load_json(root / "eval/report_model_tdss_on.json");
  const auto off = load_json(root / "eval/report_model_tdss_off.json");

  const double base_stft = agg(base, "stft_d");
  const double base_snr = agg(base, "snr_db");
  const double on_stft = agg(on, "stft_d");
  const double on_snr = agg(on, "snr_db");
  const double off_stft = agg(off, "stft_d");
  const double off_snr = agg(off, "snr_db");
  const double total_s = t.seconds();

  std::string detail = fmt(
      "(stft base %.4f on %.4f off %.4f; snr base %.2f on %.2f off %.2f dB; "
      "train %.0f s, total %.0f s)",
      base_stft, on_stft, off_stft, base_snr, on_snr, off_snr, train_s, total_s);

  bool ok = true;
  if (!(on_stft <= 0.7 * base_stft) || !(off_stft <= 0.7 * base_stft)) ok = false;
  if (!(on_snr >= base_snr + 3.0) || !(off_snr >= base_snr + 3.0)) ok = false;
  if (!(on_stft <= 1.02 * off_stft)) ok = false;
  if (train_s >= 1200.0) ok = false;  // twenty-minute training budget
  return report(6, ok, detail);
}

bool criterion_7() {
  Timer t;
  const fs::path root = g_work / "c7";
  fs::remove_all(root);
  fs::create_directories(root);

  // ITD-enabled data, shared by both arms
  write_file(root / "desk.json", desk_config(root, true, 20, 1.0));
  const std::string cfg_arg = "--config " + (root / "desk.json").string();
  if (run_cli("synth " + cfg_arg + " --out " + (root / "data").string() + " --force",
              root / "synth.log") != 0)
    return report(7, false, "(synth failed, see c7/synth.log)");

  // arm A: full reconstruction objective; arm B: zeta = eta = 0
  write_file(root / "full.json", desk_config(root, true, 20, 1.0));
  auto mse_only = nlohmann::json::parse(desk_config(root, true, 20, 1.0));
  mse_only["loss"]["zeta"] = 0.0;
  mse_only["loss"]["eta"] = 0.0;
  write_file(root / "mse_only.json", mse_only.dump(2) + "\n");

  struct Arm {
    const char* name;
    fs::path cfg;
  } arms[2] = {{"full", root / "full.json"}, {"mse_only", root / "mse_only.json"}};
  double phs[2] = {0.0, 0.0};

  for (int i = 0; i < 2; ++i) {
    const std::string arm_cfg = "--config " + arms[i].cfg.string();
    const fs::path run = root / (std::string("run_") + arms[i].name);
    if (run_cli("train " + arm_cfg + " --out " + run.string(),
                root / (std::string("train_") + arms[i].name + ".log")) != 0)
      return report(7, false, fmt("(%s train failed)", arms[i].name));
    if (run_cli("eval " + arm_cfg + " --checkpoint " + (run / "best.ckpt").string() +
                    " --tdss off --out " + (root / (std::string("eval_") + arms[i].name)).string(),
                root / (std::string("eval_") + arms[i].name + ".log")) != 0)
      return report(7, false, fmt("(%s eval failed)", arms[i].name));
    phs[i] = agg(load_json(root / (std::string("eval_") + arms[i].name) /
                           "report_model_tdss_off.json"),
                 "phs_d");
  }

  const bool ok = phs[0] < phs[1];
  return report(7, ok,
                fmt("(test phs: full %.4f vs mse-only %.4f, %.0f s)", phs[0], phs[1], t.seconds()));
}

// ------------------------------------------------------------ criterion 8 --

bool criterion_8() {
  Timer t;
  const fs::path root = g_work / "c8";
  fs::remove_all(root);
  fs::create_directories(root);
  // determinism needs no learning; two epochs keep the double run cheap
  write_file(root / "desk.json", desk_config(root, false, 2, 1.0));
  const std::string cfg_arg = "--config " + (root / "desk.json").string();
  if (run_cli("synth " + cfg_arg + " --out " + (root / "data").string() + " --force",
              root / "synth.log") != 0)
    return report(8, false, "(synth failed)");

  for (const char* run : {"run_a", "run_b"}) {
    const fs::path dir = root / run;
    if (run_cli("train " + cfg_arg + " --out " + dir.string(),
                root / (std::string(run) + "_train.log")) != 0)
      return report(8, false, fmt("(%s train failed)", run));
    if (run_cli("eval " + cfg_arg + " --checkpoint " + (dir / "best.ckpt").string() +
                    " --tdss on --out " + (dir / "eval").string(),
                root / (std::string(run) + "_eval.log")) != 0)
      return report(8, false, fmt("(%s eval failed)", run));
  }

  const char* files[] = {"best.ckpt", "last.ckpt", "eval/report_model_tdss_on.json",
                         "eval/report_model_tdss_on.csv"};
  for (const char* rel : files) {
    const std::string a = read_file(root / "run_a" / rel);
    const std::string b = read_file(root / "run_b" / rel);
    if (a.empty() || a != b) return report(8, false, fmt("(%s differs between runs)", rel));
  }
  return report(8, true, fmt("(checkpoints and reports byte-identical, %.0f s)", t.seconds()));
}

}  // namespace

int main(int argc, char** argv) {
  int selected = 0;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--criterion") == 0 && i + 1 < argc) {
      selected = std::atoi(argv[++i]);
    } else {
      std::fprintf(stderr, "usage: %s [--criterion N]\n", argv[0]);
      return 2;
    }
  }
  if (selected < 0 || selected > 8) {
    std::fprintf(stderr, "criterion must be 1..8\n");
    return 2;
  }

  const char* bin = std::getenv("CCSTEREO_BIN");
  if (!bin || !*bin) {
    std::fprintf(stderr, "CCSTEREO_BIN must point at the ccstereo binary\n");
    return 2;
  }
  g_bin = bin;
  g_work = fs::temp_directory_path() / "ccstereo_acceptance";
  fs::create_directories(g_work);

  bool (*criteria[8])() = {criterion_1, criterion_2, criterion_3, criterion_4,
                           criterion_5, criterion_6, criterion_7, criterion_8};
  bool all = true;
  for (int n = 1; n <= 8; ++n) {
    if (selected != 0 && selected != n) continue;
    bool ok = false;
    try {
      ok = criteria[n - 1]();
    } catch (const std::exception& e) {
      ok = report(n, false, std::string("(exception: ") + e.what() + ")");
    }
    all = all && ok;
  }
  return all ? 0 : 1;
}
