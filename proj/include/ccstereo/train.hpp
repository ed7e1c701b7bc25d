#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "ccstereo/checkpoint.hpp"
#include "ccstereo/config.hpp"
#include "ccstereo/data.hpp"
#include "ccstereo/inference.hpp"
#include "ccstereo/losses.hpp"
#include "ccstereo/model.hpp"
#include "ccstereo/optim.hpp"
#include "ccstereo/wav.hpp"

namespace ccs {

// Numeric failure during training; mapped to its own exit code by the CLI.
struct train_abort : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct StepLoss {
  double mse = 0.0;
  double apm = 0.0;
  double phs = 0.0;
  double scl = 0.0;
  double total = 0.0;
};

struct LoadedClip {
  ClipRecord rec;
  WaveformClip audio;
  std::vector<std::string> frames;
};

inline std::vector<LoadedClip> load_clips(const ClipManifest& manifest) {
  std::vector<LoadedClip> clips;
  clips.reserve(manifest.records.size());
  for (const auto& rec : manifest.records) {
    LoadedClip clip;
    clip.rec = rec;
    clip.audio = read_wav(rec.audio_path);
    if (!clip.audio.is_stereo())
      throw std::runtime_error("training clip must be stereo: " + rec.audio_path);
    clip.frames = frame_files(rec.frames_dir);
    clips.push_back(std::move(clip));
  }
  return clips;
}

struct TrainResult {
  std::string best_checkpoint;
  std::string last_checkpoint;
  double best_val = std::numeric_limits<double>::infinity();
  int64_t steps = 0;
  std::vector<double> val_history;
};

template <typename T>
class Trainer {
 public:
  Trainer(const RunConfig& cfg, std::string out_dir)
      : cfg_(cfg),
        out_dir_(std::move(out_dir)),
        root_rng_(cfg.optim.seed),
        init_rng_(root_rng_.stream("init")),
        model_(cfg.model, &init_rng_) {
    std::filesystem::create_directories(out_dir_);
    train_clips_ = load_clips(load_manifest(cfg_.data.train_manifest));
    val_clips_ = load_clips(load_manifest(cfg_.data.val_manifest));
    if (train_clips_.empty()) throw std::runtime_error("train: empty training split");
    if (val_clips_.empty()) throw std::runtime_error("train: empty validation split");

    // The image branch trains an order of magnitude slower than the rest.
    ad::AdamGroup<T> image_group, audio_group;
    image_group.lr = cfg_.optim.lr_image;
    audio_group.lr = cfg_.optim.lr_audio;
    for (const auto& [name, tensor] : model_.params().entries()) {
      if (name.rfind("image_encoder.", 0) == 0)
        image_group.params.push_back(tensor);
      else
        audio_group.params.push_back(tensor);
    }
    optimizer_ = std::make_unique<ad::Adam<T>>(std::vector<ad::AdamGroup<T>>{image_group, audio_group});
  }

  Model<T>& model() { return model_; }
  ad::Adam<T>& optimizer() { return *optimizer_; }

  TrainResult run(const std::string& resume_path = "") {
    CheckpointMeta meta;
    bool resumed = false;
    if (!resume_path.empty()) {
      meta = load_checkpoint(resume_path, &model_, optimizer_.get());
      resumed = true;
    }

    const std::string csv_path = out_dir_ + "/loss.csv";
    std::ofstream csv(csv_path, resumed ? std::ios::app : std::ios::trunc);
    if (!csv) throw std::runtime_error("train: cannot write " + csv_path);
    if (!resumed) csv << "step,mse,apm,phs,scl,total\n";

    TrainResult result;
    result.best_val = meta.best_val;
    result.best_checkpoint = out_dir_ + "/best.ckpt";
    result.last_checkpoint = out_dir_ + "/last.ckpt";

    int64_t step = meta.step;
    for (int64_t epoch = meta.epoch; epoch < cfg_.optim.epochs; ++epoch) {
      for (int batch = 0; batch < cfg_.optim.batches_per_epoch; ++batch) {
        Rng step_rng = root_rng_.stream("step", static_cast<uint64_t>(step));
        const StepLoss losses = train_step(step, &step_rng);
        ++step;
        csv << step << "," << detail::format_double(losses.mse) << ","
            << detail::format_double(losses.apm) << "," << detail::format_double(losses.phs)
            << "," << detail::format_double(losses.scl) << ","
            << detail::format_double(losses.total) << "\n";
        csv.flush();
      }

      const double val = validate();
      result.val_history.push_back(val);
      meta.step = step;
      meta.epoch = epoch + 1;
      if (val < result.best_val) {
        result.best_val = val;
        meta.best_val = val;
        save_checkpoint(result.best_checkpoint, model_, optimizer_.get(), meta);
      }
      meta.best_val = result.best_val;
      save_checkpoint(result.last_checkpoint, model_, optimizer_.get(), meta);
      std::fprintf(stderr, "epoch %lld/%d: val stft distance %.6f (best %.6f)\n",
                   static_cast<long long>(epoch + 1), cfg_.optim.epochs, val, result.best_val);
    }

    if (!resumed && cfg_.optim.epochs == 0) {
      // No training requested; still emit loadable checkpoints.
      save_checkpoint(result.best_checkpoint, model_, optimizer_.get(), meta);
      save_checkpoint(result.last_checkpoint, model_, optimizer_.get(), meta);
    }
    result.steps = step;
    return result;
  }

  // One optimization step on a freshly sampled batch. Exposed for tests.
  StepLoss train_step(int64_t step, Rng* rng) {
    const int n = cfg_.optim.batch_size;
    std::vector<ComplexSpectrogram> mono_specs, diff_specs, left_specs, right_specs;
    std::vector<Image> frames_t, frames_prev, frames_neg;
    mono_specs.reserve(n);

    const StftConfig stft_cfg;
    for (int i = 0; i < n; ++i) {
      TrainingPair pair = sample_pair_with_retry(rng);
      std::vector<double> diff(pair.mono.size());
      for (size_t k = 0; k < diff.size(); ++k) diff[k] = pair.left[k] - pair.right[k];
      mono_specs.push_back(stft(pair.mono, stft_cfg));
      diff_specs.push_back(stft(diff, stft_cfg));
      left_specs.push_back(stft(pair.left, stft_cfg));
      right_specs.push_back(stft(pair.right, stft_cfg));

      Image ft = augment_train(pair.frame_t, rng);
      Image fp = augment_train(pair.frame_prev, rng);
      frames_neg.push_back(
          spatial_shuffle(ft, cfg_.optim.shuffle_rows, cfg_.optim.shuffle_cols, rng));
      frames_t.push_back(std::move(ft));
      frames_prev.push_back(std::move(fp));
    }

    const int bins = cfg_.model.freq_bins;
    ad::Tensor<T> mono_grid = pack_spectrograms<T>(pointers(mono_specs), bins);
    ad::Tensor<T> gt_diff = pack_spectrograms<T>(pointers(diff_specs), bins);
    ad::Tensor<T> gt_left = pack_spectrograms<T>(pointers(left_specs), bins);
    ad::Tensor<T> gt_right = pack_spectrograms<T>(pointers(right_specs), bins);

    ad::Tensor<T> visual = model_.encode_image(stack_frames<T>(pointers(frames_t)), true, true);
    auto enc = model_.encode_audio(mono_grid, true, true);
    ad::Tensor<T> fused = model_.fuse(enc.bottleneck, visual);
    ad::Tensor<T> mask = model_.decode(fused, enc.skips, visual, true, true);
    ad::Tensor<T> pred_diff = complex_mask_multiply(mask, mono_grid);
    auto binaural = recover_binaural(mono_grid, pred_diff);

    ad::Tensor<T> mse = loss_mse(gt_diff, pred_diff);
    ad::Tensor<T> apm = loss_apm(gt_diff, pred_diff);
    ad::Tensor<T> phs = loss_phs(gt_left, gt_right, binaural.first, binaural.second);
    ad::Tensor<T> rec = ad::add(
        mse, ad::add(ad::scale(apm, static_cast<T>(cfg_.loss.zeta)),
                     ad::scale(phs, static_cast<T>(cfg_.loss.eta))));

    StepLoss out;
    out.mse = static_cast<double>(mse.item());
    out.apm = static_cast<double>(apm.item());
    out.phs = static_cast<double>(phs.item());

    ad::Tensor<T> total = rec;
    if (cfg_.loss.lambda != 0.0) {
      // Positive and negative passes share the audio encoding; only the main
      // pass updates batchnorm running statistics.
      ad::Tensor<T> vis_prev =
          model_.encode_image(stack_frames<T>(pointers(frames_prev)), true, false);
      ad::Tensor<T> vis_neg =
          model_.encode_image(stack_frames<T>(pointers(frames_neg)), true, false);
      ContrastiveBatch<T> cb;
      cb.anchors = model_.pooled_embedding(fused);
      cb.positives = model_.pooled_embedding(model_.fuse(enc.bottleneck, vis_prev));
      cb.negatives = model_.pooled_embedding(model_.fuse(enc.bottleneck, vis_neg));
      ad::Tensor<T> scl = loss_scl(cb, cfg_.loss);
      out.scl = static_cast<double>(scl.item());
      total = total_loss(rec, scl, cfg_.loss);
    }
    out.total = static_cast<double>(total.item());

    if (!std::isfinite(out.total) || !std::isfinite(out.mse) || !std::isfinite(out.apm) ||
        !std::isfinite(out.phs) || !std::isfinite(out.scl))
      abort_step(step, out, false);

    ad::backward(total);
    if (!grads_finite()) abort_step(step, out, true);
    optimizer_->step();
    return out;
  }

  // Mean full-band STFT distance over fixed centre segments of the
  // validation clips, model in eval mode.
  double validate() {
    const StftConfig stft_cfg;
    const int bins = cfg_.model.freq_bins;
    double sum = 0.0;
    size_t counted = 0;

    for (size_t begin = 0; begin < val_clips_.size();
         begin += static_cast<size_t>(cfg_.infer.batch_size)) {
      const size_t end =
          std::min(begin + static_cast<size_t>(cfg_.infer.batch_size), val_clips_.size());
      std::vector<ComplexSpectrogram> mono_specs;
      std::vector<StereoSpectrogram> gt_specs;
      std::vector<Image> views;
      std::vector<double> gains;

      for (size_t c = begin; c < end; ++c) {
        const LoadedClip& clip = val_clips_[c];
        const auto& l = clip.audio.channel(Channel::left);
        const auto& r = clip.audio.channel(Channel::right);
        const size_t start = (l.size() - kSegmentSamples) / 2;

        std::vector<double> mono(kSegmentSamples), left(kSegmentSamples), right(kSegmentSamples);
        for (int i = 0; i < kSegmentSamples; ++i) {
          left[i] = l[start + i];
          right[i] = r[start + i];
          mono[i] = left[i] + right[i];
        }
        const double mix_rms = rms(mono);
        if (mix_rms < 1e-8) continue;
        const double gain = kDefaultTargetRms / mix_rms;
        for (int i = 0; i < kSegmentSamples; ++i) {
          mono[i] *= gain;
          left[i] *= gain;
          right[i] *= gain;
        }

        const double start_s = start / static_cast<double>(kSampleRate);
        int idx = static_cast<int>(std::floor((start_s + kSegmentSeconds / 2.0) * clip.rec.fps));
        idx = std::clamp(idx, 0, static_cast<int>(clip.frames.size()) - 1);
        Image frame = read_png(clip.frames[static_cast<size_t>(idx)]);
        if (frame.width != 480 || frame.height != 240) frame = resize_bilinear(frame, 480, 240);

        mono_specs.push_back(stft(mono, stft_cfg));
        gt_specs.push_back({stft(left, stft_cfg), stft(right, stft_cfg)});
        views.push_back(center_crop(frame));
        gains.push_back(gain);
      }
      if (mono_specs.empty()) continue;

      ad::Tensor<T> spec_grid = pack_spectrograms<T>(pointers(mono_specs), bins);
      ad::Tensor<T> frame_grid = stack_frames<T>(pointers(views));
      ad::Tensor<T> mask = model_.forward_mask(spec_grid, frame_grid, false, false);
      ad::Tensor<T> pred_diff = complex_mask_multiply(mask, spec_grid);

      for (size_t i = 0; i < mono_specs.size(); ++i) {
        const ComplexSpectrogram diff =
            unpack_spectrogram(pred_diff, static_cast<int>(i), stft_cfg.freq_bins(), stft_cfg);
        auto channels = recover_channels(mono_specs[i], diff);
        sum += stft_distance({channels.first, channels.second}, gt_specs[i]);
        ++counted;
      }
    }
    if (counted == 0) throw std::runtime_error("validate: no usable validation clips");
    return sum / static_cast<double>(counted);
  }

 private:
  template <typename V>
  static std::vector<const V*> pointers(const std::vector<V>& items) {
    std::vector<const V*> out;
    out.reserve(items.size());
    for (const auto& item : items) out.push_back(&item);
    return out;
  }

  TrainingPair sample_pair_with_retry(Rng* rng) {
    for (int attempt = 0; attempt < 100; ++attempt) {
      const LoadedClip& clip = train_clips_[rng->below(train_clips_.size())];
      try {
        return sample_training_pair(clip.audio, clip.frames, clip.rec.fps, rng);
      } catch (const silent_input_error&) {
        // Silent segment; draw again.
      }
    }
    throw train_abort("train: could not sample a non-silent segment after 100 attempts");
  }

  bool grads_finite() const {
    for (const auto& [name, tensor] : model_.params().entries()) {
      for (T g : tensor.node()->grad)
        if (!std::isfinite(static_cast<double>(g))) return false;
    }
    return true;
  }

  [[noreturn]] void abort_step(int64_t step, const StepLoss& losses, bool after_backward) {
    std::string msg = "non-finite " + std::string(after_backward ? "gradient" : "loss") +
                      " at step " + std::to_string(step);
    char buf[256];
    std::snprintf(buf, sizeof(buf), "; mse=%g apm=%g phs=%g scl=%g total=%g", losses.mse,
                  losses.apm, losses.phs, losses.scl, losses.total);
    msg += buf;
    if (after_backward) {
      size_t group_idx = 0;
      for (const auto& group : optimizer_->groups()) {
        double sq = 0.0;
        for (const auto& param : group.params)
          for (T g : param.node()->grad) sq += static_cast<double>(g) * static_cast<double>(g);
        std::snprintf(buf, sizeof(buf), "; grad_norm[group%zu]=%g", group_idx++, std::sqrt(sq));
        msg += buf;
      }
    }
    throw train_abort(msg);
  }

  RunConfig cfg_;
  std::string out_dir_;
  Rng root_rng_;
  Rng init_rng_;
  Model<T> model_;
  std::unique_ptr<ad::Adam<T>> optimizer_;
  std::vector<LoadedClip> train_clips_;
  std::vector<LoadedClip> val_clips_;
};

}  // namespace ccs
