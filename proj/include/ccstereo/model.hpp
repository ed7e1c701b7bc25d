#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ccstereo/ops.hpp"
#include "ccstereo/rng.hpp"

namespace ccs {

struct ModelConfig {
  std::vector<int> image_channels{32, 64, 128, 256};
  std::vector<int> audio_channels{32, 64, 128, 256, 512};
  int attention_heads = 4;
  int attention_dim = 256;
  int avad_hidden = 128;
  int freq_bins = 256;
  int frames = 64;
  int image_height = 224;
  int image_width = 448;

  int image_stages() const { return static_cast<int>(image_channels.size()); }
  int audio_stages() const { return static_cast<int>(audio_channels.size()); }
  int feature_height() const { return image_height >> image_stages(); }
  int feature_width() const { return image_width >> image_stages(); }
  int bottleneck_freq() const { return freq_bins >> audio_stages(); }
  int bottleneck_frames() const { return frames >> audio_stages(); }

  void validate() const {
    auto fail = [](const std::string& m) { throw std::invalid_argument("model config: " + m); };
    if (image_channels.empty() || audio_channels.empty()) fail("empty channel list");
    for (int c : image_channels)
      if (c <= 0) fail("non-positive image channel count");
    for (int c : audio_channels)
      if (c <= 0) fail("non-positive audio channel count");
    if (attention_heads <= 0 || attention_dim <= 0 || avad_hidden <= 0)
      fail("attention/avad dims must be positive");
    if (attention_dim % attention_heads != 0) fail("attention_dim not divisible by heads");
    if (image_height % (1 << image_stages()) != 0 || image_width % (1 << image_stages()) != 0)
      fail("image size not divisible by encoder stride");
    if (freq_bins % (1 << audio_stages()) != 0 || frames % (1 << audio_stages()) != 0)
      fail("spectrogram size not divisible by encoder stride");
    if (feature_height() < 1 || feature_width() < 1) fail("image encoder collapses to nothing");
    if (bottleneck_freq() < 1 || bottleneck_frames() < 1) fail("audio encoder collapses to nothing");
  }

  nlohmann::json to_json() const {
    return {{"image_channels", image_channels}, {"audio_channels", audio_channels},
            {"attention_heads", attention_heads}, {"attention_dim", attention_dim},
            {"avad_hidden", avad_hidden},         {"freq_bins", freq_bins},
            {"frames", frames},                   {"image_height", image_height},
            {"image_width", image_width}};
  }

  static ModelConfig from_json(const nlohmann::json& j);

  // FNV-1a over the canonical serialization; stored in checkpoints.
  uint64_t hash() const {
    const std::string s = to_json().dump();
    uint64_t h = 1469598103934665603ull;
    for (unsigned char ch : s) {
      h ^= ch;
      h *= 1099511628211ull;
    }
    return h;
  }
};

inline ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  static const char* keys[] = {"image_channels", "audio_channels", "attention_heads",
                               "attention_dim",  "avad_hidden",    "freq_bins",
                               "frames",         "image_height",   "image_width"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* k : keys) known = known || it.key() == k;
    if (!known) throw std::invalid_argument("model config: unknown key \"" + it.key() + "\"");
  }
  if (j.contains("image_channels")) cfg.image_channels = j["image_channels"].get<std::vector<int>>();
  if (j.contains("audio_channels")) cfg.audio_channels = j["audio_channels"].get<std::vector<int>>();
  if (j.contains("attention_heads")) cfg.attention_heads = j["attention_heads"].get<int>();
  if (j.contains("attention_dim")) cfg.attention_dim = j["attention_dim"].get<int>();
  if (j.contains("avad_hidden")) cfg.avad_hidden = j["avad_hidden"].get<int>();
  if (j.contains("freq_bins")) cfg.freq_bins = j["freq_bins"].get<int>();
  if (j.contains("frames")) cfg.frames = j["frames"].get<int>();
  if (j.contains("image_height")) cfg.image_height = j["image_height"].get<int>();
  if (j.contains("image_width")) cfg.image_width = j["image_width"].get<int>();
  cfg.validate();
  return cfg;
}

// Named parameters in registration order (the checkpoint order) plus
// non-differentiable buffers (batchnorm running statistics).
template <typename T>
class ParamStore {
 public:
  ad::Tensor<T> add(const std::string& name, ad::Tensor<T> t) {
    if (index_.count(name)) throw std::logic_error("duplicate parameter " + name);
    index_[name] = entries_.size();
    entries_.emplace_back(name, t);
    return t;
  }

  std::vector<T>* add_buffer(const std::string& name, std::vector<T> init) {
    if (buffer_index_.count(name)) throw std::logic_error("duplicate buffer " + name);
    buffer_index_[name] = buffers_.size();
    buffers_.emplace_back(name, std::make_unique<std::vector<T>>(std::move(init)));
    return buffers_.back().second.get();
  }

  const std::vector<std::pair<std::string, ad::Tensor<T>>>& entries() const { return entries_; }
  std::vector<std::pair<std::string, ad::Tensor<T>>>& entries() { return entries_; }

  ad::Tensor<T> at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no parameter " + name);
    return entries_[it->second].second;
  }

  size_t buffer_count() const { return buffers_.size(); }
  const std::string& buffer_name(size_t i) const { return buffers_[i].first; }
  std::vector<T>& buffer(size_t i) { return *buffers_[i].second; }
  const std::vector<T>& buffer(size_t i) const { return *buffers_[i].second; }

 private:
  std::vector<std::pair<std::string, ad::Tensor<T>>> entries_;
  std::unordered_map<std::string, size_t> index_;
  std::vector<std::pair<std::string, std::unique_ptr<std::vector<T>>>> buffers_;
  std::unordered_map<std::string, size_t> buffer_index_;
};

namespace detail {

template <typename T>
ad::Tensor<T> uniform_init(Rng* rng, std::vector<int> shape, int fan_in) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<T> v(ad::numel(shape));
  for (auto& x : v) x = static_cast<T>(rng->uniform(-bound, bound));
  return ad::Tensor<T>::leaf(std::move(shape), std::move(v), true);
}

template <typename T>
ad::Tensor<T> normal_init(Rng* rng, std::vector<int> shape, double stddev) {
  std::vector<T> v(ad::numel(shape));
  for (auto& x : v) x = static_cast<T>(rng->normal() * stddev);
  return ad::Tensor<T>::leaf(std::move(shape), std::move(v), true);
}

}  // namespace detail

template <typename T>
struct ConvBnLayer {
  ad::Tensor<T> w;
  ad::Tensor<T> gamma, beta;
  std::vector<T>* mean = nullptr;
  std::vector<T>* var = nullptr;
};

template <typename T>
struct AvadLayer {
  ad::Tensor<T> gamma, beta;
  std::vector<T>* mean = nullptr;
  std::vector<T>* var = nullptr;
  ad::Tensor<T> vis_w;     // 1x1 projection, visual channels -> layer channels
  ad::Tensor<T> pos;       // (C_k, H_v, W_v)
  ad::Tensor<T> shared_w;  // (S, hidden)
  ad::Tensor<T> shared_b;
  ad::Tensor<T> alpha_w;   // zero-initialized heads
  ad::Tensor<T> alpha_b;
  ad::Tensor<T> beta_w;
  ad::Tensor<T> beta_b;
};

template <typename T>
class Model {
 public:
  struct AudioEncoding {
    ad::Tensor<T> bottleneck;
    std::vector<ad::Tensor<T>> skips;  // [input spectrogram, e1 .. e_{L-1}]
  };

  Model(ModelConfig cfg, Rng* rng) : cfg_(std::move(cfg)) {
    cfg_.validate();
    build(rng);
  }

  const ModelConfig& config() const { return cfg_; }
  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }

  ad::Tensor<T> encode_image(const ad::Tensor<T>& frames, bool training, bool update_running) {
    if (frames.ndim() != 4 || frames.dim(1) != 3 || frames.dim(2) != cfg_.image_height ||
        frames.dim(3) != cfg_.image_width)
      ad::op_error("encode_image", "expected (N,3," + std::to_string(cfg_.image_height) + "," +
                                       std::to_string(cfg_.image_width) + "), got " +
                                       ad::shape_str(frames.shape()));
    ad::Tensor<T> x = frames;
    for (auto& stage : image_stages_) x = conv_bn_act(x, stage, 2, training, update_running);
    return x;
  }

  AudioEncoding encode_audio(const ad::Tensor<T>& spec, bool training, bool update_running) {
    if (spec.ndim() != 4 || spec.dim(1) != 2 || spec.dim(2) != cfg_.freq_bins ||
        spec.dim(3) != cfg_.frames)
      ad::op_error("encode_audio", "expected (N,2," + std::to_string(cfg_.freq_bins) + "," +
                                       std::to_string(cfg_.frames) + "), got " +
                                       ad::shape_str(spec.shape()));
    AudioEncoding enc;
    ad::Tensor<T> x = spec;
    enc.skips.push_back(x);
    for (size_t i = 0; i < audio_stages_.size(); ++i) {
      x = conv_bn_act(x, audio_stages_[i], 2, training, update_running);
      if (i + 1 < audio_stages_.size()) enc.skips.push_back(x);
    }
    enc.bottleneck = x;
    return enc;
  }

  // Multi-head cross-attention, audio positions as queries, with a residual.
  ad::Tensor<T> fuse(const ad::Tensor<T>& bottleneck, const ad::Tensor<T>& visual) {
    using namespace ad;
    const int n = bottleneck.dim(0);
    const int ca = bottleneck.dim(1);
    const int q = bottleneck.dim(2) * bottleneck.dim(3);
    const int s = visual.dim(2) * visual.dim(3);
    const int heads = cfg_.attention_heads;
    const int dh = cfg_.attention_dim / heads;

    Tensor<T> aq = permute(reshape(bottleneck, {n, ca, q}), {0, 2, 1});
    Tensor<T> kv = permute(reshape(visual, {n, visual.dim(1), s}), {0, 2, 1});

    Tensor<T> qp = add_bias(matmul(aq, wq_), bq_);
    Tensor<T> kp = add_bias(matmul(kv, wk_), bk_);
    Tensor<T> vp = add_bias(matmul(kv, wv_), bv_);

    auto split = [&](const Tensor<T>& t, int len) {
      return reshape(permute(reshape(t, {n, len, heads, dh}), {0, 2, 1, 3}), {n * heads, len, dh});
    };
    Tensor<T> qh = split(qp, q);
    Tensor<T> kh = split(kp, s);
    Tensor<T> vh = split(vp, s);

    Tensor<T> scores = scale(matmul(qh, permute(kh, {0, 2, 1})),
                             static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh))));
    Tensor<T> attn = softmax(scores, 2);
    Tensor<T> ctx = matmul(attn, vh);
    ctx = reshape(permute(reshape(ctx, {n, heads, q, dh}), {0, 2, 1, 3}), {n, q, cfg_.attention_dim});
    Tensor<T> out = add_bias(matmul(ctx, wo_), bo_);
    Tensor<T> fused = add(aq, out);
    return reshape(permute(fused, {0, 2, 1}), bottleneck.shape());
  }

  ad::Tensor<T> avad_forward(const ad::Tensor<T>& x, const ad::Tensor<T>& visual, size_t stage,
                             bool training, bool update_running, bool bn_only) {
    using namespace ad;
    AvadLayer<T>& layer = avad_layers_[stage];
    Tensor<T> normed = batchnorm2d(x, layer.gamma, layer.beta, layer.mean, layer.var, training,
                                   update_running);
    if (bn_only) return normed;

    const int n = x.dim(0);
    const int ck = x.dim(1);
    const int q = x.dim(2) * x.dim(3);
    const int s = visual.dim(2) * visual.dim(3);

    Tensor<T> proj = conv2d(visual, layer.vis_w, 1, 0);
    proj = add(proj, expand_batch(layer.pos, n));

    Tensor<T> nf = permute(reshape(normed, {n, ck, q}), {0, 2, 1});
    Tensor<T> vf = reshape(proj, {n, ck, s});
    Tensor<T> relevance = matmul(nf, vf);  // (n, q, s)

    Tensor<T> hidden = leaky_relu(add_bias(matmul(relevance, layer.shared_w), layer.shared_b),
                                  T(0.2));
    auto to_grid = [&](const Tensor<T>& t) {
      return reshape(permute(t, {0, 2, 1}), {n, ck, x.dim(2), x.dim(3)});
    };
    Tensor<T> alpha = to_grid(add_bias(matmul(hidden, layer.alpha_w), layer.alpha_b));
    Tensor<T> beta = to_grid(add_bias(matmul(hidden, layer.beta_w), layer.beta_b));
    return add(mul(add_scalar(alpha, T(1)), normed), beta);
  }

  ad::Tensor<T> decode(const ad::Tensor<T>& fused, const std::vector<ad::Tensor<T>>& skips,
                       const ad::Tensor<T>& visual, bool training, bool update_running,
                       bool bn_only = false) {
    using namespace ad;
    if (skips.size() != decoder_convs_.size())
      op_error("decode", "expected " + std::to_string(decoder_convs_.size()) + " skips, got " +
                             std::to_string(skips.size()));
    Tensor<T> x = fused;
    for (size_t i = 0; i < decoder_convs_.size(); ++i) {
      x = upsample_nearest2(x);
      x = conv2d(x, decoder_convs_[i], 1, 1);
      x = avad_forward(x, visual, i, training, update_running, bn_only);
      x = leaky_relu(x, T(0.2));
      x = concat<T>({x, skips[skips.size() - 1 - i]}, 1);
    }
    x = conv2d(x, final_w_, final_b_, 1, 1);
    return tanh_op(x);
  }

  ad::Tensor<T> forward_mask(const ad::Tensor<T>& spec, const ad::Tensor<T>& frames, bool training,
                             bool update_running, ad::Tensor<T>* fused_out = nullptr,
                             ad::Tensor<T>* visual_out = nullptr) {
    ad::Tensor<T> visual = encode_image(frames, training, update_running);
    AudioEncoding enc = encode_audio(spec, training, update_running);
    ad::Tensor<T> fused = fuse(enc.bottleneck, visual);
    if (fused_out) *fused_out = fused;
    if (visual_out) *visual_out = visual;
    return decode(fused, enc.skips, visual, training, update_running);
  }

  // Global average pool plus unit normalization: the contrastive embedding.
  ad::Tensor<T> pooled_embedding(const ad::Tensor<T>& fused) {
    ad::Tensor<T> pooled = ad::avgpool2d(fused, fused.dim(2), fused.dim(3));
    pooled = ad::reshape(pooled, {fused.dim(0), fused.dim(1)});
    return ad::l2_normalize(pooled, 1);
  }

 private:
  ad::Tensor<T> conv_bn_act(const ad::Tensor<T>& x, ConvBnLayer<T>& layer, int stride,
                            bool training, bool update_running) {
    ad::Tensor<T> y = ad::conv2d(x, layer.w, stride, 1);
    y = ad::batchnorm2d(y, layer.gamma, layer.beta, layer.mean, layer.var, training,
                        update_running);
    return ad::leaky_relu(y, T(0.2));
  }

  ConvBnLayer<T> make_conv_bn(const std::string& prefix, Rng* rng, int in_ch, int out_ch) {
    ConvBnLayer<T> layer;
    layer.w = params_.add(prefix + ".conv.w",
                          detail::uniform_init<T>(rng, {out_ch, in_ch, 3, 3}, in_ch * 9));
    layer.gamma = params_.add(prefix + ".bn.gamma", ad::Tensor<T>::full({out_ch}, T(1), true));
    layer.beta = params_.add(prefix + ".bn.beta", ad::Tensor<T>::zeros({out_ch}, true));
    layer.mean = params_.add_buffer(prefix + ".bn.mean", std::vector<T>(out_ch, T(0)));
    layer.var = params_.add_buffer(prefix + ".bn.var", std::vector<T>(out_ch, T(1)));
    return layer;
  }

  void build(Rng* rng) {
    int in_ch = 3;
    for (int i = 0; i < cfg_.image_stages(); ++i) {
      image_stages_.push_back(
          make_conv_bn("image_encoder.stage" + std::to_string(i), rng, in_ch, cfg_.image_channels[i]));
      in_ch = cfg_.image_channels[i];
    }
    const int cv = cfg_.image_channels.back();

    in_ch = 2;
    for (int i = 0; i < cfg_.audio_stages(); ++i) {
      audio_stages_.push_back(
          make_conv_bn("audio_encoder.stage" + std::to_string(i), rng, in_ch, cfg_.audio_channels[i]));
      in_ch = cfg_.audio_channels[i];
    }
    const int ca = cfg_.audio_channels.back();
    const int d = cfg_.attention_dim;

    wq_ = params_.add("attention.wq", detail::uniform_init<T>(rng, {ca, d}, ca));
    bq_ = params_.add("attention.bq", ad::Tensor<T>::zeros({d}, true));
    wk_ = params_.add("attention.wk", detail::uniform_init<T>(rng, {cv, d}, cv));
    bk_ = params_.add("attention.bk", ad::Tensor<T>::zeros({d}, true));
    wv_ = params_.add("attention.wv", detail::uniform_init<T>(rng, {cv, d}, cv));
    bv_ = params_.add("attention.bv", ad::Tensor<T>::zeros({d}, true));
    wo_ = params_.add("attention.wo", detail::uniform_init<T>(rng, {d, ca}, d));
    bo_ = params_.add("attention.bo", ad::Tensor<T>::zeros({ca}, true));

    const int stages = cfg_.audio_stages();
    const int hv = cfg_.feature_height();
    const int wv = cfg_.feature_width();
    const int s = hv * wv;
    int cur = ca;
    for (int i = 0; i < stages; ++i) {
      const int out_ch =
          i < stages - 1 ? cfg_.audio_channels[static_cast<size_t>(stages - 2 - i)] : cfg_.audio_channels[0];
      const std::string prefix = "decoder.stage" + std::to_string(i);
      decoder_convs_.push_back(
          params_.add(prefix + ".conv.w", detail::uniform_init<T>(rng, {out_ch, cur, 3, 3}, cur * 9)));

      AvadLayer<T> avad;
      avad.gamma = params_.add(prefix + ".avad.bn.gamma", ad::Tensor<T>::full({out_ch}, T(1), true));
      avad.beta = params_.add(prefix + ".avad.bn.beta", ad::Tensor<T>::zeros({out_ch}, true));
      avad.mean = params_.add_buffer(prefix + ".avad.bn.mean", std::vector<T>(out_ch, T(0)));
      avad.var = params_.add_buffer(prefix + ".avad.bn.var", std::vector<T>(out_ch, T(1)));
      avad.vis_w = params_.add(prefix + ".avad.vis.w",
                               detail::uniform_init<T>(rng, {out_ch, cv, 1, 1}, cv));
      avad.pos = params_.add(prefix + ".avad.pos", detail::normal_init<T>(rng, {out_ch, hv, wv}, 0.02));
      avad.shared_w = params_.add(prefix + ".avad.shared.w",
                                  detail::uniform_init<T>(rng, {s, cfg_.avad_hidden}, s));
      avad.shared_b = params_.add(prefix + ".avad.shared.b",
                                  ad::Tensor<T>::zeros({cfg_.avad_hidden}, true));
      avad.alpha_w = params_.add(prefix + ".avad.alpha.w",
                                 ad::Tensor<T>::zeros({cfg_.avad_hidden, out_ch}, true));
      avad.alpha_b = params_.add(prefix + ".avad.alpha.b", ad::Tensor<T>::zeros({out_ch}, true));
      avad.beta_w = params_.add(prefix + ".avad.beta.w",
                                ad::Tensor<T>::zeros({cfg_.avad_hidden, out_ch}, true));
      avad.beta_b = params_.add(prefix + ".avad.beta.b", ad::Tensor<T>::zeros({out_ch}, true));
      avad_layers_.push_back(avad);

      // After the stage: conv output concatenated with its skip.
      const int skip_ch = i < stages - 1 ? cfg_.audio_channels[static_cast<size_t>(stages - 2 - i)] : 2;
      cur = out_ch + skip_ch;
    }
    final_w_ = params_.add("decoder.final.w", detail::uniform_init<T>(rng, {2, cur, 3, 3}, cur * 9));
    final_b_ = params_.add("decoder.final.b", ad::Tensor<T>::zeros({2}, true));
  }

  ModelConfig cfg_;
  ParamStore<T> params_;
  std::vector<ConvBnLayer<T>> image_stages_;
  std::vector<ConvBnLayer<T>> audio_stages_;
  std::vector<ad::Tensor<T>> decoder_convs_;
  std::vector<AvadLayer<T>> avad_layers_;
  ad::Tensor<T> wq_, bq_, wk_, bk_, wv_, bv_, wo_, bo_;
  ad::Tensor<T> final_w_, final_b_;
};

// Complex product of a 2-channel (real, imag) mask grid with a 2-channel
// mono spectrogram grid of the same shape.
template <typename T>
ad::Tensor<T> complex_mask_multiply(const ad::Tensor<T>& mask, const ad::Tensor<T>& mono) {
  using namespace ad;
  if (mask.shape() != mono.shape() || mask.ndim() != 4 || mask.dim(1) != 2)
    op_error("complex_mask_multiply", "expected matching (N,2,F,T) grids, got " +
                                          shape_str(mask.shape()) + " and " + shape_str(mono.shape()));
  Tensor<T> mr = slice(mask, 1, 0, 1);
  Tensor<T> mi = slice(mask, 1, 1, 1);
  Tensor<T> ar = slice(mono, 1, 0, 1);
  Tensor<T> ai = slice(mono, 1, 1, 1);
  Tensor<T> re = sub(mul(mr, ar), mul(mi, ai));
  Tensor<T> im = add(mul(mr, ai), mul(mi, ar));
  return concat<T>({re, im}, 1);
}

// recover_channels inside the graph: left = (mono + diff) / 2, right = (mono - diff) / 2.
template <typename T>
std::pair<ad::Tensor<T>, ad::Tensor<T>> recover_binaural(const ad::Tensor<T>& mono,
                                                         const ad::Tensor<T>& diff) {
  ad::Tensor<T> left = ad::scale(ad::add(mono, diff), T(0.5));
  ad::Tensor<T> right = ad::scale(ad::sub(mono, diff), T(0.5));
  return {left, right};
}

}  // namespace ccs
