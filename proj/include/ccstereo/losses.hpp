#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include <json.hpp>

#include "ccstereo/image.hpp"
#include "ccstereo/rng.hpp"
#include "ccstereo/tensor.hpp"

namespace ccs {

struct LossConfig {
  double lambda = 0.1;  // contrastive weight
  double zeta = 0.005;  // magnitude weight
  double eta = 1.0;     // phase weight
  double tau = 0.1;     // InfoNCE temperature

  nlohmann::json to_json() const {
    return {{"lambda", lambda}, {"zeta", zeta}, {"eta", eta}, {"tau", tau}};
  }

  static LossConfig from_json(const nlohmann::json& j) {
    LossConfig cfg;
    for (auto it = j.begin(); it != j.end(); ++it) {
      if (it.key() != "lambda" && it.key() != "zeta" && it.key() != "eta" && it.key() != "tau")
        throw std::invalid_argument("loss config: unknown key \"" + it.key() + "\"");
    }
    if (j.contains("lambda")) cfg.lambda = j["lambda"].get<double>();
    if (j.contains("zeta")) cfg.zeta = j["zeta"].get<double>();
    if (j.contains("eta")) cfg.eta = j["eta"].get<double>();
    if (j.contains("tau")) cfg.tau = j["tau"].get<double>();
    return cfg;
  }
};

namespace detail {

// Grid size without the channel axis: (N,2,F,T) -> F*T, normalization unit
// for the reconstruction losses.
template <typename T>
int64_t grid_bins(const ad::Tensor<T>& t) {
  if (t.ndim() != 4 || t.dim(1) != 2)
    ad::op_error("loss", "expected (N,2,F,T) complex grid, got " + ad::shape_str(t.shape()));
  return static_cast<int64_t>(t.dim(2)) * t.dim(3);
}

}  // namespace detail

// Mean squared error over real and imaginary parts, normalized by bins per
// item (each bin contributes its re^2 + im^2).
template <typename T>
ad::Tensor<T> loss_mse(const ad::Tensor<T>& gt, const ad::Tensor<T>& pred) {
  ad::detail::require_same_shape("loss_mse", gt, pred);
  const int64_t l = detail::grid_bins(gt) * gt.dim(0);
  ad::Tensor<T> d = ad::sub(gt, pred);
  return ad::scale(ad::sum_all(ad::mul(d, d)), static_cast<T>(1.0 / static_cast<double>(l)));
}

// L1 distance between magnitudes.
template <typename T>
ad::Tensor<T> loss_apm(const ad::Tensor<T>& gt, const ad::Tensor<T>& pred) {
  ad::detail::require_same_shape("loss_apm", gt, pred);
  const int64_t l = detail::grid_bins(gt) * gt.dim(0);
  auto mag = [](const ad::Tensor<T>& t) {
    return ad::hypot_op(ad::slice(t, 1, 0, 1), ad::slice(t, 1, 1, 1));
  };
  return ad::scale(ad::sum_all(ad::abs_op(ad::sub(mag(gt), mag(pred)))),
                   static_cast<T>(1.0 / static_cast<double>(l)));
}

namespace detail {

// Reference angles and the audible-bin mask for one ground-truth channel.
// The threshold is 1e-3 of the per-item peak magnitude; bins below it carry
// no usable phase. Both outputs are constants.
template <typename T>
void phase_targets(const ad::Tensor<T>& gt, ad::Tensor<T>* angles, ad::Tensor<T>* mask) {
  const int n = gt.dim(0);
  const int f = gt.dim(2);
  const int t = gt.dim(3);
  const int64_t plane = static_cast<int64_t>(f) * t;
  const std::vector<T>& v = gt.node()->values;
  std::vector<T> ang(static_cast<size_t>(n) * plane);
  std::vector<T> msk(static_cast<size_t>(n) * plane);
  for (int i = 0; i < n; ++i) {
    const T* re = v.data() + (static_cast<int64_t>(i) * 2) * plane;
    const T* im = re + plane;
    double peak = 0.0;
    for (int64_t k = 0; k < plane; ++k)
      peak = std::max(peak, static_cast<double>(std::hypot(re[k], im[k])));
    const double threshold = 1e-3 * peak;
    T* a = ang.data() + static_cast<int64_t>(i) * plane;
    T* m = msk.data() + static_cast<int64_t>(i) * plane;
    for (int64_t k = 0; k < plane; ++k) {
      a[k] = std::atan2(im[k], re[k]);
      m[k] = static_cast<double>(std::hypot(re[k], im[k])) > threshold ? T(1) : T(0);
    }
  }
  *angles = ad::Tensor<T>::leaf({n, 1, f, t}, std::move(ang), false);
  *mask = ad::Tensor<T>::leaf({n, 1, f, t}, std::move(msk), false);
}

template <typename T>
ad::Tensor<T> phase_term(const ad::Tensor<T>& gt, const ad::Tensor<T>& pred) {
  ad::detail::require_same_shape("loss_phs", gt, pred);
  ad::Tensor<T> angles, mask;
  phase_targets(gt, &angles, &mask);
  ad::Tensor<T> pred_angle = ad::atan2_op(ad::slice(pred, 1, 1, 1), ad::slice(pred, 1, 0, 1));
  ad::Tensor<T> delta = ad::wrap_angle_op(ad::sub(angles, pred_angle));
  return ad::sum_all(ad::mul(ad::mul(delta, delta), mask));
}

}  // namespace detail

// Squared wrapped phase difference over audible bins of both channels,
// normalized by bins per item (channels summed, not averaged).
template <typename T>
ad::Tensor<T> loss_phs(const ad::Tensor<T>& gt_left, const ad::Tensor<T>& gt_right,
                       const ad::Tensor<T>& pred_left, const ad::Tensor<T>& pred_right) {
  const int64_t l = detail::grid_bins(gt_left) * gt_left.dim(0);
  ad::Tensor<T> total =
      ad::add(detail::phase_term(gt_left, pred_left), detail::phase_term(gt_right, pred_right));
  return ad::scale(total, static_cast<T>(1.0 / static_cast<double>(l)));
}

template <typename T>
ad::Tensor<T> loss_rec(const ad::Tensor<T>& gt_diff, const ad::Tensor<T>& pred_diff,
                       const ad::Tensor<T>& gt_left, const ad::Tensor<T>& gt_right,
                       const ad::Tensor<T>& pred_left, const ad::Tensor<T>& pred_right,
                       const LossConfig& cfg) {
  ad::Tensor<T> out = loss_mse(gt_diff, pred_diff);
  out = ad::add(out, ad::scale(loss_apm(gt_diff, pred_diff), static_cast<T>(cfg.zeta)));
  out = ad::add(out, ad::scale(loss_phs(gt_left, gt_right, pred_left, pred_right),
                               static_cast<T>(cfg.eta)));
  return out;
}

template <typename T>
struct ContrastiveBatch {
  ad::Tensor<T> anchors;    // (N, D) unit-norm embeddings
  ad::Tensor<T> positives;  // (N, D), one per anchor
  ad::Tensor<T> negatives;  // (M, D), shared across anchors
};

// InfoNCE over cosine similarities. Every anchor sees its own positive and
// the full negative set; the log-sum-exp is stabilized by the detached
// global maximum, which cancels in the gradient.
template <typename T>
ad::Tensor<T> loss_scl(const ContrastiveBatch<T>& cb, const LossConfig& cfg) {
  using namespace ad;
  if (cfg.tau <= 0.0) throw std::invalid_argument("loss_scl: temperature must be positive");
  if (cb.anchors.ndim() != 2 || cb.positives.ndim() != 2 || cb.negatives.ndim() != 2)
    op_error("loss_scl", "embeddings must be rank 2");
  if (cb.anchors.shape() != cb.positives.shape())
    op_error("loss_scl", "anchor/positive count mismatch");
  if (cb.negatives.dim(0) < 1) throw std::invalid_argument("loss_scl: need at least one negative");
  if (cb.negatives.dim(1) != cb.anchors.dim(1))
    op_error("loss_scl", "negative embedding dim mismatch");

  const int n = cb.anchors.dim(0);
  Tensor<T> s_pos = reshape(sum_axis(mul(cb.anchors, cb.positives), 1), {n, 1});
  Tensor<T> s_neg = matmul(cb.anchors, permute(cb.negatives, {1, 0}));
  Tensor<T> logits = scale(concat<T>({s_pos, s_neg}, 1), static_cast<T>(1.0 / cfg.tau));

  const std::vector<T>& lv = logits.node()->values;
  T peak = lv[0];
  for (T v : lv) peak = std::max(peak, v);

  Tensor<T> lse =
      add_scalar(log_op(sum_axis(exp_op(add_scalar(logits, -peak)), 1)), peak);
  Tensor<T> pos_term = reshape(slice(logits, 1, 0, 1), {n});
  return mean_all(sub(lse, pos_term));
}

template <typename T>
ad::Tensor<T> total_loss(const ad::Tensor<T>& rec, const ad::Tensor<T>& scl,
                         const LossConfig& cfg) {
  return ad::add(rec, ad::scale(scl, static_cast<T>(cfg.lambda)));
}

// Partition the frame into rows x cols cells and permute them uniformly.
inline Image spatial_shuffle(const Image& frame, int rows, int cols, Rng* rng) {
  if (rows <= 0 || cols <= 0) throw std::invalid_argument("spatial_shuffle: grid must be positive");
  if (frame.height % rows != 0 || frame.width % cols != 0)
    throw std::invalid_argument("spatial_shuffle: image dims not divisible by grid");
  const int ch = frame.height / rows;
  const int cw = frame.width / cols;
  std::vector<int> perm(static_cast<size_t>(rows) * cols);
  for (size_t i = 0; i < perm.size(); ++i) perm[i] = static_cast<int>(i);
  rng->shuffle(perm.begin(), perm.end());

  Image out = Image::filled(frame.width, frame.height, 0);
  for (int cell = 0; cell < static_cast<int>(perm.size()); ++cell) {
    const int dst_r = (cell / cols) * ch;
    const int dst_c = (cell % cols) * cw;
    const int src_r = (perm[cell] / cols) * ch;
    const int src_c = (perm[cell] % cols) * cw;
    for (int y = 0; y < ch; ++y) {
      const uint8_t* src =
          frame.pixels.data() + (static_cast<size_t>(src_r + y) * frame.width + src_c) * 3;
      uint8_t* dst = out.pixels.data() + (static_cast<size_t>(dst_r + y) * out.width + dst_c) * 3;
      std::copy(src, src + static_cast<size_t>(cw) * 3, dst);
    }
  }
  return out;
}

}  // namespace ccs
