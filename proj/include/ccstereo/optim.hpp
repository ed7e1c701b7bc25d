#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "ccstereo/tensor.hpp"

namespace ccs::ad {

template <typename T>
struct AdamGroup {
  std::vector<Tensor<T>> params;
  double lr = 1e-3;
};

// Adam with bias correction. Moments are stored at parameter precision so a
// checkpoint round-trip reproduces the next update bitwise.
template <typename T>
class Adam {
 public:
  explicit Adam(std::vector<AdamGroup<T>> groups, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8)
      : groups_(std::move(groups)), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& g : groups_)
      for (const auto& p : g.params) {
        m_.emplace_back(p.size(), T(0));
        v_.emplace_back(p.size(), T(0));
      }
  }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    size_t pi = 0;
    for (auto& g : groups_) {
      for (auto& p : g.params) {
        auto& node = *p.node();
        if (node.grad.size() != node.values.size())
          throw std::logic_error("adam_step: parameter has no gradient");
        auto& m = m_[pi];
        auto& v = v_[pi];
        ++pi;
        for (size_t i = 0; i < node.values.size(); ++i) {
          const double gi = static_cast<double>(node.grad[i]);
          const double mi = beta1_ * static_cast<double>(m[i]) + (1.0 - beta1_) * gi;
          const double vi = beta2_ * static_cast<double>(v[i]) + (1.0 - beta2_) * gi * gi;
          m[i] = static_cast<T>(mi);
          v[i] = static_cast<T>(vi);
          const double update = g.lr * (mi / bc1) / (std::sqrt(vi / bc2) + eps_);
          node.values[i] = static_cast<T>(static_cast<double>(node.values[i]) - update);
        }
        std::fill(node.grad.begin(), node.grad.end(), T(0));
      }
    }
  }

  void zero_grad() {
    for (auto& g : groups_)
      for (auto& p : g.params) p.zero_grad();
  }

  int64_t step_count() const { return t_; }
  void set_step_count(int64_t t) { t_ = t; }
  size_t state_size() const { return m_.size(); }
  std::vector<T>& moment_m(size_t i) { return m_[i]; }
  std::vector<T>& moment_v(size_t i) { return v_[i]; }
  const std::vector<T>& moment_m(size_t i) const { return m_[i]; }
  const std::vector<T>& moment_v(size_t i) const { return v_[i]; }
  const std::vector<AdamGroup<T>>& groups() const { return groups_; }

 private:
  std::vector<AdamGroup<T>> groups_;
  double beta1_, beta2_, eps_;
  int64_t t_ = 0;
  std::vector<std::vector<T>> m_, v_;
};

}  // namespace ccs::ad
