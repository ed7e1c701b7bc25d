#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "ccstereo/rng.hpp"
#include "ccstereo/tensor.hpp"

namespace ccs::ad {

struct GradCheckResult {
  bool pass = false;
  double max_rel_err = 0.0;
  std::string detail;
};

// Central-difference check of reverse-mode gradients. fn must rebuild the
// graph from the passed leaves on every call. max_probes <= 0 probes every
// element of every input; a positive value probes a seeded subset per input.
// Non-finite values surface in the result, never as exceptions.
inline GradCheckResult grad_check(
    const std::function<Tensor<double>(const std::vector<Tensor<double>>&)>& fn,
    std::vector<Tensor<double>> inputs, double h = 1e-4, double tol = 1e-3, int max_probes = 0,
    uint64_t probe_seed = 1) {
  GradCheckResult res;

  for (auto& in : inputs) in.zero_grad();
  Tensor<double> loss;
  try {
    loss = fn(inputs);
  } catch (const std::exception& e) {
    res.detail = std::string("forward threw: ") + e.what();
    return res;
  }
  if (loss.size() != 1) {
    res.detail = "loss is not scalar, shape " + shape_str(loss.shape());
    return res;
  }
  if (!std::isfinite(loss.item())) {
    res.detail = "non-finite loss value";
    return res;
  }
  backward(loss);

  std::vector<std::vector<double>> analytic;
  analytic.reserve(inputs.size());
  for (auto& in : inputs) {
    analytic.push_back(in.grad());
    for (double g : analytic.back())
      if (!std::isfinite(g)) {
        res.detail = "non-finite analytic gradient";
        return res;
      }
  }

  Rng rng(probe_seed);
  res.pass = true;
  for (size_t ti = 0; ti < inputs.size(); ++ti) {
    auto& vals = inputs[ti].values();
    std::vector<size_t> probes;
    if (max_probes <= 0 || vals.size() <= static_cast<size_t>(max_probes)) {
      probes.resize(vals.size());
      std::iota(probes.begin(), probes.end(), size_t{0});
    } else {
      for (int i = 0; i < max_probes; ++i) probes.push_back(rng.below(vals.size()));
    }

    for (size_t idx : probes) {
      // Central difference at the base step; a mismatch is re-probed at a
      // finer step before it counts as a failure. Truncation error (kink
      // straddles, large third derivatives) converges to the analytic value
      // as the step shrinks; a wrong gradient fails at every step size.
      bool bad_eval = false;
      auto central = [&](double step) {
        const double orig = vals[idx];
        vals[idx] = orig + step;
        const double fp = fn(inputs).item();
        vals[idx] = orig - step;
        const double fm = fn(inputs).item();
        vals[idx] = orig;
        if (!std::isfinite(fp) || !std::isfinite(fm)) bad_eval = true;
        return (fp - fm) / (2.0 * step);
      };
      const double ad = analytic[ti][idx];
      // Denominator floor keeps truncation noise on near-zero gradients from
      // registering as a relative-error failure.
      auto rel_of = [&](double fd) {
        return std::abs(ad - fd) / std::max(std::abs(ad) + std::abs(fd), 1e-6);
      };
      double rel = rel_of(central(h));
      if (rel > tol && !bad_eval) rel = std::min(rel, rel_of(central(h / 4.0)));
      if (bad_eval) {
        res.pass = false;
        res.detail = "non-finite perturbed loss at input " + std::to_string(ti) + " element " +
                     std::to_string(idx);
        return res;
      }
      if (rel > res.max_rel_err) res.max_rel_err = rel;
      if (rel > tol && res.pass) {
        res.pass = false;
        std::ostringstream os;
        os << "input " << ti << " element " << idx << ": analytic " << ad << " (rel " << rel
           << " after step refinement)";
        res.detail = os.str();
      }
    }
  }
  return res;
}

}  // namespace ccs::ad
