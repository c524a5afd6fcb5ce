#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "fedhp/learncore/model.hpp"
#include "fedhp/learncore/tensor.hpp"

namespace fedhp::learncore {

/// Step decay: rate(step) = initial * 0.5^floor(step / period). Never zero.
/// The full-scale configuration uses a period of 2e4 iterations; the desk
/// default is 500.
struct LRSchedule {
  double initial = 1e-4;
  std::uint64_t halving_period = 500;

  double rate(std::uint64_t step) const {
    return initial * std::pow(0.5, static_cast<double>(step / halving_period));
  }
};

using GradList = std::vector<std::pair<std::string, TensorF>>;

/// Bias-corrected Adam (beta1 0.9, beta2 0.999). Moments are stored in
/// float alongside the parameters; the per-element update math runs in
/// double.
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  std::vector<std::pair<std::string, TensorF>> m;
  std::vector<std::pair<std::string, TensorF>> v;

  static AdamState like(const ParamGroup& group);
};

/// One Adam update over every tensor of the group. `grads` must be
/// name-aligned with the group (collect_grads order). Advances state.step.
void adam_step(ParamGroup& params, const GradList& grads, AdamState& state,
               double lr);

}  // namespace fedhp::learncore
