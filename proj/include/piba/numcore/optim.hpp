#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "piba/numcore/tensor.hpp"

namespace piba {

enum class OptimKind { adam, rmsprop };

struct OptimConfig {
  OptimKind kind = OptimKind::adam;
  double lr = 1e-3;
  double beta1 = 0.9;    // adam
  double beta2 = 0.999;  // adam
  double alpha = 0.99;   // rmsprop
  double eps = 1e-8;
};

// Accumulators are created on the first step to match the parameter shapes.
struct OptimState {
  explicit OptimState(OptimConfig cfg) : config(cfg) {}

  OptimConfig config;
  std::vector<Tensor> first;   // adam only
  std::vector<Tensor> second;  // squared-gradient average
  std::uint64_t step = 0;
};

// Bias-corrected Adam update in place.
void adam_step(OptimState& state, std::span<Tensor* const> params, std::span<const Tensor> grads);
// RMSProp without momentum or centering; v starts at zero (no bias correction).
void rmsprop_step(OptimState& state, std::span<Tensor* const> params, std::span<const Tensor> grads);
// Dispatches on state.config.kind.
void optimizer_step(OptimState& state, std::span<Tensor* const> params, std::span<const Tensor> grads);

}  // namespace piba
