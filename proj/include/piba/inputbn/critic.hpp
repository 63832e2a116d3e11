#pragma once

#include <span>
#include <vector>

#include "piba/numcore/rng.hpp"
#include "piba/numcore/tape.hpp"

namespace piba::inputbn {

// Wasserstein critic over feature-shaped samples. Feature maps [C,H,W] get
// 3 conv layers and 2 fully connected layers; sequences [L,D] get one
// recurrent layer and a linear head; flat vectors [D] get a 2-layer MLP.
class Critic {
 public:
  enum class Arch { conv, recurrent, mlp };

  // Weights start uniform in [-clip, clip]; biases at zero.
  Critic(const Shape& feature_shape, double clip, RngStream& rng);

  Arch arch() const noexcept { return arch_; }
  std::vector<Tensor>& params() { return params_; }
  const std::vector<Tensor>& params() const { return params_; }
  std::vector<Var> bind(Tape& tape, bool trainable) const;

  // One score per sample: feats [B, ...feature_shape] -> [B].
  Var score(std::span<const Var> w, Var feats) const;
  Tensor score(const Tensor& feats) const;

  void clip_weights();
  double max_abs_weight() const;
  double clip() const noexcept { return clip_; }

 private:
  Arch arch_;
  Shape feature_shape_;
  double clip_;
  std::vector<Tensor> params_;
};

}  // namespace piba::inputbn
