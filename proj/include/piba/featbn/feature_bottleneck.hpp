#pragma once

#include <string>
#include <vector>

#include "piba/attribution.hpp"
#include "piba/models/network.hpp"
#include "piba/numcore/rng.hpp"
#include "piba/numcore/tape.hpp"

namespace piba::featbn {

inline constexpr double kSigmaFloor = 1e-5;

// Elementwise Gaussian fit of a quantity over a batch; shapes exclude the batch axis.
struct FeatureStats {
  Tensor mu;
  Tensor sigma;
};

// Per-element mean and unbiased std over the leading axis of `batch`, with the
// std clamped at kSigmaFloor. Throws invalid_argument for fewer than 2 samples.
FeatureStats stats_over_batch(const Tensor& batch);
FeatureStats estimate_feature_stats(const models::Network& net, std::string_view layer, const Tensor& samples);

// Closed-form KL between N(λv + (1-λ)μ, (1-λ)²σ²) and
// N(pλv + (1-pλ)μ, (1-pλ)²σ²), elementwise. p = 0 gives the plain feature-level KL.
Tensor bottleneck_kl(const Tensor& mask, const Tensor& value, const Tensor& prior_mask, const Tensor& mu,
                     const Tensor& sigma);
double bottleneck_kl(double mask, double value, double prior_mask, double mu, double sigma);

// Differentiable form in terms of the mask logits α (λ = sigmoid(α)); uses
// log(1-λ) = -softplus(α) so saturated masks stay finite.
Var bottleneck_kl(Var mask_logits, const Tensor& value, const Tensor& prior_mask, const Tensor& mu,
                  const Tensor& sigma);

struct FeatureBottleneckConfig {
  double beta = 10.0;
  std::size_t steps = 10;
  double lr = 1.0;
  std::size_t noise_draws = 10;
  double init_logit = 5.0;
};

// Fitted feature mask plus what is needed to draw Z* = λ*R + (1-λ*)ε.
struct FeatureFit {
  std::string layer;
  Tensor lambda;    // λ* in R's per-sample shape
  Tensor features;  // R for the explained input
  FeatureStats stats;
  std::vector<double> loss_trace;  // total loss at each step, before its update

  Tensor sample(RngStream& stream) const;
};

// The bottleneck loss at logits α: mean CE of the head on Z over the given noise
// draws (eta: [D, ...R]) + beta * mean KL.
Var feature_loss(const models::Network& net, std::size_t layer, Var alpha, const Tensor& features,
                 const FeatureStats& stats, const Tensor& eta, std::size_t target, double beta);

FeatureFit fit_feature_bottleneck(const models::Network& net, std::string_view layer, const Tensor& input,
                                  std::size_t target, const FeatureStats& stats, const FeatureBottleneckConfig& cfg,
                                  RngStream& stream);

// Channel mean of λ* resized to the input's spatial extent, min-max normalized.
// Image layers: λ* [C,h,w] -> [H,W]. Sequence layers: λ* [L,D] -> [L].
AttributionMap iba_attribution(const Tensor& lambda, const Shape& input_shape);

}  // namespace piba::featbn
