#include "piba/featbn/feature_bottleneck.hpp"

#include <cmath>

#include "piba/error.hpp"
#include "piba/numcore/ops.hpp"
#include "piba/numcore/optim.hpp"

namespace piba::featbn {

FeatureStats stats_over_batch(const Tensor& batch) {
  if (batch.rank() < 2 || batch.dim(0) < 2) {
    throw Error(ErrorKind::invalid_argument, "feature statistics need at least 2 samples");
  }
  const std::size_t n = batch.dim(0), per = batch.size() / n;
  const Shape shape(batch.shape().begin() + 1, batch.shape().end());
  FeatureStats s{Tensor(shape, 0.0), Tensor(shape, 0.0)};
  for (std::size_t k = 0; k < n; ++k) {
    for (std::size_t i = 0; i < per; ++i) s.mu[i] += batch[k * per + i];
  }
  for (auto& v : s.mu.data()) v /= static_cast<double>(n);
  for (std::size_t k = 0; k < n; ++k) {
    for (std::size_t i = 0; i < per; ++i) {
      const double d = batch[k * per + i] - s.mu[i];
      s.sigma[i] += d * d;
    }
  }
  for (auto& v : s.sigma.data()) v = std::max(kSigmaFloor, std::sqrt(v / static_cast<double>(n - 1)));
  return s;
}

FeatureStats estimate_feature_stats(const models::Network& net, std::string_view layer, const Tensor& samples) {
  if (samples.rank() < 1 || samples.dim(0) < 2) {
    throw Error(ErrorKind::invalid_argument, "feature statistics need at least 2 samples");
  }
  return stats_over_batch(models::feature_activations(net, layer, samples));
}

double bottleneck_kl(double mask, double value, double prior_mask, double mu, double sigma) {
  if (!(mask >= 0.0 && mask < 1.0) || !(prior_mask >= 0.0 && prior_mask <= 1.0)) {
    throw Error(ErrorKind::invalid_argument, "bottleneck_kl: mask must lie in [0,1) and prior in [0,1]");
  }
  if (!(sigma > 0.0)) throw Error(ErrorKind::invalid_argument, "bottleneck_kl: sigma must be positive");
  const double a = 1.0 - prior_mask * mask;
  const double b = 1.0 - mask;
  const double shift = (value - mu) * (mask - prior_mask * mask);
  return std::log(a / b) + b * b / (2.0 * a * a) + shift * shift / (2.0 * a * a * sigma * sigma) - 0.5;
}

Tensor bottleneck_kl(const Tensor& mask, const Tensor& value, const Tensor& prior_mask, const Tensor& mu,
                     const Tensor& sigma) {
  for (const Tensor* t : {&value, &prior_mask, &mu, &sigma}) {
    if (t->shape() != mask.shape()) throw Error(ErrorKind::shape, "bottleneck_kl: operand shapes differ");
  }
  Tensor out(mask.shape());
  for (std::size_t i = 0; i < mask.size(); ++i) {
    out[i] = bottleneck_kl(mask[i], value[i], prior_mask[i], mu[i], sigma[i]);
  }
  return out;
}

Var bottleneck_kl(Var mask_logits, const Tensor& value, const Tensor& prior_mask, const Tensor& mu,
                  const Tensor& sigma) {
  const Shape& shape = mask_logits.shape();
  for (const Tensor* t : {&value, &prior_mask, &mu, &sigma}) {
    if (t->shape() != shape) throw Error(ErrorKind::shape, "bottleneck_kl: operand shapes differ");
  }
  Tape& tape = mask_logits.tape();
  // c = (1-p)^2 (v-mu)^2 / sigma^2 folds everything that does not depend on the mask.
  Tensor c(shape);
  for (std::size_t i = 0; i < c.size(); ++i) {
    if (!(sigma[i] > 0.0)) throw Error(ErrorKind::invalid_argument, "bottleneck_kl: sigma must be positive");
    const double z = (1.0 - prior_mask[i]) * (value[i] - mu[i]) / sigma[i];
    c[i] = z * z;
  }
  Var lam = sigmoid(mask_logits);
  Var open = 1.0 - lam;
  Var log_a = log(1.0 - lam * tape.constant(prior_mask));
  Var inv_a2 = exp(-2.0 * log_a);
  Var spread = open * open + lam * lam * tape.constant(std::move(c));
  return log_a + softplus(mask_logits) + 0.5 * (inv_a2 * spread) - 0.5;
}

Tensor FeatureFit::sample(RngStream& stream) const {
  const Tensor eps = gaussian(stream, stats.mu, stats.sigma);
  Tensor z(lambda.shape());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = lambda[i] * features[i] + (1.0 - lambda[i]) * eps[i];
  return z;
}

Var feature_loss(const models::Network& net, std::size_t layer, Var alpha, const Tensor& features,
                 const FeatureStats& stats, const Tensor& eta, std::size_t target, double beta) {
  Tape& tape = alpha.tape();
  const std::size_t draws = eta.dim(0), per = features.size();
  // Z = eps + λ (R - eps) with eps = mu + sigma * eta held constant.
  Shape batch_shape = features.shape();
  batch_shape.insert(batch_shape.begin(), draws);
  Tensor eps(batch_shape), gap(batch_shape);
  for (std::size_t d = 0; d < draws; ++d) {
    for (std::size_t i = 0; i < per; ++i) {
      const double e = stats.mu[i] + stats.sigma[i] * eta[d * per + i];
      eps[d * per + i] = e;
      gap[d * per + i] = features[i] - e;
    }
  }
  Var z = tape.constant(std::move(eps)) + tile(sigmoid(alpha), draws) * tape.constant(std::move(gap));
  Var logits = z;
  if (layer < net.last_layer()) {
    const auto w = net.bind(tape, false);
    logits = net.forward(w, z, layer + 1, net.last_layer());
  }
  const std::vector<int> targets(draws, static_cast<int>(target));
  Var kl = mean(bottleneck_kl(alpha, features, Tensor(features.shape(), 0.0), stats.mu, stats.sigma));
  return softmax_cross_entropy(logits, targets) + beta * kl;
}

FeatureFit fit_feature_bottleneck(const models::Network& net, std::string_view layer, const Tensor& input,
                                  std::size_t target, const FeatureStats& stats, const FeatureBottleneckConfig& cfg,
                                  RngStream& stream) {
  if (cfg.noise_draws == 0) throw Error(ErrorKind::invalid_argument, "need at least one noise draw");
  const std::size_t idx = net.layer_index(layer);
  Shape batched = input.shape();
  batched.insert(batched.begin(), 1);
  const Tensor r = models::feature_activations(net, layer, input.reshaped(batched)).slice(0);
  if (r.shape() != stats.mu.shape()) throw Error(ErrorKind::shape, "feature stats do not match layer " + std::string(layer));

  FeatureFit fit;
  fit.layer = std::string(layer);
  fit.features = r;
  fit.stats = stats;
  Tensor alpha(r.shape(), cfg.init_logit);
  OptimState opt(OptimConfig{.kind = OptimKind::adam, .lr = cfg.lr});
  Shape eta_shape = r.shape();
  eta_shape.insert(eta_shape.begin(), cfg.noise_draws);

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    Tape tape;
    Var a = tape.parameter(alpha);
    Var loss = feature_loss(net, idx, a, r, stats, stream.normal_tensor(eta_shape), target, cfg.beta);
    fit.loss_trace.push_back(loss.value().item());
    const Tensor g = tape.backward(loss)[a];
    Tensor* params[] = {&alpha};
    adam_step(opt, params, std::span<const Tensor>(&g, 1));
  }
  fit.lambda = Tensor(alpha.shape());
  for (std::size_t i = 0; i < alpha.size(); ++i) fit.lambda[i] = 1.0 / (1.0 + std::exp(-alpha[i]));
  return fit;
}

AttributionMap iba_attribution(const Tensor& lambda, const Shape& input_shape) {
  AttributionMap map;
  if (input_shape.size() == 3) {
    if (lambda.rank() != 3) throw Error(ErrorKind::shape, "image attribution needs λ of shape [C,h,w]");
    map.values = normalize_minmax(resize_bilinear(channel_mean(lambda), input_shape[1], input_shape[2]));
  } else if (input_shape.size() == 2) {
    if (lambda.rank() != 2) throw Error(ErrorKind::shape, "sequence attribution needs λ of shape [L,D]");
    map.values = normalize_minmax(resize_linear(feature_mean(lambda), input_shape[0]));
  } else {
    throw Error(ErrorKind::shape, "unsupported input shape " + shape_string(input_shape));
  }
  map.provenance = R"({"method":"iba"})";
  return map;
}

}  // namespace piba::featbn
