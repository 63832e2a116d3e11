#include "piba/inputbn/input_bottleneck.hpp"

#include <algorithm>
#include <cmath>

#include "piba/error.hpp"
#include "piba/numcore/ops.hpp"
#include "piba/numcore/optim.hpp"

namespace piba::inputbn {

namespace {

Shape with_batch(const Shape& s, std::size_t n) {
  Shape out = s;
  out.insert(out.begin(), n);
  return out;
}

Tensor sigmoid_of(const Tensor& t) {
  Tensor out(t.shape());
  for (std::size_t i = 0; i < t.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-t[i]));
  return out;
}

double population_std(const Tensor& t) {
  double m = 0.0;
  for (double v : t.data()) m += v;
  m /= static_cast<double>(t.size());
  double s = 0.0;
  for (double v : t.data()) s += (v - m) * (v - m);
  return std::sqrt(s / static_cast<double>(t.size()));
}

Var mean_score(const Critic& critic, std::span<const Var> w, Var feats) { return mean(critic.score(w, feats)); }

template <typename Fn>
auto staged(const char* stage, Fn&& fn) {
  try {
    return fn();
  } catch (const Error& e) {
    throw e.in_stage(stage);
  }
}

}  // namespace

Tensor sample_local_inputs(const Tensor& input, std::size_t n, RngStream& stream, InputRange range,
                           double jitter_scale) {
  if (n == 0) throw Error(ErrorKind::invalid_argument, "need at least one local sample");
  const double sd = jitter_scale * population_std(input);
  const std::size_t per = input.size();
  Tensor out(with_batch(input.shape(), n));
  for (std::size_t k = 0; k < n; ++k) {
    for (std::size_t i = 0; i < per; ++i) {
      const double v = sd > 0.0 ? input[i] + sd * stream.normal() : input[i];
      out[k * per + i] = std::clamp(v, range.lo, range.hi);
    }
  }
  return out;
}

Tensor sample_target_bank(const featbn::FeatureFit& fit, std::size_t n, RngStream& stream) {
  if (n == 0) throw Error(ErrorKind::invalid_argument, "target bank must be nonempty");
  std::vector<Tensor> draws;
  draws.reserve(n);
  for (std::size_t k = 0; k < n; ++k) draws.push_back(fit.sample(stream));
  return stack(draws);
}

// ---- GenEstimator ----

GenEstimator::GenEstimator(Prefix prefix, Tensor input, Tensor bank, const FeatureStats& input_stats,
                           InputRange range, GenConfig cfg, std::uint64_t seed)
    : prefix_(std::move(prefix)),
      input_(std::move(input)),
      bank_(std::move(bank)),
      range_(range),
      cfg_(cfg),
      rng_(seed, 0x47454EULL),
      critic_([&] {
        if (bank_.rank() < 2 || bank_.dim(0) == 0) throw Error(ErrorKind::invalid_argument, "target bank is empty");
        RngStream init(seed, 0x435249ULL);
        return Critic(Shape(bank_.shape().begin() + 1, bank_.shape().end()), cfg.clip, init);
      }()),
      lambda_logits_(input_.shape(), 0.0),
      mu_(input_stats.mu),
      sigma_raw_(input_stats.sigma.shape()),
      gen_opt_(OptimConfig{.kind = OptimKind::rmsprop, .lr = cfg.lr}),
      critic_opt_(OptimConfig{.kind = OptimKind::rmsprop, .lr = cfg.critic_lr}) {
  if (mu_.shape() != input_.shape()) throw Error(ErrorKind::shape, "input statistics do not match the input");
  if (cfg_.batch == 0 || cfg_.critic_every == 0) throw Error(ErrorKind::invalid_argument, "bad generator schedule");
  // softplus^-1 so that σ_G starts at σ_I
  for (std::size_t i = 0; i < sigma_raw_.size(); ++i) sigma_raw_[i] = std::log(std::expm1(input_stats.sigma[i]));
}

Tensor GenEstimator::lambda() const { return sigmoid_of(lambda_logits_); }

Tensor GenEstimator::sigma() const {
  Tensor out(sigma_raw_.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log1p(std::exp(sigma_raw_[i]));
  return out;
}

Var GenEstimator::generate(Tape& tape, Var logits, Var mu, Var sigma_raw, std::size_t n, RngStream& stream) const {
  Var local = tape.constant(sample_local_inputs(input_, n, stream, range_, cfg_.jitter_scale));
  Var eps = gaussian_reparam(tile(mu, n), tile(softplus(sigma_raw), n), stream.normal_tensor(with_batch(input_.shape(), n)));
  Var lam = tile(sigmoid(logits), n);
  return eps + lam * (local - eps);
}

Tensor GenEstimator::sample_generated(std::size_t n, RngStream& stream) const {
  Tape tape;
  return generate(tape, tape.constant(lambda_logits_), tape.constant(mu_), tape.constant(sigma_raw_), n, stream).value();
}

Var GenEstimator::generator_objective(Var logits, Var mu, Var sigma_raw, RngStream& stream) const {
  Tape& tape = logits.tape();
  const auto w = critic_.bind(tape, false);
  Var fake = prefix_(generate(tape, logits, mu, sigma_raw, cfg_.batch, stream));
  return -mean_score(critic_, w, fake);
}

void GenEstimator::generator_step() {
  Tape tape;
  Var logits = tape.parameter(lambda_logits_);
  Var mu = tape.parameter(mu_);
  Var sraw = tape.parameter(sigma_raw_);
  Var loss = generator_objective(logits, mu, sraw, rng_);
  const Gradients g = tape.backward(loss);
  Tensor* params[] = {&lambda_logits_, &mu_, &sigma_raw_};
  const Tensor grads[] = {g[logits], g[mu], g[sraw]};
  rmsprop_step(gen_opt_, params, grads);
  ++gen_updates_;
}

void GenEstimator::critic_step() {
  const std::size_t n = std::min(cfg_.batch, bank_.dim(0));
  const auto idx = rng_.sample_without_replacement(bank_.dim(0), n);
  std::vector<Tensor> real_rows;
  for (auto i : idx) real_rows.push_back(bank_.slice(i));
  Tensor fake_feats;
  {
    Tape gen_tape;
    const Tensor z = sample_generated(n, rng_);
    fake_feats = prefix_(gen_tape.constant(z)).value();
  }
  Tape tape;
  const auto w = critic_.bind(tape, true);
  Var real = tape.constant(stack(real_rows));
  Var fake = tape.constant(std::move(fake_feats));
  Var loss = mean_score(critic_, w, fake) - mean_score(critic_, w, real);
  const Gradients g = tape.backward(loss);
  std::vector<Tensor*> params;
  std::vector<Tensor> grads;
  for (std::size_t i = 0; i < w.size(); ++i) {
    params.push_back(&critic_.params()[i]);
    grads.push_back(g[w[i]]);
  }
  rmsprop_step(critic_opt_, params, grads);
  critic_.clip_weights();
  max_clipped_ = std::max(max_clipped_, critic_.max_abs_weight());
  critic_trace_.push_back(loss.value().item());
}

double GenEstimator::wasserstein_estimate(std::size_t n, RngStream& stream) const {
  n = std::min(n, bank_.dim(0));
  const auto idx = stream.sample_without_replacement(bank_.dim(0), n);
  std::vector<Tensor> real_rows;
  for (auto i : idx) real_rows.push_back(bank_.slice(i));
  Tape tape;
  const Tensor fake = prefix_(tape.constant(sample_generated(n, stream))).value();
  const Tensor sr = critic_.score(stack(real_rows));
  const Tensor sf = critic_.score(fake);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) total += sr[i] - sf[i];
  return std::abs(total / static_cast<double>(n));
}

void GenEstimator::train() {
  const std::size_t per_epoch = (bank_.dim(0) + cfg_.batch - 1) / cfg_.batch;
  RngStream eval_rng = rng_.split(0x4556414CULL);
  for (std::size_t s = 0; s < cfg_.critic_warmup; ++s) critic_step();
  if (cfg_.eval_samples > 0) wasserstein_trace_.push_back(wasserstein_estimate(cfg_.eval_samples, eval_rng));
  for (std::size_t epoch = 0; epoch < cfg_.epochs; ++epoch) {
    for (std::size_t s = 0; s < per_epoch; ++s) {
      generator_step();
      if (gen_updates_ % cfg_.critic_every == 0) critic_step();
    }
    if (cfg_.eval_samples > 0) wasserstein_trace_.push_back(wasserstein_estimate(cfg_.eval_samples, eval_rng));
  }
}

// ---- input bottleneck ----

Tensor sample_input_bottleneck(const Tensor& input, const Tensor& mask, const FeatureStats& input_stats,
                               const Tensor& eta) {
  const std::size_t per = input.size(), draws = eta.size() / per;
  Tensor out(eta.shape());
  for (std::size_t d = 0; d < draws; ++d) {
    for (std::size_t i = 0; i < per; ++i) {
      const double eps = input_stats.mu[i] + input_stats.sigma[i] * eta[d * per + i];
      out[d * per + i] = mask[i] * input[i] + (1.0 - mask[i]) * eps;
    }
  }
  return out;
}

Tensor compose_input_bottleneck(const Tensor& input, const Tensor& lambda_g, const Tensor& mask,
                                const FeatureStats& input_stats, const Tensor& eta) {
  const std::size_t per = input.size(), draws = eta.size() / per;
  Tensor out(eta.shape());
  for (std::size_t d = 0; d < draws; ++d) {
    for (std::size_t i = 0; i < per; ++i) {
      const double eps = input_stats.mu[i] + input_stats.sigma[i] * eta[d * per + i];
      const double zg = lambda_g[i] * input[i] + (1.0 - lambda_g[i]) * eps;
      out[d * per + i] = mask[i] * zg + (1.0 - mask[i]) * eps;
    }
  }
  return out;
}

Var input_loss(const models::Network& net, Var mask_logits, const Tensor& input, const Tensor& lambda_g,
               const FeatureStats& input_stats, const Tensor& eta, std::size_t target, double beta) {
  Tape& tape = mask_logits.tape();
  const std::size_t per = input.size(), draws = eta.dim(0);
  Tensor eps(eta.shape()), gap(eta.shape());
  for (std::size_t d = 0; d < draws; ++d) {
    for (std::size_t i = 0; i < per; ++i) {
      const double e = input_stats.mu[i] + input_stats.sigma[i] * eta[d * per + i];
      eps[d * per + i] = e;
      gap[d * per + i] = input[i] - e;
    }
  }
  Var z = tape.constant(std::move(eps)) + tile(sigmoid(mask_logits), draws) * tape.constant(std::move(gap));
  const auto w = net.bind(tape, false);
  Var logits = net.forward(w, z, 0, net.last_layer());
  const std::vector<int> targets(draws, static_cast<int>(target));
  Var kl = mean(featbn::bottleneck_kl(mask_logits, input, lambda_g, input_stats.mu, input_stats.sigma));
  return softmax_cross_entropy(logits, targets) + beta * kl;
}

InputFit fit_input_bottleneck(const models::Network& net, const Tensor& input, std::size_t target,
                              const Tensor& lambda_g, const FeatureStats& input_stats,
                              const InputBottleneckConfig& cfg, RngStream& stream) {
  if (lambda_g.shape() != input.shape() || input_stats.mu.shape() != input.shape()) {
    throw Error(ErrorKind::shape, "input bottleneck operands must match the input shape");
  }
  if (cfg.noise_draws == 0) throw Error(ErrorKind::invalid_argument, "need at least one noise draw");
  Tensor logits(input.shape(), cfg.init_logit);
  OptimState opt(OptimConfig{.kind = OptimKind::adam, .lr = cfg.lr});
  InputFit fit;
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    Tape tape;
    Var m = tape.parameter(logits);
    Var loss = input_loss(net, m, input, lambda_g, input_stats,
                          stream.normal_tensor(with_batch(input.shape(), cfg.noise_draws)), target, cfg.beta);
    fit.loss_trace.push_back(loss.value().item());
    const Tensor g = tape.backward(loss)[m];
    Tensor* params[] = {&logits};
    adam_step(opt, params, std::span<const Tensor>(&g, 1));
  }
  fit.mask = sigmoid_of(logits);
  return fit;
}

double target_probability(const models::Network& net, const Tensor& input, std::size_t target, const Tensor& mask,
                          const FeatureStats& input_stats, std::size_t draws, RngStream& stream) {
  const Tensor z = sample_input_bottleneck(input, mask, input_stats, stream.normal_tensor(with_batch(input.shape(), draws)));
  const Tensor p = softmax_rows(models::predict_logits(net, z));
  double total = 0.0;
  for (std::size_t d = 0; d < draws; ++d) total += p[d * p.dim(1) + target];
  return total / static_cast<double>(draws);
}

AttributionMap mask_attribution(const Tensor& mask, const Shape& input_shape) {
  if (mask.shape() != input_shape) throw Error(ErrorKind::shape, "mask does not match the input shape");
  AttributionMap map;
  if (input_shape.size() == 3) {
    map.values = normalize_minmax(channel_mean(mask));
  } else if (input_shape.size() == 2) {
    map.values = normalize_minmax(feature_mean(mask));
  } else {
    map.values = normalize_minmax(mask);
  }
  return map;
}

// ---- pipeline ----

InputIbaConfig sequence_config() {
  InputIbaConfig c;
  c.feature.beta = 15.0;
  c.feature.lr = 5e-5;
  c.input.beta = 30.0;
  c.input.steps = 30;
  return c;
}

InputIbaExplainer::InputIbaExplainer(const models::Network& net, std::string layer, const Tensor& training_inputs,
                                     InputIbaConfig cfg)
    : net_(net), layer_(std::move(layer)), cfg_(cfg) {
  net_.layer_index(layer_);
  feature_stats_ = featbn::estimate_feature_stats(net_, layer_, training_inputs);
  input_stats_ = featbn::stats_over_batch(training_inputs);
  const auto [lo, hi] = std::minmax_element(training_inputs.data().begin(), training_inputs.data().end());
  range_ = {*lo, *hi};
}

InputIbaResult InputIbaExplainer::explain(const Tensor& input, std::size_t target, std::uint64_t seed) const {
  if (input.shape() != net_.input_shape()) {
    throw Error(ErrorKind::shape, "input " + shape_string(input.shape()) + " does not match the model");
  }
  InputIbaResult out;
  out.feature = staged("feature_bottleneck", [&] {
    RngStream rng(seed, 1);
    return featbn::fit_feature_bottleneck(net_, layer_, input, target, feature_stats_, cfg_.feature, rng);
  });
  const Tensor bank = staged("target_bank", [&] {
    RngStream rng(seed, 2);
    return sample_target_bank(out.feature, cfg_.bank_size, rng);
  });
  staged("generator", [&] {
    const std::size_t last = net_.layer_index(layer_);
    Prefix prefix = [this, last](Var z) {
      const auto w = net_.bind(z.tape(), false);
      return net_.forward(w, z, 0, last);
    };
    GenEstimator gen(prefix, input, bank, input_stats_, range_, cfg_.gen, seed);
    gen.train();
    out.lambda_g = gen.lambda();
    out.wasserstein_trace = gen.wasserstein_trace();
    return 0;
  });
  out.input = staged("input_bottleneck", [&] {
    RngStream rng(seed, 4);
    return fit_input_bottleneck(net_, input, target, out.lambda_g, input_stats_, cfg_.input, rng);
  });
  out.map = mask_attribution(out.input.mask, input.shape());
  out.map.provenance = R"({"method":"inputiba","seed":)" + std::to_string(seed) + R"(,"layer":")" + layer_ + "\"}";
  return out;
}

}  // namespace piba::inputbn
