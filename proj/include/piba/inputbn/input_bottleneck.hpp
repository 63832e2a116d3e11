#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "piba/attribution.hpp"
#include "piba/featbn/feature_bottleneck.hpp"
#include "piba/inputbn/critic.hpp"
#include "piba/models/network.hpp"
#include "piba/numcore/optim.hpp"

namespace piba::inputbn {

using featbn::FeatureStats;

struct InputRange {
  double lo = 0.0;
  double hi = 1.0;
};

// n jittered copies of I: I + N(0, (scale * std(I))^2), clamped to range. -> [n, ...I]
Tensor sample_local_inputs(const Tensor& input, std::size_t n, RngStream& stream, InputRange range,
                           double jitter_scale = 0.05);

// n draws of Z* = λ*R + (1-λ*)ε from a fitted feature bottleneck. -> [n, ...R]
Tensor sample_target_bank(const featbn::FeatureFit& fit, std::size_t n, RngStream& stream);

struct GenConfig {
  std::size_t epochs = 20;
  double lr = 0.01;
  double critic_lr = 5e-5;
  std::size_t batch = 16;
  std::size_t critic_every = 5;  // generator updates per critic update
  std::size_t critic_warmup = 200;  // critic updates against the initial generator before epoch 0
  double clip = 0.01;
  double jitter_scale = 0.05;
  // Samples per side for the end-of-epoch Wasserstein estimate; 0 disables it.
  std::size_t eval_samples = 0;
};

// Maps a batch of generated inputs Z_G to the feature space of the target bank.
using Prefix = std::function<Var(Var)>;

// λ_G, μ_G, σ_G and their adversarial training against a Wasserstein critic.
class GenEstimator {
 public:
  GenEstimator(Prefix prefix, Tensor input, Tensor bank, const FeatureStats& input_stats, InputRange range,
               GenConfig cfg, std::uint64_t seed);

  // Full schedule: epochs x ceil(bank / batch) generator updates, a critic
  // update after every `critic_every` of them.
  void train();
  void generator_step();
  // -mean critic(prefix(Z_G)) for a batch drawn from `stream`; what generator_step minimizes.
  Var generator_objective(Var logits, Var mu, Var sigma_raw, RngStream& stream) const;
  void critic_step();

  // E[critic(real)] - E[critic(fake)] over n bank samples and n fresh fakes.
  double wasserstein_estimate(std::size_t n, RngStream& stream) const;
  // Generated Z_G for the current parameters. -> [n, ...I]
  Tensor sample_generated(std::size_t n, RngStream& stream) const;

  Tensor lambda() const;
  Tensor sigma() const;
  const Tensor& mu() const noexcept { return mu_; }
  const Tensor& sigma_raw() const noexcept { return sigma_raw_; }
  Tensor& lambda_logits() noexcept { return lambda_logits_; }
  const Critic& critic() const noexcept { return critic_; }

  const std::vector<double>& critic_trace() const noexcept { return critic_trace_; }
  const std::vector<double>& wasserstein_trace() const noexcept { return wasserstein_trace_; }
  // Largest |w| seen right after any critic update.
  double max_clipped_weight() const noexcept { return max_clipped_; }
  std::size_t generator_updates() const noexcept { return gen_updates_; }
  std::size_t critic_updates() const noexcept { return critic_trace_.size(); }

 private:
  Var generate(Tape& tape, Var logits, Var mu, Var sigma_raw, std::size_t n, RngStream& stream) const;

  Prefix prefix_;
  Tensor input_;
  Tensor bank_;
  InputRange range_;
  GenConfig cfg_;
  RngStream rng_;
  Critic critic_;
  Tensor lambda_logits_, mu_, sigma_raw_;
  OptimState gen_opt_, critic_opt_;
  std::vector<double> critic_trace_, wasserstein_trace_;
  double max_clipped_ = 0.0;
  std::size_t gen_updates_ = 0;
};

struct InputBottleneckConfig {
  double beta = 20.0;
  std::size_t steps = 60;
  double lr = 0.5;
  std::size_t noise_draws = 10;
  double init_logit = 5.0;
};

struct InputFit {
  Tensor mask;  // Λ*
  std::vector<double> loss_trace;
};

// The bottleneck on the input: Z_I = Λ I + (1-Λ)ε with ε = μ_I + σ_I η, whose
// law given I is N(Λ I + (1-Λ)μ_I, (1-Λ)² σ_I²). eta: [D, ...I] -> [D, ...I].
Tensor sample_input_bottleneck(const Tensor& input, const Tensor& mask, const FeatureStats& input_stats,
                               const Tensor& eta);

// The Z_G-conditioned reference variable Λ Z_G + (1-Λ)ε with Z_G = λ_G I + (1-λ_G)ε
// and one shared ε per sample. Its law N(λ_G Λ I + (1-λ_G Λ)μ_I, (1-λ_G Λ)² σ_I²)
// is the second argument of the KL term.
Tensor compose_input_bottleneck(const Tensor& input, const Tensor& lambda_g, const Tensor& mask,
                                const FeatureStats& input_stats, const Tensor& eta);

// Mean CE of the model on Z_I samples (one per row of eta) + beta * mean KL
// against the Z_G-conditioned law. λ_G enters through the KL only.
Var input_loss(const models::Network& net, Var mask_logits, const Tensor& input, const Tensor& lambda_g,
               const FeatureStats& input_stats, const Tensor& eta, std::size_t target, double beta);

InputFit fit_input_bottleneck(const models::Network& net, const Tensor& input, std::size_t target,
                              const Tensor& lambda_g, const FeatureStats& input_stats,
                              const InputBottleneckConfig& cfg, RngStream& stream);

// Mean softmax probability of `target` over `draws` samples of Z_I.
double target_probability(const models::Network& net, const Tensor& input, std::size_t target, const Tensor& mask,
                          const FeatureStats& input_stats, std::size_t draws, RngStream& stream);

struct InputIbaConfig {
  featbn::FeatureBottleneckConfig feature;
  std::size_t bank_size = 200;
  GenConfig gen;
  InputBottleneckConfig input;
};

// Defaults for recurrent models explained in embedding space: hidden-layer
// beta 15 at lr 5e-5, input beta 30 over 30 steps.
InputIbaConfig sequence_config();

struct InputIbaResult {
  AttributionMap map;
  featbn::FeatureFit feature;
  Tensor lambda_g;
  std::vector<double> wasserstein_trace;
  InputFit input;
};

// Holds the per-model state shared by every explanation: feature statistics at
// the bottleneck layer and per-element input statistics, both from the
// training inputs. Read-only after construction, so explain() may run
// concurrently for different inputs.
class InputIbaExplainer {
 public:
  InputIbaExplainer(const models::Network& net, std::string layer, const Tensor& training_inputs,
                    InputIbaConfig cfg = {});

  // Stages run in order and errors carry the stage name: feature_bottleneck,
  // target_bank, generator, input_bottleneck.
  InputIbaResult explain(const Tensor& input, std::size_t target, std::uint64_t seed) const;

  const FeatureStats& feature_stats() const noexcept { return feature_stats_; }
  const FeatureStats& input_stats() const noexcept { return input_stats_; }
  InputRange input_range() const noexcept { return range_; }
  const InputIbaConfig& config() const noexcept { return cfg_; }
  const std::string& layer() const noexcept { return layer_; }

 private:
  const models::Network& net_;
  std::string layer_;
  InputIbaConfig cfg_;
  FeatureStats feature_stats_;
  FeatureStats input_stats_;
  InputRange range_;
};

// Per-position map from Λ*: channel mean for images, embedding-dimension mean for sequences.
AttributionMap mask_attribution(const Tensor& mask, const Shape& input_shape);

}  // namespace piba::inputbn
