#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "piba/numcore/tape.hpp"
#include "piba/numcore/tensor.hpp"

namespace piba::models {

enum class ModelKind { small_cnn, small_rnn, linear };

std::string_view kind_tag(ModelKind kind);
ModelKind parse_kind_tag(std::string_view tag);

struct Param {
  std::string name;  // "<layer>.<role>", e.g. "conv1.w"
  std::size_t layer = 0;
  Tensor value;
};

// A classifier split into named layers so that a bottleneck can be inserted
// after any of them. Layer i consumes the output of layer i-1; the output of
// the last layer is the logits. "Input" means the continuous input space: pixel
// images for the CNN, embedding vectors for the RNN.
class Network {
 public:
  virtual ~Network() = default;

  virtual ModelKind kind() const = 0;
  virtual std::unique_ptr<Network> clone() const = 0;
  // Per-sample continuous input shape (without the batch axis).
  virtual Shape input_shape() const = 0;
  virtual const std::vector<std::string>& layer_names() const = 0;
  virtual std::size_t num_classes() const = 0;

  // Runs layers first..last inclusive. `x` is the input when first == 0,
  // otherwise the output of layer first-1. `w` is bind() of this network.
  virtual Var forward(std::span<const Var> w, Var x, std::size_t first, std::size_t last) const = 0;

  // Re-draws the parameters of one layer with the construction-time scheme.
  virtual void init_layer(std::size_t layer, std::uint64_t seed) = 0;

  std::size_t layer_index(std::string_view name) const;
  std::size_t last_layer() const { return layer_names().size() - 1; }

  std::vector<Param>& params() { return params_; }
  const std::vector<Param>& params() const { return params_; }
  const Param& param(std::string_view name) const;

  // Parameters as tape leaves: trainable ones become parameters, otherwise constants.
  std::vector<Var> bind(Tape& tape, bool trainable) const;

  void init_all(std::uint64_t seed);

 protected:
  std::vector<Param> params_;
};

// 1x16x16 -> conv1(8) -> relu -> conv2(16) -> relu -> maxpool2 -> fc1(32) -> relu -> fc2(3).
// Layer outputs: conv1 and conv2 post-relu (conv2 before pooling), fc1 post-relu, fc2 logits.
class SmallCnn final : public Network {
 public:
  explicit SmallCnn(std::uint64_t seed = 0);
  ModelKind kind() const override { return ModelKind::small_cnn; }
  std::unique_ptr<Network> clone() const override { return std::make_unique<SmallCnn>(*this); }
  Shape input_shape() const override { return {1, 16, 16}; }
  const std::vector<std::string>& layer_names() const override;
  std::size_t num_classes() const override { return 3; }
  Var forward(std::span<const Var> w, Var x, std::size_t first, std::size_t last) const override;
  void init_layer(std::size_t layer, std::uint64_t seed) override;
};

// ids -> embed(64x16) -> GRU(32) over the sequence -> fc(32->2) on the final state.
// Layer outputs: embed [N,L,16], rnn hidden sequence [N,L,32], fc logits.
class SmallRnn final : public Network {
 public:
  static constexpr std::size_t kVocab = 64, kEmbed = 16, kHidden = 32, kLen = 32;

  explicit SmallRnn(std::uint64_t seed = 0);
  ModelKind kind() const override { return ModelKind::small_rnn; }
  std::unique_ptr<Network> clone() const override { return std::make_unique<SmallRnn>(*this); }
  Shape input_shape() const override { return {kLen, kEmbed}; }
  const std::vector<std::string>& layer_names() const override;
  std::size_t num_classes() const override { return 2; }
  Var forward(std::span<const Var> w, Var x, std::size_t first, std::size_t last) const override;
  void init_layer(std::size_t layer, std::uint64_t seed) override;

  // Embedding vectors [N,L,16] for a batch of id sequences.
  Tensor embed(std::span<const std::vector<std::uint32_t>> seqs) const;
  Var embed(Var table, std::span<const std::vector<std::uint32_t>> seqs) const;
};

// Single affine layer over a flattened input; logits = x W + b.
class LinearModel final : public Network {
 public:
  LinearModel(Shape input_shape, std::size_t classes, std::uint64_t seed = 0);
  ModelKind kind() const override { return ModelKind::linear; }
  std::unique_ptr<Network> clone() const override { return std::make_unique<LinearModel>(*this); }
  Shape input_shape() const override { return input_shape_; }
  const std::vector<std::string>& layer_names() const override;
  std::size_t num_classes() const override { return classes_; }
  Var forward(std::span<const Var> w, Var x, std::size_t first, std::size_t last) const override;
  void init_layer(std::size_t layer, std::uint64_t seed) override;

 private:
  Shape input_shape_;
  std::size_t classes_;
};

std::unique_ptr<Network> make_network(ModelKind kind, std::uint64_t seed);

// Tape-free helpers. Batches carry a leading sample axis.
Tensor predict_logits(const Network& net, const Tensor& batch);
Tensor feature_activations(const Network& net, std::string_view layer, const Tensor& batch);
// Runs the layers after `layer` on features R.
Tensor head_logits(const Network& net, std::string_view layer, const Tensor& features);
// Gradient of sum_i logits[i, target] with respect to the batch.
Tensor input_gradient(const Network& net, const Tensor& batch, std::size_t target);

// Copy with `layer` and every later layer re-initialized from `seed`.
std::unique_ptr<Network> randomize_from_layer(const Network& net, std::string_view layer, std::uint64_t seed);

}  // namespace piba::models
