#include "piba/models/network.hpp"

#include <cmath>

#include "piba/error.hpp"
#include "piba/numcore/ops.hpp"
#include "piba/numcore/rng.hpp"

namespace piba::models {

namespace {

Tensor he_uniform(RngStream& rng, Shape shape, std::size_t fan_in) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  return rng.uniform_tensor(std::move(shape), -bound, bound);
}

Var dense(Var x, Var w, Var b) { return add_bias(matmul(x, w), b); }

void check_range(const Network& net, std::size_t first, std::size_t last) {
  if (first > last || last > net.last_layer()) {
    throw Error(ErrorKind::invalid_argument, "bad layer range " + std::to_string(first) + ".." + std::to_string(last));
  }
}

}  // namespace

std::string_view kind_tag(ModelKind kind) {
  switch (kind) {
    case ModelKind::small_cnn:
      return "small_cnn";
    case ModelKind::small_rnn:
      return "small_rnn";
    case ModelKind::linear:
      return "linear";
  }
  return "?";
}

ModelKind parse_kind_tag(std::string_view tag) {
  if (tag == "small_cnn") return ModelKind::small_cnn;
  if (tag == "small_rnn") return ModelKind::small_rnn;
  if (tag == "linear") return ModelKind::linear;
  throw Error(ErrorKind::format, "unknown model kind '" + std::string(tag) + "'");
}

std::size_t Network::layer_index(std::string_view name) const {
  const auto& names = layer_names();
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == name) return i;
  }
  throw Error(ErrorKind::invalid_argument, "unknown layer '" + std::string(name) + "'");
}

const Param& Network::param(std::string_view name) const {
  for (const auto& p : params_) {
    if (p.name == name) return p;
  }
  throw Error(ErrorKind::invalid_argument, "unknown parameter '" + std::string(name) + "'");
}

std::vector<Var> Network::bind(Tape& tape, bool trainable) const {
  std::vector<Var> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(trainable ? tape.parameter(p.value) : tape.constant(p.value));
  return out;
}

void Network::init_all(std::uint64_t seed) {
  for (std::size_t i = 0; i < layer_names().size(); ++i) init_layer(i, seed);
}

// ---- SmallCnn ----

SmallCnn::SmallCnn(std::uint64_t seed) {
  params_ = {
      {"conv1.w", 0, Tensor({8, 1, 3, 3})},  {"conv1.b", 0, Tensor({8})},
      {"conv2.w", 1, Tensor({16, 8, 3, 3})}, {"conv2.b", 1, Tensor({16})},
      {"fc1.w", 2, Tensor({1024, 32})},      {"fc1.b", 2, Tensor({32})},
      {"fc2.w", 3, Tensor({32, 3})},         {"fc2.b", 3, Tensor({3})},
  };
  init_all(seed);
}

const std::vector<std::string>& SmallCnn::layer_names() const {
  static const std::vector<std::string> names = {"conv1", "conv2", "fc1", "fc2"};
  return names;
}

void SmallCnn::init_layer(std::size_t layer, std::uint64_t seed) {
  RngStream rng(seed, layer);
  static const std::size_t fan_in[] = {9, 72, 1024, 32};
  auto& w = params_.at(2 * layer);
  auto& b = params_.at(2 * layer + 1);
  w.value = he_uniform(rng, w.value.shape(), fan_in[layer]);
  b.value = Tensor(b.value.shape(), 0.0);
}

Var SmallCnn::forward(std::span<const Var> w, Var x, std::size_t first, std::size_t last) const {
  check_range(*this, first, last);
  for (std::size_t layer = first; layer <= last; ++layer) {
    switch (layer) {
      case 0:
      case 1:
        x = relu(conv2d(x, w[2 * layer], w[2 * layer + 1]));
        break;
      case 2: {
        Var pooled = maxpool2(x);
        const std::size_t n = pooled.shape()[0];
        x = relu(dense(reshape(pooled, {n, 1024}), w[4], w[5]));
        break;
      }
      default:
        x = dense(x, w[6], w[7]);
    }
  }
  return x;
}

// ---- SmallRnn ----

SmallRnn::SmallRnn(std::uint64_t seed) {
  params_ = {
      {"embed.table", 0, Tensor({kVocab, kEmbed})},
      {"rnn.wx", 1, Tensor({kEmbed, 3 * kHidden})},
      {"rnn.wh", 1, Tensor({kHidden, 3 * kHidden})},
      {"rnn.b", 1, Tensor({3 * kHidden})},
      {"fc.w", 2, Tensor({kHidden, 2})},
      {"fc.b", 2, Tensor({2})},
  };
  init_all(seed);
}

const std::vector<std::string>& SmallRnn::layer_names() const {
  static const std::vector<std::string> names = {"embed", "rnn", "fc"};
  return names;
}

void SmallRnn::init_layer(std::size_t layer, std::uint64_t seed) {
  RngStream rng(seed, layer);
  switch (layer) {
    case 0:
      params_[0].value = rng.uniform_tensor({kVocab, kEmbed}, -1.0, 1.0);
      break;
    case 1: {
      const double bound = 1.0 / std::sqrt(static_cast<double>(kHidden));
      params_[1].value = rng.uniform_tensor({kEmbed, 3 * kHidden}, -bound, bound);
      params_[2].value = rng.uniform_tensor({kHidden, 3 * kHidden}, -bound, bound);
      params_[3].value = Tensor({3 * kHidden}, 0.0);
      break;
    }
    case 2:
      params_[4].value = he_uniform(rng, {kHidden, 2}, kHidden);
      params_[5].value = Tensor({2}, 0.0);
      break;
    default:
      throw Error(ErrorKind::invalid_argument, "SmallRnn has 3 layers");
  }
}

Var SmallRnn::forward(std::span<const Var> w, Var x, std::size_t first, std::size_t last) const {
  check_range(*this, first, last);
  for (std::size_t layer = first; layer <= last; ++layer) {
    if (layer == 0) {
      if (x.shape().size() != 3 || x.shape()[2] != kEmbed) {
        throw Error(ErrorKind::shape, "SmallRnn expects embeddings [N,L,16], got " + shape_string(x.shape()));
      }
    } else if (layer == 1) {
      const std::size_t n = x.shape()[0], len = x.shape()[1];
      Var h = x.tape().constant(Tensor({n, kHidden}, 0.0));
      std::vector<Var> states;
      states.reserve(len);
      for (std::size_t t = 0; t < len; ++t) {
        h = gru_cell(take_step(x, t), h, w[1], w[2], w[3]);
        states.push_back(h);
      }
      x = stack_steps(states);
    } else {
      x = dense(take_step(x, x.shape()[1] - 1), w[4], w[5]);
    }
  }
  return x;
}

namespace {

std::vector<std::uint32_t> flatten_ids(std::span<const std::vector<std::uint32_t>> seqs) {
  std::vector<std::uint32_t> ids;
  for (const auto& s : seqs) {
    if (s.size() != SmallRnn::kLen) throw Error(ErrorKind::shape, "sequence length must be 32");
    ids.insert(ids.end(), s.begin(), s.end());
  }
  return ids;
}

}  // namespace

Tensor SmallRnn::embed(std::span<const std::vector<std::uint32_t>> seqs) const {
  const auto ids = flatten_ids(seqs);
  const Tensor& table = params_[0].value;
  Tensor out({seqs.size(), kLen, kEmbed});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= kVocab) throw Error(ErrorKind::invalid_argument, "token id out of vocabulary");
    std::copy_n(table.data().begin() + static_cast<std::ptrdiff_t>(ids[i] * kEmbed), kEmbed,
                out.data().begin() + static_cast<std::ptrdiff_t>(i * kEmbed));
  }
  return out;
}

Var SmallRnn::embed(Var table, std::span<const std::vector<std::uint32_t>> seqs) const {
  const auto ids = flatten_ids(seqs);
  return embedding(table, ids, {seqs.size(), kLen});
}

// ---- LinearModel ----

LinearModel::LinearModel(Shape input_shape, std::size_t classes, std::uint64_t seed)
    : input_shape_(std::move(input_shape)), classes_(classes) {
  const std::size_t d = shape_size(input_shape_);
  params_ = {{"fc.w", 0, Tensor({d, classes_})}, {"fc.b", 0, Tensor({classes_})}};
  init_all(seed);
}

const std::vector<std::string>& LinearModel::layer_names() const {
  static const std::vector<std::string> names = {"fc"};
  return names;
}

void LinearModel::init_layer(std::size_t layer, std::uint64_t seed) {
  RngStream rng(seed, layer);
  const std::size_t d = shape_size(input_shape_);
  params_[0].value = he_uniform(rng, {d, classes_}, d);
  params_[1].value = Tensor({classes_}, 0.0);
}

Var LinearModel::forward(std::span<const Var> w, Var x, std::size_t first, std::size_t last) const {
  check_range(*this, first, last);
  const std::size_t n = x.shape()[0];
  return dense(reshape(x, {n, shape_size(input_shape_)}), w[0], w[1]);
}

// ---- free functions ----

std::unique_ptr<Network> make_network(ModelKind kind, std::uint64_t seed) {
  switch (kind) {
    case ModelKind::small_cnn:
      return std::make_unique<SmallCnn>(seed);
    case ModelKind::small_rnn:
      return std::make_unique<SmallRnn>(seed);
    case ModelKind::linear:
      break;
  }
  throw Error(ErrorKind::invalid_argument, "linear models need an explicit input shape");
}

namespace {

void check_batch(const Network& net, const Tensor& batch) {
  const Shape expect = net.input_shape();
  if (batch.rank() != expect.size() + 1 || !std::equal(expect.begin(), expect.end(), batch.shape().begin() + 1)) {
    throw Error(ErrorKind::shape, "batch " + shape_string(batch.shape()) + " does not match model input " +
                                      shape_string(expect));
  }
}

}  // namespace

Tensor predict_logits(const Network& net, const Tensor& batch) {
  check_batch(net, batch);
  Tape tape;
  const auto w = net.bind(tape, false);
  return net.forward(w, tape.constant(batch), 0, net.last_layer()).value();
}

Tensor feature_activations(const Network& net, std::string_view layer, const Tensor& batch) {
  check_batch(net, batch);
  Tape tape;
  const auto w = net.bind(tape, false);
  return net.forward(w, tape.constant(batch), 0, net.layer_index(layer)).value();
}

Tensor head_logits(const Network& net, std::string_view layer, const Tensor& features) {
  const std::size_t idx = net.layer_index(layer);
  if (idx == net.last_layer()) return features;
  Tape tape;
  const auto w = net.bind(tape, false);
  return net.forward(w, tape.constant(features), idx + 1, net.last_layer()).value();
}

Tensor input_gradient(const Network& net, const Tensor& batch, std::size_t target) {
  check_batch(net, batch);
  Tape tape;
  const auto w = net.bind(tape, false);
  Var x = tape.parameter(batch);
  Var logits = net.forward(w, x, 0, net.last_layer());
  return tape.backward(sum(column(logits, target)))[x];
}

std::unique_ptr<Network> randomize_from_layer(const Network& net, std::string_view layer, std::uint64_t seed) {
  const std::size_t from = net.layer_index(layer);
  auto copy = net.clone();
  // Salted so that a randomization seed equal to the training seed still gives new weights.
  const std::uint64_t salted = RngStream(seed, 0x52414E44ULL).next_u64();
  for (std::size_t i = from; i <= copy->last_layer(); ++i) copy->init_layer(i, salted);
  return copy;
}

}  // namespace piba::models
