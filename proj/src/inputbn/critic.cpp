#include "piba/inputbn/critic.hpp"

#include <algorithm>
#include <cmath>

#include "piba/error.hpp"
#include "piba/numcore/ops.hpp"

namespace piba::inputbn {

namespace {

constexpr std::size_t kConvWidth = 8, kHidden = 32, kRnnHidden = 16;

}  // namespace

Critic::Critic(const Shape& feature_shape, double clip, RngStream& rng) : feature_shape_(feature_shape), clip_(clip) {
  if (!(clip > 0.0)) throw Error(ErrorKind::invalid_argument, "critic clip must be positive");
  auto weight = [&](Shape s) { return rng.uniform_tensor(std::move(s), -clip, clip); };
  if (feature_shape.size() == 3) {
    const std::size_t c = feature_shape[0], h = feature_shape[1], w = feature_shape[2];
    if (h % 4 != 0 || w % 4 != 0) throw Error(ErrorKind::shape, "conv critic needs spatial sizes divisible by 4");
    arch_ = Arch::conv;
    const std::size_t flat = kConvWidth * (h / 4) * (w / 4);
    params_ = {weight({kConvWidth, c, 3, 3}),          Tensor({kConvWidth}),
               weight({kConvWidth, kConvWidth, 3, 3}), Tensor({kConvWidth}),
               weight({kConvWidth, kConvWidth, 3, 3}), Tensor({kConvWidth}),
               weight({flat, kHidden}),                Tensor({kHidden}),
               weight({kHidden, 1}),                   Tensor({1})};
  } else if (feature_shape.size() == 2) {
    arch_ = Arch::recurrent;
    const std::size_t d = feature_shape[1];
    params_ = {weight({d, 3 * kRnnHidden}), weight({kRnnHidden, 3 * kRnnHidden}), Tensor({3 * kRnnHidden}),
               weight({kRnnHidden, 1}), Tensor({1})};
  } else if (feature_shape.size() == 1) {
    arch_ = Arch::mlp;
    params_ = {weight({feature_shape[0], kHidden}), Tensor({kHidden}), weight({kHidden, 1}), Tensor({1})};
  } else {
    throw Error(ErrorKind::shape, "no critic for feature shape " + shape_string(feature_shape));
  }
}

std::vector<Var> Critic::bind(Tape& tape, bool trainable) const {
  std::vector<Var> out;
  for (const auto& p : params_) out.push_back(trainable ? tape.parameter(p) : tape.constant(p));
  return out;
}

Var Critic::score(std::span<const Var> w, Var x) const {
  const std::size_t b = x.shape()[0];
  switch (arch_) {
    case Arch::conv: {
      x = maxpool2(relu(conv2d(x, w[0], w[1])));
      x = maxpool2(relu(conv2d(x, w[2], w[3])));
      x = relu(conv2d(x, w[4], w[5]));
      x = reshape(x, {b, x.value().size() / b});
      x = relu(add_bias(matmul(x, w[6]), w[7]));
      return column(add_bias(matmul(x, w[8]), w[9]), 0);
    }
    case Arch::recurrent: {
      Var h = x.tape().constant(Tensor({b, kRnnHidden}, 0.0));
      for (std::size_t t = 0; t < x.shape()[1]; ++t) h = gru_cell(take_step(x, t), h, w[0], w[1], w[2]);
      return column(add_bias(matmul(h, w[3]), w[4]), 0);
    }
    case Arch::mlp:
      x = relu(add_bias(matmul(x, w[0]), w[1]));
      return column(add_bias(matmul(x, w[2]), w[3]), 0);
  }
  return x;
}

Tensor Critic::score(const Tensor& feats) const {
  Tape tape;
  const auto w = bind(tape, false);
  return score(w, tape.constant(feats)).value();
}

void Critic::clip_weights() {
  for (auto& p : params_) {
    for (auto& v : p.data()) v = std::clamp(v, -clip_, clip_);
  }
}

double Critic::max_abs_weight() const {
  double m = 0.0;
  for (const auto& p : params_) {
    for (double v : p.data()) m = std::max(m, std::abs(v));
  }
  return m;
}

}  // namespace piba::inputbn
