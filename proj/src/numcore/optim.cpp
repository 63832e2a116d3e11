#include "piba/numcore/optim.hpp"

#include <cmath>

#include "piba/error.hpp"

namespace piba {

namespace {

void prepare(OptimState& state, std::span<Tensor* const> params, std::span<const Tensor> grads, OptimKind kind) {
  if (state.config.kind != kind) throw Error(ErrorKind::invalid_argument, "optimizer kind mismatch");
  if (params.size() != grads.size()) throw Error(ErrorKind::shape, "optimizer: param/grad count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->shape() != grads[i].shape()) {
      throw Error(ErrorKind::shape, "optimizer: grad " + shape_string(grads[i].shape()) + " for param " +
                                        shape_string(params[i]->shape()));
    }
  }
  if (state.second.empty()) {
    for (auto* p : params) {
      state.second.emplace_back(p->shape(), 0.0);
      if (kind == OptimKind::adam) state.first.emplace_back(p->shape(), 0.0);
    }
  } else if (state.second.size() != params.size()) {
    throw Error(ErrorKind::shape, "optimizer: parameter set changed between steps");
  } else {
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (state.second[i].shape() != params[i]->shape()) {
        throw Error(ErrorKind::shape, "optimizer: accumulator shape mismatch");
      }
    }
  }
  ++state.step;
}

}  // namespace

void adam_step(OptimState& state, std::span<Tensor* const> params, std::span<const Tensor> grads) {
  prepare(state, params, grads, OptimKind::adam);
  const auto& c = state.config;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    Tensor& m = state.first[i];
    Tensor& v = state.second[i];
    const Tensor& g = grads[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * g[k];
      v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * g[k] * g[k];
      p[k] -= c.lr * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + c.eps);
    }
  }
}

void rmsprop_step(OptimState& state, std::span<Tensor* const> params, std::span<const Tensor> grads) {
  prepare(state, params, grads, OptimKind::rmsprop);
  const auto& c = state.config;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    Tensor& v = state.second[i];
    const Tensor& g = grads[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      v[k] = c.alpha * v[k] + (1.0 - c.alpha) * g[k] * g[k];
      p[k] -= c.lr * g[k] / (std::sqrt(v[k]) + c.eps);
    }
  }
}

void optimizer_step(OptimState& state, std::span<Tensor* const> params, std::span<const Tensor> grads) {
  if (state.config.kind == OptimKind::adam) {
    adam_step(state, params, grads);
  } else {
    rmsprop_step(state, params, grads);
  }
}

}  // namespace piba
