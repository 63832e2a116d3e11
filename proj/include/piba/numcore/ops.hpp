#pragma once

#include <cstdint>
#include <span>

#include "piba/numcore/tape.hpp"

// Differentiable primitives. Every function records one node on the tape of its
// first Var argument. Shapes must match exactly; the only broadcasting is the
// scalar-constant forms and the explicit add_bias / tile ops.
namespace piba {

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var add_scalar(Var a, double offset);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator-(Var a) { return scale(a, -1.0); }
inline Var operator*(double s, Var a) { return scale(a, s); }
inline Var operator*(Var a, double s) { return scale(a, s); }
inline Var operator+(Var a, double s) { return add_scalar(a, s); }
inline Var operator+(double s, Var a) { return add_scalar(a, s); }
inline Var operator-(Var a, double s) { return add_scalar(a, -s); }
inline Var operator-(double s, Var a) { return add_scalar(scale(a, -1.0), s); }

// [N,K] x [K,M] -> [N,M]
Var matmul(Var a, Var b);
// Adds bias [M] to every row of x [..., M].
Var add_bias(Var x, Var bias);
// 3x3 kernel, stride 1, zero padding 1. x [N,C,H,W], w [O,C,3,3], b [O] -> [N,O,H,W].
Var conv2d(Var x, Var w, Var b);
// 2x2 max pooling, stride 2. H and W must be even.
Var maxpool2(Var x);

Var relu(Var a);
Var sigmoid(Var a);
Var tanh(Var a);
Var exp(Var a);
Var log(Var a);
Var softplus(Var a);

// Full reductions to a one-element tensor.
Var sum(Var a);
Var mean(Var a);

// Concatenation along the leading axis.
Var concat(std::span<const Var> parts);
Var reshape(Var a, Shape shape);
// Repeats a along a new leading axis of size n.
Var tile(Var a, std::size_t n);
// Column c of a [N,C] matrix -> [N].
Var column(Var a, std::size_t c);

// Rows of table [V,D] selected by ids; output shape is lead + [D].
Var embedding(Var table, std::span<const std::uint32_t> ids, Shape lead);
// x [N,L,D] -> x[:, t, :] as [N,D].
Var take_step(Var x, std::size_t t);
// L tensors [N,D] -> [N,L,D].
Var stack_steps(std::span<const Var> steps);

// GRU-style recurrent step. x [N,D], h [N,H], wx [D,3H], wh [H,3H], b [3H]; gate
// blocks ordered (reset, update, candidate).
Var gru_cell(Var x, Var h, Var wx, Var wh, Var b);

// Mean over rows of the softmax cross-entropy of logits [N,C] against class ids.
Var softmax_cross_entropy(Var logits, std::span<const int> targets);

// mu + sigma * eta with eta held constant.
Var gaussian_reparam(Var mu, Var sigma, Tensor eta);

// Tensor-level helpers without a tape.
Tensor softmax_rows(const Tensor& logits);

}  // namespace piba
