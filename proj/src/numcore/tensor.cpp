#include "piba/numcore/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cmath>
#include <functional>
#include <numeric>

#include "piba/error.hpp"

namespace piba {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

namespace {

void check_dims(const Shape& shape) {
  if (shape.empty()) throw Error(ErrorKind::shape, "tensor shape must have rank >= 1");
  for (auto d : shape) {
    if (d == 0) throw Error(ErrorKind::shape, "zero-sized dimension in " + shape_string(shape));
  }
}

}  // namespace

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  check_dims(shape_);
  data_.assign(shape_size(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  check_dims(shape_);
  if (data_.size() != shape_size(shape_)) {
    throw Error(ErrorKind::shape, "data length " + std::to_string(data_.size()) +
                                      " does not match shape " + shape_string(shape_));
  }
}

Tensor Tensor::from(std::initializer_list<double> values) {
  return Tensor({values.size()}, std::vector<double>(values));
}

double Tensor::item() const {
  if (data_.size() != 1) {
    throw Error(ErrorKind::shape, "item() on tensor of shape " + shape_string(shape_));
  }
  return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_size(shape) != data_.size()) {
    throw Error(ErrorKind::shape,
                "cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  return Tensor(std::move(shape), data_);
}

Tensor Tensor::slice(std::size_t index) const {
  if (rank() < 2 || index >= shape_[0]) {
    throw Error(ErrorKind::shape, "slice " + std::to_string(index) + " of " + shape_string(shape_));
  }
  Shape inner(shape_.begin() + 1, shape_.end());
  const std::size_t n = shape_size(inner);
  std::vector<double> part(data_.begin() + static_cast<std::ptrdiff_t>(index * n),
                           data_.begin() + static_cast<std::ptrdiff_t>((index + 1) * n));
  return Tensor(std::move(inner), std::move(part));
}

bool Tensor::all_finite() const {
  // Branch-free so the scan vectorizes: a value is non-finite iff its exponent bits are all set.
  constexpr std::uint64_t exponent = 0x7FF0000000000000ULL;
  std::uint64_t bad = 0;
  for (double v : data_) bad |= static_cast<std::uint64_t>((std::bit_cast<std::uint64_t>(v) & exponent) == exponent);
  return bad == 0;
}

Tensor stack(std::span<const Tensor> parts) {
  if (parts.empty()) throw Error(ErrorKind::shape, "stack of zero tensors");
  Shape shape = parts[0].shape();
  std::vector<double> data;
  data.reserve(parts.size() * parts[0].size());
  for (const auto& p : parts) {
    if (p.shape() != shape) {
      throw Error(ErrorKind::shape, "stack: " + shape_string(p.shape()) + " vs " + shape_string(shape));
    }
    data.insert(data.end(), p.values().begin(), p.values().end());
  }
  shape.insert(shape.begin(), parts.size());
  return Tensor(std::move(shape), std::move(data));
}

void require_finite(const Tensor& t, std::string_view what) {
  if (!t.all_finite()) {
    throw Error(ErrorKind::numeric, "non-finite value in " + std::string(what));
  }
}

}  // namespace piba
