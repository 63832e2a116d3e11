#include "piba/numcore/rng.hpp"

#include <cmath>
#include <numbers>
#include <numeric>

#include "piba/error.hpp"
#include "piba/numcore/ops.hpp"

namespace piba {

namespace {

constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

std::uint64_t mix(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t stream_key(std::uint64_t seed, std::uint64_t stream) {
  return mix(mix(seed ^ 0x5851f42d4c957f2dULL) + stream * kGolden);
}

void check_sigma(const Tensor& mu, const Tensor& sigma) {
  if (mu.shape() != sigma.shape()) throw Error(ErrorKind::shape, "gaussian: mu/sigma shape mismatch");
  for (double s : sigma.data()) {
    if (s < 0.0) throw Error(ErrorKind::invalid_argument, "gaussian: negative sigma");
  }
}

}  // namespace

std::uint64_t RngStream::next_u64() {
  const std::uint64_t key = stream_key(seed_, stream_);
  return mix(key + (++counter_) * kGolden);
}

double RngStream::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

std::uint64_t RngStream::below(std::uint64_t n) {
  if (n == 0) throw Error(ErrorKind::invalid_argument, "below(0)");
  // rejection keeps the draw unbiased
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
  std::uint64_t v = next_u64();
  while (v >= limit) v = next_u64();
  return v % n;
}

double RngStream::normal() {
  const double u1 = 1.0 - uniform();  // (0, 1]
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

Tensor RngStream::normal_tensor(Shape shape) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = normal();
  return t;
}

Tensor RngStream::uniform_tensor(Shape shape, double lo, double hi) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = uniform(lo, hi);
  return t;
}

RngStream RngStream::split(std::uint64_t child) const {
  return RngStream(stream_key(seed_, stream_), mix(child + kGolden));
}

std::vector<std::size_t> RngStream::sample_without_replacement(std::size_t n, std::size_t k) {
  if (k > n) throw Error(ErrorKind::invalid_argument, "sample_without_replacement: k > n");
  std::vector<std::size_t> pool(n);
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  for (std::size_t i = 0; i < k; ++i) {
    const auto j = i + static_cast<std::size_t>(below(n - i));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(k);
  return pool;
}

Var gaussian(RngStream& stream, Var mu, Var sigma) {
  check_sigma(mu.value(), sigma.value());
  return gaussian_reparam(mu, sigma, stream.normal_tensor(mu.shape()));
}

Tensor gaussian(RngStream& stream, const Tensor& mu, const Tensor& sigma) {
  check_sigma(mu, sigma);
  Tensor out = mu;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += sigma[i] * stream.normal();
  return out;
}

}  // namespace piba
