#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "piba/numcore/tape.hpp"
#include "piba/numcore/tensor.hpp"

namespace piba {

// Counter-based generator: draw i of stream (seed, id) is a pure function of
// (seed, id, i), so results never depend on scheduling or platform.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint64_t stream_id) : seed_(seed), stream_(stream_id) {}

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream_id() const noexcept { return stream_; }
  std::uint64_t counter() const noexcept { return counter_; }

  std::uint64_t next_u64();
  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  // Standard normal via Box-Muller.
  double normal();

  Tensor normal_tensor(Shape shape);
  Tensor uniform_tensor(Shape shape, double lo, double hi);

  // Independent child stream; does not advance this stream.
  RngStream split(std::uint64_t child) const;

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

  // k distinct indices from [0, n) in draw order.
  std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k);

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t counter_ = 0;
};

// mu + sigma * eta with eta ~ N(0, 1) drawn from `stream`; eta is recorded so
// gradients reach mu and sigma. Throws invalid_argument on negative sigma.
Var gaussian(RngStream& stream, Var mu, Var sigma);
Tensor gaussian(RngStream& stream, const Tensor& mu, const Tensor& sigma);

}  // namespace piba
