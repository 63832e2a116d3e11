#include "piba/attribution.hpp"

#include <algorithm>
#include <cmath>

#include "piba/error.hpp"

namespace piba {

Tensor normalize_minmax(const Tensor& t) {
  require_finite(t, "attribution");
  const auto [lo, hi] = std::minmax_element(t.data().begin(), t.data().end());
  const double range = *hi - *lo;
  const double scale = std::max({1.0, std::abs(*lo), std::abs(*hi)});
  if (range <= 1e-12 * scale) return Tensor(t.shape(), 0.5);
  Tensor out(t.shape());
  for (std::size_t i = 0; i < t.size(); ++i) out[i] = (t[i] - *lo) / range;
  return out;
}

Tensor channel_mean(const Tensor& t) {
  if (t.rank() < 2) throw Error(ErrorKind::shape, "channel_mean needs rank >= 2");
  const std::size_t c = t.dim(0), per = t.size() / c;
  Shape rest(t.shape().begin() + 1, t.shape().end());
  Tensor out(rest, 0.0);
  for (std::size_t k = 0; k < c; ++k) {
    for (std::size_t i = 0; i < per; ++i) out[i] += t[k * per + i];
  }
  for (auto& v : out.data()) v /= static_cast<double>(c);
  return out;
}

Tensor feature_mean(const Tensor& t) {
  if (t.rank() != 2) throw Error(ErrorKind::shape, "feature_mean needs [L,D]");
  const std::size_t l = t.dim(0), d = t.dim(1);
  Tensor out({l}, 0.0);
  for (std::size_t i = 0; i < l; ++i) {
    for (std::size_t j = 0; j < d; ++j) out[i] += t[i * d + j];
    out[i] /= static_cast<double>(d);
  }
  return out;
}

namespace {

struct Tap {
  std::size_t i0, i1;
  double w1;
};

Tap source_tap(std::size_t dst, std::size_t in, std::size_t out) {
  double src = (static_cast<double>(dst) + 0.5) * static_cast<double>(in) / static_cast<double>(out) - 0.5;
  src = std::clamp(src, 0.0, static_cast<double>(in - 1));
  const auto i0 = static_cast<std::size_t>(std::floor(src));
  const std::size_t i1 = std::min(i0 + 1, in - 1);
  return {i0, i1, src - static_cast<double>(i0)};
}

}  // namespace

Tensor resize_bilinear(const Tensor& plane, std::size_t out_h, std::size_t out_w) {
  if (plane.rank() != 2) throw Error(ErrorKind::shape, "resize_bilinear needs [H,W]");
  const std::size_t h = plane.dim(0), w = plane.dim(1);
  if (h == out_h && w == out_w) return plane;
  Tensor out({out_h, out_w});
  for (std::size_t y = 0; y < out_h; ++y) {
    const Tap ty = source_tap(y, h, out_h);
    for (std::size_t x = 0; x < out_w; ++x) {
      const Tap tx = source_tap(x, w, out_w);
      const double top = plane[ty.i0 * w + tx.i0] * (1 - tx.w1) + plane[ty.i0 * w + tx.i1] * tx.w1;
      const double bot = plane[ty.i1 * w + tx.i0] * (1 - tx.w1) + plane[ty.i1 * w + tx.i1] * tx.w1;
      out[y * out_w + x] = top * (1 - ty.w1) + bot * ty.w1;
    }
  }
  return out;
}

Tensor resize_linear(const Tensor& v, std::size_t out_len) {
  if (v.rank() != 1) throw Error(ErrorKind::shape, "resize_linear needs [L]");
  if (v.size() == out_len) return v;
  Tensor out({out_len});
  for (std::size_t i = 0; i < out_len; ++i) {
    const Tap t = source_tap(i, v.size(), out_len);
    out[i] = v[t.i0] * (1 - t.w1) + v[t.i1] * t.w1;
  }
  return out;
}

}  // namespace piba
