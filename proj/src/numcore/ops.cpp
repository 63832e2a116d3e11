#include "piba/numcore/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <vector>

#include "piba/error.hpp"

namespace piba {

namespace {

void require_same_shape(const char* op, Var a, Var b) {
  if (a.shape() != b.shape()) {
    throw Error(ErrorKind::shape, std::string(op) + ": " + shape_string(a.shape()) + " vs " +
                                      shape_string(b.shape()));
  }
}

void require_rank(const char* op, Var a, std::size_t rank) {
  if (a.shape().size() != rank) {
    throw Error(ErrorKind::shape, std::string(op) + ": expected rank " + std::to_string(rank) +
                                      ", got " + shape_string(a.shape()));
  }
}

// Patch matrix for a 3x3 same-padded convolution: rows are (channel, tap),
// columns are output pixels.
void im2col3(const double* src, std::size_t c, std::size_t h, std::size_t w, double* cols) {
  const std::size_t plane = h * w;
  for (std::size_t ic = 0; ic < c; ++ic) {
    const double* sp = src + ic * plane;
    for (int tap = 0; tap < 9; ++tap) {
      const int dy = tap / 3 - 1, dx = tap % 3 - 1;
      double* row = cols + (ic * 9 + static_cast<std::size_t>(tap)) * plane;
      for (std::size_t y = 0; y < h; ++y) {
        const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y) + dy;
        double* dst = row + y * w;
        if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) {
          std::fill(dst, dst + w, 0.0);
          continue;
        }
        const double* srow = sp + static_cast<std::size_t>(sy) * w;
        if (dx < 0) {
          dst[0] = 0.0;
          std::copy(srow, srow + w - 1, dst + 1);
        } else if (dx > 0) {
          std::copy(srow + 1, srow + w, dst);
          dst[w - 1] = 0.0;
        } else {
          std::copy(srow, srow + w, dst);
        }
      }
    }
  }
}

void col2im3(const double* cols, std::size_t c, std::size_t h, std::size_t w, double* dst) {
  const std::size_t plane = h * w;
  for (std::size_t ic = 0; ic < c; ++ic) {
    double* dp = dst + ic * plane;
    for (int tap = 0; tap < 9; ++tap) {
      const int dy = tap / 3 - 1, dx = tap % 3 - 1;
      const double* row = cols + (ic * 9 + static_cast<std::size_t>(tap)) * plane;
      const std::size_t y0 = dy < 0 ? 1 : 0, y1 = dy > 0 ? h - 1 : h;
      const std::size_t x0 = dx < 0 ? 1 : 0, x1 = dx > 0 ? w - 1 : w;
      for (std::size_t y = y0; y < y1; ++y) {
        double* drow = dp + static_cast<std::ptrdiff_t>((y + dy) * w) + dx;
        const double* crow = row + y * w;
        for (std::size_t x = x0; x < x1; ++x) drow[x] += crow[x];
      }
    }
  }
}

using v8d = double __attribute__((vector_size(64)));

// c[m,n] += A * b[k,n] where A[i,p] = a[i*rs + p*cs]. Blocks of 4 rows by 16
// columns stay in registers across the whole k loop.
void gemm_strided(const double* a, std::size_t rs, std::size_t cs, const double* b, double* c, std::size_t m,
                  std::size_t k, std::size_t n) {
  constexpr std::size_t MR = 4, NR = 16;
  std::size_t i = 0;
  for (; i + MR <= m; i += MR) {
    std::size_t j = 0;
    for (; j + NR <= n; j += NR) {
      v8d acc[MR][2];
      for (std::size_t r = 0; r < MR; ++r) {
        std::memcpy(&acc[r][0], c + (i + r) * n + j, sizeof(v8d));
        std::memcpy(&acc[r][1], c + (i + r) * n + j + 8, sizeof(v8d));
      }
      for (std::size_t p = 0; p < k; ++p) {
        v8d b0, b1;
        std::memcpy(&b0, b + p * n + j, sizeof(v8d));
        std::memcpy(&b1, b + p * n + j + 8, sizeof(v8d));
        for (std::size_t r = 0; r < MR; ++r) {
          const double av = a[(i + r) * rs + p * cs];
          acc[r][0] += av * b0;
          acc[r][1] += av * b1;
        }
      }
      for (std::size_t r = 0; r < MR; ++r) {
        std::memcpy(c + (i + r) * n + j, &acc[r][0], sizeof(v8d));
        std::memcpy(c + (i + r) * n + j + 8, &acc[r][1], sizeof(v8d));
      }
    }
    for (; j < n; ++j) {
      for (std::size_t r = 0; r < MR; ++r) {
        double acc = c[(i + r) * n + j];
        for (std::size_t p = 0; p < k; ++p) acc += a[(i + r) * rs + p * cs] * b[p * n + j];
        c[(i + r) * n + j] = acc;
      }
    }
  }
  for (; i < m; ++i) {
    double* cr = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * rs + p * cs];
      const double* br = b + p * n;
      for (std::size_t j = 0; j < n; ++j) cr[j] += av * br[j];
    }
  }
}

// c[m,n] += a[m,k] * b[k,n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  gemm_strided(a, k, 1, b, c, m, k, n);
}

// c[m,k] += a[m,n] * b[k,n]^T
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  const std::size_t nv = n - n % 8;
  for (std::size_t i = 0; i < m; ++i) {
    const double* ar = a + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double* br = b + p * n;
      v8d acc = {};
      for (std::size_t j = 0; j < nv; j += 8) {
        v8d av, bv;
        std::memcpy(&av, ar + j, sizeof(v8d));
        std::memcpy(&bv, br + j, sizeof(v8d));
        acc += av * bv;
      }
      double total = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
      for (std::size_t j = nv; j < n; ++j) total += ar[j] * br[j];
      c[i * k + p] += total;
    }
  }
}

// c[k,n] += a[m,k]^T * b[m,n]
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  gemm_strided(a, 1, k, b, c, k, m, n);
}

template <typename F, typename D>
Var unary(const char* op, Var a, F f, D dfdx) {
  const Tensor& x = a.value();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  // record() appends, so the output lands at the tape's next id; the backward
  // pass reads it from there instead of keeping a copy.
  Tape* tape = &a.tape();
  const std::size_t out_id = tape->size();
  return tape->record(op, std::move(out), {a}, [a, tape, out_id, dfdx](const Tensor& g, std::span<Tensor* const> gin) {
    const double* x = a.value().data().data();
    const double* y = tape->value(out_id).data().data();
    const double* gp = g.data().data();
    double* gx = gin[0]->data().data();
    const std::size_t n = g.size();
    for (std::size_t i = 0; i < n; ++i) gx[i] += gp[i] * dfdx(x[i], y[i]);
  });
}

}  // namespace

Var add(Var a, Var b) {
  require_same_shape("add", a, b);
  Tensor out = a.value();
  const Tensor& y = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += y[i];
  return a.tape().record("add", std::move(out), {a, b}, [](const Tensor& g, std::span<Tensor* const> gin) {
    for (auto* slot : gin) {
      if (!slot) continue;
      for (std::size_t i = 0; i < g.size(); ++i) (*slot)[i] += g[i];
    }
  });
}

Var sub(Var a, Var b) {
  require_same_shape("sub", a, b);
  Tensor out = a.value();
  const Tensor& y = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= y[i];
  return a.tape().record("sub", std::move(out), {a, b}, [](const Tensor& g, std::span<Tensor* const> gin) {
    if (gin[0]) for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i];
    if (gin[1]) for (std::size_t i = 0; i < g.size(); ++i) (*gin[1])[i] -= g[i];
  });
}

Var mul(Var a, Var b) {
  require_same_shape("mul", a, b);
  Tensor out = a.value();
  const Tensor& y = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= y[i];
  return a.tape().record("mul", std::move(out), {a, b}, [a, b](const Tensor& g, std::span<Tensor* const> gin) {
    const Tensor& x = a.value();
    const Tensor& y = b.value();
    if (gin[0]) for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i] * y[i];
    if (gin[1]) for (std::size_t i = 0; i < g.size(); ++i) (*gin[1])[i] += g[i] * x[i];
  });
}

Var scale(Var a, double factor) {
  Tensor out = a.value();
  for (auto& v : out.data()) v *= factor;
  return a.tape().record("scale", std::move(out), {a}, [factor](const Tensor& g, std::span<Tensor* const> gin) {
    for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += factor * g[i];
  });
}

Var add_scalar(Var a, double offset) {
  Tensor out = a.value();
  for (auto& v : out.data()) v += offset;
  return a.tape().record("add_scalar", std::move(out), {a}, [](const Tensor& g, std::span<Tensor* const> gin) {
    for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i];
  });
}

Var matmul(Var a, Var b) {
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  const std::size_t n = a.shape()[0], k = a.shape()[1], m = b.shape()[1];
  if (b.shape()[0] != k) {
    throw Error(ErrorKind::shape, "matmul: " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  Tensor out({n, m});
  gemm_nn(a.value().data().data(), b.value().data().data(), out.data().data(), n, k, m);
  return a.tape().record("matmul", std::move(out), {a, b},
                         [a, b, n, k, m](const Tensor& g, std::span<Tensor* const> gin) {
                           const double* gp = g.data().data();
                           if (gin[0]) gemm_nt(gp, b.value().data().data(), gin[0]->data().data(), n, k, m);
                           if (gin[1]) gemm_tn(a.value().data().data(), gp, gin[1]->data().data(), n, k, m);
                         });
}

Var add_bias(Var x, Var bias) {
  require_rank("add_bias", bias, 1);
  const std::size_t m = bias.shape()[0];
  if (x.shape().back() != m) {
    throw Error(ErrorKind::shape, "add_bias: " + shape_string(x.shape()) + " + " + shape_string(bias.shape()));
  }
  Tensor out = x.value();
  const Tensor& bv = bias.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i % m];
  return x.tape().record("add_bias", std::move(out), {x, bias}, [m](const Tensor& g, std::span<Tensor* const> gin) {
    if (gin[0]) for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i];
    if (gin[1]) for (std::size_t i = 0; i < g.size(); ++i) (*gin[1])[i % m] += g[i];
  });
}

Var conv2d(Var x, Var w, Var b) {
  require_rank("conv2d", x, 4);
  require_rank("conv2d", w, 4);
  require_rank("conv2d", b, 1);
  const std::size_t n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], wd = x.shape()[3];
  const std::size_t o = w.shape()[0];
  if (w.shape()[1] != c || w.shape()[2] != 3 || w.shape()[3] != 3 || b.shape()[0] != o) {
    throw Error(ErrorKind::shape, "conv2d: input " + shape_string(x.shape()) + ", kernel " +
                                      shape_string(w.shape()) + ", bias " + shape_string(b.shape()));
  }
  const std::size_t plane = h * wd, k = c * 9;
  Tensor out({n, o, h, wd});
  const double* in = x.value().data().data();
  const double* kw = w.value().data().data();
  const double* bv = b.value().data().data();
  double* op = out.data().data();
  std::vector<double> cols(k * plane);
  for (std::size_t s = 0; s < n; ++s) {
    double* dst = op + s * o * plane;
    for (std::size_t oc = 0; oc < o; ++oc) std::fill(dst + oc * plane, dst + (oc + 1) * plane, bv[oc]);
    im2col3(in + s * c * plane, c, h, wd, cols.data());
    gemm_nn(kw, cols.data(), dst, o, k, plane);
  }

  return x.tape().record(
      "conv2d", std::move(out), {x, w, b},
      [x, w, n, c, h, wd, o, plane, k](const Tensor& g, std::span<Tensor* const> gin) {
        const double* in = x.value().data().data();
        const double* kw = w.value().data().data();
        const double* gp = g.data().data();
        double* gx = gin[0] ? gin[0]->data().data() : nullptr;
        double* gw = gin[1] ? gin[1]->data().data() : nullptr;
        double* gb = gin[2] ? gin[2]->data().data() : nullptr;
        std::vector<double> cols(k * plane);
        for (std::size_t s = 0; s < n; ++s) {
          const double* go = gp + s * o * plane;
          if (gb) {
            for (std::size_t oc = 0; oc < o; ++oc) {
              double acc = 0.0;
              for (std::size_t i = 0; i < plane; ++i) acc += go[oc * plane + i];
              gb[oc] += acc;
            }
          }
          if (gw) {
            im2col3(in + s * c * plane, c, h, wd, cols.data());
            gemm_nt(go, cols.data(), gw, o, k, plane);
          }
          if (gx) {
            std::fill(cols.begin(), cols.end(), 0.0);
            gemm_tn(kw, go, cols.data(), o, k, plane);
            col2im3(cols.data(), c, h, wd, gx + s * c * plane);
          }
        }
      });
}

Var maxpool2(Var x) {
  require_rank("maxpool2", x, 4);
  const std::size_t n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], wd = x.shape()[3];
  if (h % 2 != 0 || wd % 2 != 0) throw Error(ErrorKind::shape, "maxpool2: odd spatial size " + shape_string(x.shape()));
  const std::size_t oh = h / 2, ow = wd / 2;
  Tensor out({n, c, oh, ow});
  std::vector<std::size_t> argmax(out.size());
  const Tensor& in = x.value();
  std::size_t idx = 0;
  for (std::size_t p = 0; p < n * c; ++p) {
    const std::size_t base = p * h * wd;
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t xx = 0; xx < ow; ++xx, ++idx) {
        std::size_t best = base + 2 * y * wd + 2 * xx;
        for (std::size_t dy = 0; dy < 2; ++dy) {
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t cand = base + (2 * y + dy) * wd + 2 * xx + dx;
            if (in[cand] > in[best]) best = cand;
          }
        }
        argmax[idx] = best;
        out[idx] = in[best];
      }
    }
  }
  return x.tape().record("maxpool2", std::move(out), {x},
                         [argmax = std::move(argmax)](const Tensor& g, std::span<Tensor* const> gin) {
                           for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[argmax[i]] += g[i];
                         });
}

Var relu(Var a) {
  return unary("relu", a, [](double v) { return v > 0.0 ? v : 0.0; },
               [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var sigmoid(Var a) {
  return unary("sigmoid", a,
               [](double v) {
                 if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
                 const double e = std::exp(v);
                 return e / (1.0 + e);
               },
               [](double, double y) { return y * (1.0 - y); });
}

Var tanh(Var a) {
  return unary("tanh", a, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Var exp(Var a) {
  return unary("exp", a, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Var log(Var a) {
  for (double v : a.value().data()) {
    if (!(v > 0.0)) throw Error(ErrorKind::numeric, "log of non-positive value");
  }
  return unary("log", a, [](double v) { return std::log(v); }, [](double x, double) { return 1.0 / x; });
}

Var softplus(Var a) {
  return unary("softplus", a, [](double v) { return v > 0.0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)); },
               [](double x, double) {
                 if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
                 const double e = std::exp(x);
                 return e / (1.0 + e);
               });
}

Var sum(Var a) {
  double acc = 0.0;
  for (double v : a.value().data()) acc += v;
  return a.tape().record("sum", Tensor::scalar(acc), {a}, [](const Tensor& g, std::span<Tensor* const> gin) {
    const double gv = g[0];
    for (auto& v : gin[0]->data()) v += gv;
  });
}

Var mean(Var a) {
  const double n = static_cast<double>(a.value().size());
  double acc = 0.0;
  for (double v : a.value().data()) acc += v;
  return a.tape().record("mean", Tensor::scalar(acc / n), {a}, [n](const Tensor& g, std::span<Tensor* const> gin) {
    const double gv = g[0] / n;
    for (auto& v : gin[0]->data()) v += gv;
  });
}

Var concat(std::span<const Var> parts) {
  if (parts.empty()) throw Error(ErrorKind::shape, "concat of zero tensors");
  Shape inner(parts[0].shape().begin() + 1, parts[0].shape().end());
  std::size_t lead = 0;
  std::vector<double> data;
  std::vector<std::size_t> sizes;
  for (const auto& p : parts) {
    Shape pin(p.shape().begin() + 1, p.shape().end());
    if (pin != inner) throw Error(ErrorKind::shape, "concat: mismatched trailing shape " + shape_string(p.shape()));
    lead += p.shape()[0];
    sizes.push_back(p.value().size());
    data.insert(data.end(), p.value().values().begin(), p.value().values().end());
  }
  Shape shape = inner;
  shape.insert(shape.begin(), lead);
  std::vector<Var> inputs(parts.begin(), parts.end());
  return parts[0].tape().record("concat", Tensor(std::move(shape), std::move(data)), std::move(inputs),
                                [sizes](const Tensor& g, std::span<Tensor* const> gin) {
                                  std::size_t off = 0;
                                  for (std::size_t k = 0; k < gin.size(); ++k) {
                                    if (gin[k]) {
                                      for (std::size_t i = 0; i < sizes[k]; ++i) (*gin[k])[i] += g[off + i];
                                    }
                                    off += sizes[k];
                                  }
                                });
}

Var reshape(Var a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return a.tape().record("reshape", std::move(out), {a}, [](const Tensor& g, std::span<Tensor* const> gin) {
    for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i];
  });
}

Var tile(Var a, std::size_t n) {
  if (n == 0) throw Error(ErrorKind::shape, "tile: zero repeats");
  const Tensor& v = a.value();
  Shape shape = v.shape();
  shape.insert(shape.begin(), n);
  std::vector<double> data;
  data.reserve(n * v.size());
  for (std::size_t r = 0; r < n; ++r) data.insert(data.end(), v.values().begin(), v.values().end());
  const std::size_t m = v.size();
  return a.tape().record("tile", Tensor(std::move(shape), std::move(data)), {a},
                         [n, m](const Tensor& g, std::span<Tensor* const> gin) {
                           for (std::size_t r = 0; r < n; ++r) {
                             for (std::size_t i = 0; i < m; ++i) (*gin[0])[i] += g[r * m + i];
                           }
                         });
}

Var column(Var a, std::size_t c) {
  require_rank("column", a, 2);
  const std::size_t n = a.shape()[0], cols = a.shape()[1];
  if (c >= cols) throw Error(ErrorKind::shape, "column " + std::to_string(c) + " of " + shape_string(a.shape()));
  Tensor out({n});
  for (std::size_t i = 0; i < n; ++i) out[i] = a.value()[i * cols + c];
  return a.tape().record("column", std::move(out), {a}, [c, cols](const Tensor& g, std::span<Tensor* const> gin) {
    for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i * cols + c] += g[i];
  });
}

Var embedding(Var table, std::span<const std::uint32_t> ids, Shape lead) {
  require_rank("embedding", table, 2);
  const std::size_t vocab = table.shape()[0], d = table.shape()[1];
  if (shape_size(lead) != ids.size()) throw Error(ErrorKind::shape, "embedding: ids do not fill " + shape_string(lead));
  std::vector<std::uint32_t> idv(ids.begin(), ids.end());
  for (auto id : idv) {
    if (id >= vocab) throw Error(ErrorKind::shape, "embedding: id " + std::to_string(id) + " out of vocabulary");
  }
  Shape shape = lead;
  shape.push_back(d);
  Tensor out(shape);
  const Tensor& t = table.value();
  for (std::size_t i = 0; i < idv.size(); ++i) {
    std::copy_n(t.data().begin() + static_cast<std::ptrdiff_t>(idv[i] * d), d,
                out.data().begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  return table.tape().record("embedding", std::move(out), {table},
                             [idv = std::move(idv), d](const Tensor& g, std::span<Tensor* const> gin) {
                               for (std::size_t i = 0; i < idv.size(); ++i) {
                                 for (std::size_t j = 0; j < d; ++j) (*gin[0])[idv[i] * d + j] += g[i * d + j];
                               }
                             });
}

Var take_step(Var x, std::size_t t) {
  require_rank("take_step", x, 3);
  const std::size_t n = x.shape()[0], l = x.shape()[1], d = x.shape()[2];
  if (t >= l) throw Error(ErrorKind::shape, "take_step " + std::to_string(t) + " of " + shape_string(x.shape()));
  Tensor out({n, d});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = x.value()[(i * l + t) * d + j];
  }
  return x.tape().record("take_step", std::move(out), {x}, [n, l, d, t](const Tensor& g, std::span<Tensor* const> gin) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < d; ++j) (*gin[0])[(i * l + t) * d + j] += g[i * d + j];
    }
  });
}

Var stack_steps(std::span<const Var> steps) {
  if (steps.empty()) throw Error(ErrorKind::shape, "stack_steps of zero tensors");
  const Shape& s0 = steps[0].shape();
  if (s0.size() != 2) throw Error(ErrorKind::shape, "stack_steps: expected [N,D], got " + shape_string(s0));
  const std::size_t n = s0[0], d = s0[1], l = steps.size();
  Tensor out({n, l, d});
  for (std::size_t t = 0; t < l; ++t) {
    if (steps[t].shape() != s0) throw Error(ErrorKind::shape, "stack_steps: mismatched step shape");
    const Tensor& v = steps[t].value();
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < d; ++j) out[(i * l + t) * d + j] = v[i * d + j];
    }
  }
  std::vector<Var> inputs(steps.begin(), steps.end());
  return steps[0].tape().record("stack_steps", std::move(out), std::move(inputs),
                                [n, l, d](const Tensor& g, std::span<Tensor* const> gin) {
                                  for (std::size_t t = 0; t < l; ++t) {
                                    if (!gin[t]) continue;
                                    for (std::size_t i = 0; i < n; ++i) {
                                      for (std::size_t j = 0; j < d; ++j) (*gin[t])[i * d + j] += g[(i * l + t) * d + j];
                                    }
                                  }
                                });
}

Var gru_cell(Var x, Var h, Var wx, Var wh, Var b) {
  require_rank("gru_cell", x, 2);
  require_rank("gru_cell", h, 2);
  const std::size_t n = x.shape()[0], d = x.shape()[1], hd = h.shape()[1];
  if (h.shape()[0] != n || wx.shape() != Shape{d, 3 * hd} || wh.shape() != Shape{hd, 3 * hd} ||
      b.shape() != Shape{3 * hd}) {
    throw Error(ErrorKind::shape, "gru_cell: x " + shape_string(x.shape()) + ", h " + shape_string(h.shape()) +
                                      ", wx " + shape_string(wx.shape()) + ", wh " + shape_string(wh.shape()));
  }
  const std::size_t g3 = 3 * hd;
  const double* xv = x.value().data().data();
  const double* hv = h.value().data().data();
  const double* wxv = wx.value().data().data();
  const double* whv = wh.value().data().data();
  const double* bv = b.value().data().data();

  std::vector<double> gx(n * g3), gh(n * g3, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double* gxr = gx.data() + i * g3;
    std::copy(bv, bv + g3, gxr);
    for (std::size_t p = 0; p < d; ++p) {
      const double a = xv[i * d + p];
      const double* wr = wxv + p * g3;
      for (std::size_t j = 0; j < g3; ++j) gxr[j] += a * wr[j];
    }
    double* ghr = gh.data() + i * g3;
    for (std::size_t p = 0; p < hd; ++p) {
      const double a = hv[i * hd + p];
      const double* wr = whv + p * g3;
      for (std::size_t j = 0; j < g3; ++j) ghr[j] += a * wr[j];
    }
  }
  auto sig = [](double v) { return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)); };
  std::vector<double> r(n * hd), z(n * hd), cand(n * hd), ghn(n * hd);
  Tensor out({n, hd});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < hd; ++j) {
      const std::size_t k = i * hd + j;
      const double* gxr = gx.data() + i * g3;
      const double* ghr = gh.data() + i * g3;
      r[k] = sig(gxr[j] + ghr[j]);
      z[k] = sig(gxr[hd + j] + ghr[hd + j]);
      ghn[k] = ghr[2 * hd + j];
      cand[k] = std::tanh(gxr[2 * hd + j] + r[k] * ghn[k]);
      out[k] = (1.0 - z[k]) * cand[k] + z[k] * hv[k];
    }
  }
  return x.tape().record(
      "gru_cell", std::move(out), {x, h, wx, wh, b},
      [x, h, wx, wh, n, d, hd, g3, r = std::move(r), z = std::move(z), cand = std::move(cand),
       ghn = std::move(ghn)](const Tensor& g, std::span<Tensor* const> gin) {
        const double* xv = x.value().data().data();
        const double* hv = h.value().data().data();
        const double* wxv = wx.value().data().data();
        const double* whv = wh.value().data().data();
        std::vector<double> dgx(n * g3), dgh(n * g3);
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = 0; j < hd; ++j) {
            const std::size_t k = i * hd + j;
            const double go = g[k];
            const double dz = go * (hv[k] - cand[k]);
            const double dcand = go * (1.0 - z[k]);
            const double dan = dcand * (1.0 - cand[k] * cand[k]);
            const double dar = dan * ghn[k] * r[k] * (1.0 - r[k]);
            const double daz = dz * z[k] * (1.0 - z[k]);
            dgx[i * g3 + j] = dar;
            dgx[i * g3 + hd + j] = daz;
            dgx[i * g3 + 2 * hd + j] = dan;
            dgh[i * g3 + j] = dar;
            dgh[i * g3 + hd + j] = daz;
            dgh[i * g3 + 2 * hd + j] = dan * r[k];
            if (gin[1]) (*gin[1])[k] += go * z[k];
          }
        }
        for (std::size_t i = 0; i < n; ++i) {
          const double* dgxr = dgx.data() + i * g3;
          const double* dghr = dgh.data() + i * g3;
          if (gin[0]) {
            for (std::size_t p = 0; p < d; ++p) {
              const double* wr = wxv + p * g3;
              double acc = 0.0;
              for (std::size_t j = 0; j < g3; ++j) acc += dgxr[j] * wr[j];
              (*gin[0])[i * d + p] += acc;
            }
          }
          if (gin[1]) {
            for (std::size_t p = 0; p < hd; ++p) {
              const double* wr = whv + p * g3;
              double acc = 0.0;
              for (std::size_t j = 0; j < g3; ++j) acc += dghr[j] * wr[j];
              (*gin[1])[i * hd + p] += acc;
            }
          }
          if (gin[2]) {
            for (std::size_t p = 0; p < d; ++p) {
              const double a = xv[i * d + p];
              double* gw = gin[2]->data().data() + p * g3;
              for (std::size_t j = 0; j < g3; ++j) gw[j] += a * dgxr[j];
            }
          }
          if (gin[3]) {
            for (std::size_t p = 0; p < hd; ++p) {
              const double a = hv[i * hd + p];
              double* gw = gin[3]->data().data() + p * g3;
              for (std::size_t j = 0; j < g3; ++j) gw[j] += a * dghr[j];
            }
          }
          if (gin[4]) {
            for (std::size_t j = 0; j < g3; ++j) (*gin[4])[j] += dgxr[j];
          }
        }
      });
}

Tensor softmax_rows(const Tensor& logits) {
  if (logits.rank() != 2) throw Error(ErrorKind::shape, "softmax_rows: expected [N,C], got " + shape_string(logits.shape()));
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  Tensor out(logits.shape());
  for (std::size_t i = 0; i < n; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, logits[i * c + j]);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += (out[i * c + j] = std::exp(logits[i * c + j] - mx));
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] /= z;
  }
  return out;
}

Var softmax_cross_entropy(Var logits, std::span<const int> targets) {
  require_rank("softmax_cross_entropy", logits, 2);
  const std::size_t n = logits.shape()[0], c = logits.shape()[1];
  if (targets.size() != n) throw Error(ErrorKind::shape, "softmax_cross_entropy: target count mismatch");
  std::vector<int> tv(targets.begin(), targets.end());
  for (int t : tv) {
    if (t < 0 || static_cast<std::size_t>(t) >= c) throw Error(ErrorKind::shape, "softmax_cross_entropy: class out of range");
  }
  const Tensor& lv = logits.value();
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, lv[i * c + j]);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(lv[i * c + j] - mx);
    loss += mx + std::log(z) - lv[i * c + static_cast<std::size_t>(tv[i])];
  }
  loss /= static_cast<double>(n);
  return logits.tape().record("softmax_cross_entropy", Tensor::scalar(loss), {logits},
                              [logits, tv = std::move(tv), n, c](const Tensor& g, std::span<Tensor* const> gin) {
                                const Tensor p = softmax_rows(logits.value());
                                const double scale = g[0] / static_cast<double>(n);
                                for (std::size_t i = 0; i < n; ++i) {
                                  for (std::size_t j = 0; j < c; ++j) {
                                    const double onehot = static_cast<std::size_t>(tv[i]) == j ? 1.0 : 0.0;
                                    (*gin[0])[i * c + j] += scale * (p[i * c + j] - onehot);
                                  }
                                }
                              });
}

Var gaussian_reparam(Var mu, Var sigma, Tensor eta) {
  require_same_shape("gaussian_reparam", mu, sigma);
  if (eta.shape() != mu.shape()) throw Error(ErrorKind::shape, "gaussian_reparam: noise shape mismatch");
  Tensor out = mu.value();
  const Tensor& s = sigma.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += s[i] * eta[i];
  return mu.tape().record("gaussian_reparam", std::move(out), {mu, sigma},
                          [eta = std::move(eta)](const Tensor& g, std::span<Tensor* const> gin) {
                            if (gin[0]) for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i];
                            if (gin[1]) for (std::size_t i = 0; i < g.size(); ++i) (*gin[1])[i] += g[i] * eta[i];
                          });
}

}  // namespace piba
