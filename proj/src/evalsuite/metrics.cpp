#include "piba/evalsuite/metrics.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <numeric>
#include <thread>

#include "piba/error.hpp"
#include "piba/numcore/ops.hpp"

namespace piba::eval {

namespace {

// Maps input elements to map positions: images [C,H,W] share a pixel across
// channels, sequences [L,D] share a token across embedding dims.
struct Layout {
  std::size_t positions = 0;
  std::vector<std::size_t> owner;  // element -> position
};

Layout layout_for(const Shape& input_shape, std::size_t map_size) {
  Layout l;
  l.positions = map_size;
  const std::size_t n = shape_size(input_shape);
  l.owner.resize(n);
  if (input_shape.size() == 3) {
    const std::size_t plane = input_shape[1] * input_shape[2];
    if (plane != map_size) throw Error(ErrorKind::shape, "map does not match the image plane");
    for (std::size_t e = 0; e < n; ++e) l.owner[e] = e % plane;
  } else if (input_shape.size() == 2) {
    if (input_shape[0] != map_size) throw Error(ErrorKind::shape, "map does not match the sequence length");
    for (std::size_t e = 0; e < n; ++e) l.owner[e] = e / input_shape[1];
  } else {
    if (n != map_size) throw Error(ErrorKind::shape, "map does not match the input");
    std::iota(l.owner.begin(), l.owner.end(), std::size_t{0});
  }
  return l;
}

// Row k of the batch takes `from` at positions with flag set, `base` elsewhere.
void write_mix(double* dst, const Tensor& base, const Tensor& from, const Layout& l, const std::vector<char>& flag) {
  for (std::size_t e = 0; e < l.owner.size(); ++e) dst[e] = flag[l.owner[e]] ? from[e] : base[e];
}

Tensor batch_of(const Shape& input_shape, std::size_t n) {
  Shape s{n};
  s.insert(s.end(), input_shape.begin(), input_shape.end());
  return Tensor(std::move(s));
}

double target_logit(const models::Network& net, const Tensor& input, std::size_t target) {
  return models::predict_logits(net, input.reshaped(batch_of(input.shape(), 1).shape()))[target];
}

SensitivityResult sensitivity_core(const models::Network& net, const Tensor& input, const Tensor& baseline,
                                   std::size_t target, const Tensor& map, std::span<const std::size_t> counts,
                                   std::span<const double> xs, std::size_t k_sets, RngStream& stream,
                                   Degenerate policy) {
  if (target >= net.num_classes()) throw Error(ErrorKind::invalid_argument, "target class out of range");
  if (k_sets < 2) throw Error(ErrorKind::invalid_argument, "need at least two index sets");
  const Layout l = layout_for(input.shape(), map.size());
  const double full = target_logit(net, input, target);
  SensitivityResult out;
  out.curve.label = "sensitivity";
  for (std::size_t ci = 0; ci < counts.size(); ++ci) {
    const std::size_t n = counts[ci];
    if (n > l.positions) {
      throw Error(ErrorKind::invalid_argument,
                  "n = " + std::to_string(n) + " exceeds " + std::to_string(l.positions) + " elements");
    }
    Tensor batch = batch_of(input.shape(), k_sets);
    std::vector<double> sums(k_sets, 0.0);
    for (std::size_t k = 0; k < k_sets; ++k) {
      std::vector<char> keep(l.positions, 1);
      for (std::size_t p : stream.sample_without_replacement(l.positions, n)) {
        keep[p] = 0;
        sums[k] += map[p];
      }
      write_mix(batch.data().data() + k * input.size(), baseline, input, l, keep);
    }
    const Tensor logits = models::predict_logits(net, batch);
    std::vector<double> change(k_sets);
    for (std::size_t k = 0; k < k_sets; ++k) change[k] = full - logits[k * net.num_classes() + target];
    double r = 0.0;
    bool degenerate = false;
    try {
      r = pearson(sums, change);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::undefined_correlation || policy == Degenerate::raise) throw;
      degenerate = true;
    }
    out.curve.xs.push_back(xs[ci]);
    out.curve.ys.push_back(r);
    out.degenerate.push_back(degenerate);
  }
  return out;
}

std::vector<double> softmax_target(const Tensor& logits, std::size_t target) {
  const Tensor p = softmax_rows(logits);
  const std::size_t c = logits.dim(1);
  std::vector<double> out(logits.dim(0));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = p[i * c + target];
  return out;
}

// Deletion walks input -> `del_to`, insertion walks `ins_from` -> input.
InsDelResult insdel_core(const models::Network& net, const Tensor& input, const Tensor& del_to,
                         const Tensor& ins_from, std::size_t target, const Tensor& map, std::size_t batch) {
  if (batch == 0) throw Error(ErrorKind::invalid_argument, "insertion/deletion batch must be positive");
  if (target >= net.num_classes()) throw Error(ErrorKind::invalid_argument, "target class out of range");
  const Layout l = layout_for(input.shape(), map.size());
  const std::vector<std::size_t> order = ranking(map);
  const std::size_t steps = (l.positions + batch - 1) / batch;
  Tensor del = batch_of(input.shape(), steps + 1), ins = batch_of(input.shape(), steps + 1);
  std::vector<char> done(l.positions, 0);
  InsDelResult out;
  for (std::size_t s = 0; s <= steps; ++s) {
    const std::size_t count = std::min(s * batch, l.positions);
    for (std::size_t i = s == 0 ? 0 : (s - 1) * batch; i < count; ++i) done[order[i]] = 1;
    write_mix(del.data().data() + s * input.size(), input, del_to, l, done);
    write_mix(ins.data().data() + s * input.size(), ins_from, input, l, done);
    const double x = static_cast<double>(count) / static_cast<double>(l.positions);
    out.deletion.xs.push_back(x);
    out.insertion.xs.push_back(x);
  }
  out.deletion.ys = softmax_target(models::predict_logits(net, del), target);
  out.insertion.ys = softmax_target(models::predict_logits(net, ins), target);
  out.deletion.label = "deletion";
  out.insertion.label = "insertion";
  out.deletion_auc = auc_trapezoid(out.deletion);
  out.insertion_auc = auc_trapezoid(out.insertion);
  return out;
}

Tensor embed_one(const models::SmallRnn& net, const std::vector<std::uint32_t>& seq) {
  if (seq.size() != models::SmallRnn::kLen) throw Error(ErrorKind::shape, "sequence length must be 32");
  const std::vector<std::uint32_t> rows[] = {seq};
  return net.embed(rows).reshaped(net.input_shape());
}

Tensor unknown_embedding(const models::SmallRnn& net) {
  return embed_one(net, std::vector<std::uint32_t>(models::SmallRnn::kLen, synth::kUnknownToken));
}

// Gaussian-weighted local means over every fully contained window.
Tensor window_filter(const Tensor& plane, const std::vector<double>& taps) {
  const std::size_t h = plane.dim(0), w = plane.dim(1), k = taps.size();
  const std::size_t oh = h - k + 1, ow = w - k + 1;
  Tensor rows({h, ow});
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (std::size_t t = 0; t < k; ++t) acc += taps[t] * plane[y * w + x + t];
      rows[y * ow + x] = acc;
    }
  }
  Tensor out({oh, ow});
  for (std::size_t y = 0; y < oh; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (std::size_t t = 0; t < k; ++t) acc += taps[t] * rows[(y + t) * ow + x];
      out[y * ow + x] = acc;
    }
  }
  return out;
}

double sample_std(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

}  // namespace

void Curve::validate() const {
  if (xs.size() != ys.size()) throw Error(ErrorKind::invalid_argument, "curve xs and ys differ in length");
  for (std::size_t i = 1; i < xs.size(); ++i) {
    if (!(xs[i] > xs[i - 1])) throw Error(ErrorKind::invalid_argument, "curve xs must strictly increase");
  }
}

ScalarStat summarize(std::span<const double> values) {
  ScalarStat s;
  s.n = values.size();
  if (s.n == 0) return s;
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(s.n);
  s.sem = sample_std(values) / std::sqrt(static_cast<double>(s.n));
  return s;
}

void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn) {
  std::vector<std::exception_ptr> errors(n);
  auto run = [&](std::size_t i) {
    try {
      fn(i);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) run(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < workers; ++t) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) run(i);
      });
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) {
    throw Error(ErrorKind::invalid_argument, "pearson needs two equal-length inputs of at least 2 values");
  }
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  // Variance below rounding noise of the mean counts as zero.
  auto flat = [](double ss, double m, double count) {
    const double scale = std::max(1.0, std::abs(m));
    return ss <= count * std::pow(1e-12 * scale, 2);
  };
  if (flat(sxx, mx, n) || flat(syy, my, n)) {
    throw Error(ErrorKind::undefined_correlation, "correlation undefined: zero variance");
  }
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double auc_trapezoid(const Curve& curve) {
  curve.validate();
  if (curve.xs.size() < 2) throw Error(ErrorKind::invalid_argument, "AUC needs at least 2 points");
  double area = 0.0;
  for (std::size_t i = 1; i < curve.xs.size(); ++i) {
    area += 0.5 * (curve.ys[i] + curve.ys[i - 1]) * (curve.xs[i] - curve.xs[i - 1]);
  }
  return area;
}

SensitivityResult sensitivity_n(const models::Network& net, const Tensor& input, std::size_t target,
                                const Tensor& map, std::span<const std::size_t> n_values, std::size_t k_sets,
                                RngStream& stream, Degenerate policy) {
  std::vector<double> xs(n_values.begin(), n_values.end());
  auto out = sensitivity_core(net, input, Tensor(input.shape(), 0.0), target, map, n_values, xs, k_sets, stream,
                              policy);
  out.curve.label = "sensitivity_n";
  return out;
}

SensitivityResult sensitivity_pct(const models::SmallRnn& net, const std::vector<std::uint32_t>& sequence,
                                  std::size_t target, const Tensor& map, std::span<const double> pct_values,
                                  std::size_t k_sets, RngStream& stream, Degenerate policy) {
  const std::size_t len = sequence.size();
  std::vector<std::size_t> counts;
  for (double p : pct_values) {
    if (!(p >= 0.0 && p <= 1.0)) throw Error(ErrorKind::invalid_argument, "percentage must lie in [0,1]");
    // the small slack keeps e.g. 0.3 * 10 from rounding up to 4
    counts.push_back(static_cast<std::size_t>(std::ceil(p * static_cast<double>(len) - 1e-9)));
  }
  std::vector<double> xs(pct_values.begin(), pct_values.end());
  auto out = sensitivity_core(net, embed_one(net, sequence), unknown_embedding(net), target, map, counts, xs, k_sets,
                              stream, policy);
  out.curve.label = "sensitivity_pct";
  return out;
}

std::vector<std::size_t> ranking(const Tensor& map) {
  std::vector<std::size_t> order(map.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return map[a] > map[b]; });
  return order;
}

InsDelResult insertion_deletion(const models::Network& net, const Tensor& input, std::size_t target, const Tensor& map,
                                std::size_t batch, BaselineKind baseline) {
  const Tensor zero(input.shape(), 0.0);
  const Tensor start = baseline == BaselineKind::blur ? synth::blur_image(input, kBlurKernel, kBlurSigma) : zero;
  return insdel_core(net, input, zero, start, target, map, batch);
}

InsDelResult insertion_deletion(const models::SmallRnn& net, const std::vector<std::uint32_t>& sequence,
                                std::size_t target, const Tensor& map, std::size_t batch) {
  const Tensor unknown = unknown_embedding(net);
  return insdel_core(net, embed_one(net, sequence), unknown, unknown, target, map, batch);
}

Tensor roar_perturb(const Tensor& images, const Tensor& maps, double rate, double fill) {
  if (images.rank() != 4 || maps.rank() != 3 || images.dim(0) != maps.dim(0) || images.dim(2) != maps.dim(1) ||
      images.dim(3) != maps.dim(2)) {
    throw Error(ErrorKind::shape, "ROAR needs images [N,C,H,W] and maps [N,H,W]");
  }
  if (!(rate >= 0.0 && rate <= 1.0)) throw Error(ErrorKind::invalid_argument, "ROAR rate must lie in [0,1]");
  const std::size_t n = images.dim(0), c = images.dim(1), plane = maps.dim(1) * maps.dim(2);
  const auto k = static_cast<std::size_t>(std::lround(rate * static_cast<double>(plane)));
  Tensor out = images;
  for (std::size_t i = 0; i < n; ++i) {
    const std::vector<std::size_t> order = ranking(maps.slice(i));
    for (std::size_t r = 0; r < k; ++r) {
      for (std::size_t ch = 0; ch < c; ++ch) out[(i * c + ch) * plane + order[r]] = fill;
    }
  }
  return out;
}

RoarResult roar(const synth::PatchImageSet& data, const RoarMaps& maps, std::span<const double> rates,
                const models::TrainConfig& cfg, std::uint64_t seed, std::size_t workers) {
  const Tensor& train_images = data.split(synth::Split::train).images;
  const double fill = std::accumulate(train_images.data().begin(), train_images.data().end(), 0.0) /
                      static_cast<double>(train_images.size());
  const Tensor* split_maps[] = {&maps.train, &maps.val, &maps.test};
  RoarResult out;
  out.accuracy.label = "roar";
  out.accuracy.xs.assign(rates.begin(), rates.end());
  out.accuracy.ys.assign(rates.size(), std::numeric_limits<double>::quiet_NaN());
  out.failures.assign(rates.size(), "");
  out.accuracy.validate();
  parallel_for(rates.size(), workers, [&](std::size_t r) {
    synth::PatchImageSet perturbed = data;
    for (auto s : synth::kSplits) {
      auto& split = perturbed.splits[static_cast<std::size_t>(s)];
      split.images = roar_perturb(split.images, *split_maps[static_cast<std::size_t>(s)], rates[r], fill);
    }
    models::SmallCnn net(seed + r);
    models::TrainConfig c = cfg;
    c.seed = seed + r;
    try {
      out.accuracy.ys[r] = models::train_classifier(net, perturbed, c).test_acc;
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::numeric) throw;
      out.failures[r] = e.what();
    }
  });
  return out;
}

double ehr(const Tensor& map, const synth::BBox& box, std::size_t n_thresholds) {
  if (map.rank() != 2) throw Error(ErrorKind::shape, "EHR needs a 2-D map");
  const std::size_t h = map.dim(0), w = map.dim(1);
  if (box.height == 0 || box.width == 0 || box.top + box.height > h || box.left + box.width > w) {
    throw Error(ErrorKind::invalid_argument, "bounding box lies outside the map");
  }
  if (n_thresholds < 2) throw Error(ErrorKind::invalid_argument, "EHR needs at least 2 thresholds");
  Curve c;
  for (std::size_t i = 0; i < n_thresholds; ++i) {
    const double tau = static_cast<double>(i) / static_cast<double>(n_thresholds - 1);
    std::size_t above = 0;
    double inside = 0.0;
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const double v = map[y * w + x];
        if (v < tau) continue;
        ++above;
        if (box.contains(y, x)) inside += v;
      }
    }
    c.xs.push_back(tau);
    c.ys.push_back(above == 0 ? 0.0 : inside / static_cast<double>(above));
  }
  return auc_trapezoid(c);
}

double bbox_ratio(const Tensor& map, const synth::BBox& box, std::size_t n) {
  if (map.rank() != 2) throw Error(ErrorKind::shape, "bbox ratio needs a 2-D map");
  const std::size_t w = map.dim(1);
  if (box.top + box.height > map.dim(0) || box.left + box.width > w) {
    throw Error(ErrorKind::invalid_argument, "bounding box lies outside the map");
  }
  if (n == 0) n = box.area();
  if (n == 0 || n > map.size()) throw Error(ErrorKind::invalid_argument, "n must lie in [1, element count]");
  const std::vector<std::size_t> order = ranking(map);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < n; ++i) hits += box.contains(order[i] / w, order[i] % w);
  return static_cast<double>(hits) / static_cast<double>(n);
}

double ssim(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw Error(ErrorKind::shape, "ssim: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  if (a.rank() != 2 || a.dim(0) < kSsimWindow || a.dim(1) < kSsimWindow) {
    throw Error(ErrorKind::shape, "ssim needs 2-D maps of at least 11x11");
  }
  constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  const auto taps = synth::gaussian_taps(kSsimWindow, kSsimSigma);
  Tensor aa(a.shape()), bb(a.shape()), ab(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) {
    aa[i] = a[i] * a[i];
    bb[i] = b[i] * b[i];
    ab[i] = a[i] * b[i];
  }
  const Tensor ma = window_filter(a, taps), mb = window_filter(b, taps);
  const Tensor saa = window_filter(aa, taps), sbb = window_filter(bb, taps), sab = window_filter(ab, taps);
  double total = 0.0;
  for (std::size_t i = 0; i < ma.size(); ++i) {
    const double va = saa[i] - ma[i] * ma[i], vb = sbb[i] - mb[i] * mb[i], cov = sab[i] - ma[i] * mb[i];
    total += ((2 * ma[i] * mb[i] + c1) * (2 * cov + c2)) / ((ma[i] * ma[i] + mb[i] * mb[i] + c1) * (va + vb + c2));
  }
  return total / static_cast<double>(ma.size());
}

SanityResult sanity_check(const models::Network& net, const Attributor& attributor, const Tensor& inputs,
                          std::span<const std::size_t> targets, std::uint64_t seed, std::size_t workers) {
  const std::size_t n = inputs.dim(0);
  if (targets.size() != n) throw Error(ErrorKind::invalid_argument, "one target per input required");
  const auto& layers = net.layer_names();
  auto maps_for = [&](const models::Network& model) {
    const MapFn fn = attributor(model);
    std::vector<Tensor> maps(n);
    parallel_for(n, workers, [&](std::size_t i) { maps[i] = fn(inputs.slice(i), targets[i], i).values; });
    return maps;
  };
  const std::vector<Tensor> original = maps_for(net);
  SanityResult out;
  out.mean_ssim.label = "sanity_ssim";
  for (std::size_t depth = 0; depth <= layers.size(); ++depth) {
    std::vector<Tensor> maps;
    if (depth == 0) {
      maps = original;
      out.layers.emplace_back();
    } else {
      const std::string& from = layers[layers.size() - depth];
      maps = maps_for(*models::randomize_from_layer(net, from, seed + depth));
      out.layers.push_back(from);
    }
    std::vector<double> scores(n);
    for (std::size_t i = 0; i < n; ++i) scores[i] = ssim(original[i], maps[i]);
    out.mean_ssim.xs.push_back(static_cast<double>(depth));
    out.mean_ssim.ys.push_back(std::accumulate(scores.begin(), scores.end(), 0.0) / static_cast<double>(n));
    out.stdev.push_back(sample_std(scores));
  }
  return out;
}

Tensor integrated_gradients_raw(const models::Network& net, const Tensor& input, std::size_t target,
                                std::size_t steps, double baseline) {
  if (steps == 0) throw Error(ErrorKind::invalid_argument, "integrated gradients needs at least one step");
  const std::size_t per = input.size();
  Tensor path = batch_of(input.shape(), steps);
  for (std::size_t k = 0; k < steps; ++k) {
    const double t = static_cast<double>(k + 1) / static_cast<double>(steps);
    for (std::size_t i = 0; i < per; ++i) path[k * per + i] = baseline + t * (input[i] - baseline);
  }
  const Tensor grads = models::input_gradient(net, path, target);
  Tensor out(input.shape());
  for (std::size_t i = 0; i < per; ++i) {
    double g = 0.0;
    for (std::size_t k = 0; k < steps; ++k) g += grads[k * per + i];
    out[i] = (input[i] - baseline) * g / static_cast<double>(steps);
  }
  return out;
}

AttributionMap integrated_gradients(const models::Network& net, const Tensor& input, std::size_t target,
                                    std::size_t steps, double baseline) {
  Tensor raw = integrated_gradients_raw(net, input, target, steps, baseline);
  for (auto& v : raw.data()) v = std::abs(v);
  AttributionMap map;
  if (raw.rank() == 3) {
    map.values = normalize_minmax(channel_mean(raw));
  } else if (raw.rank() == 2) {
    map.values = normalize_minmax(feature_mean(raw));
  } else {
    map.values = normalize_minmax(raw);
  }
  map.provenance = R"({"method":"ig","steps":)" + std::to_string(steps) + "}";
  return map;
}

AttributionMap random_attribution(const Shape& shape, RngStream& stream) {
  AttributionMap map;
  map.values = normalize_minmax(stream.uniform_tensor(shape, 0.0, 1.0));
  map.provenance = R"({"method":"random"})";
  return map;
}

}  // namespace piba::eval
