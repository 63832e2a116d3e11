#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "fixtures.hpp"
#include "piba/error.hpp"
#include "piba/evalsuite/metrics.hpp"
#include "piba/numcore/ops.hpp"

using namespace piba;
using namespace piba::eval;

namespace {

// Linear model with fixed weights on class 0 and a zero class 1.
models::LinearModel linear_model(const Shape& shape, const Tensor& w) {
  models::LinearModel m(shape, 2, 0);
  for (auto& p : m.params()) {
    for (auto& v : p.value.data()) v = 0.0;
    if (p.name == "fc.w") {
      for (std::size_t i = 0; i < w.size(); ++i) p.value[i * 2] = w[i];
    }
  }
  return m;
}

double softmax0(double z0) { return 1.0 / (1.0 + std::exp(-z0)); }

// Appendix-style 16x16 maps with an 8x8 box in the corner (25% of the area).
Tensor box_map(double inside, double outside) {
  Tensor m({16, 16}, outside);
  for (std::size_t y = 0; y < 8; ++y) {
    for (std::size_t x = 0; x < 8; ++x) m[y * 16 + x] = inside;
  }
  return m;
}
const synth::BBox kBox{0, 0, 8, 8};

// Straightforward SSIM: explicit 2-D Gaussian weights per window, no separable filtering.
double ssim_oracle(const Tensor& a, const Tensor& b) {
  const int h = static_cast<int>(a.dim(0)), w = static_cast<int>(a.dim(1));
  double g[11][11], gs = 0.0;
  for (int i = 0; i < 11; ++i) {
    for (int j = 0; j < 11; ++j) {
      g[i][j] = std::exp(-((i - 5) * (i - 5) + (j - 5) * (j - 5)) / (2 * 1.5 * 1.5));
      gs += g[i][j];
    }
  }
  double total = 0.0;
  int count = 0;
  for (int y = 0; y + 11 <= h; ++y) {
    for (int x = 0; x + 11 <= w; ++x) {
      double ma = 0, mb = 0;
      for (int i = 0; i < 11; ++i) {
        for (int j = 0; j < 11; ++j) {
          const double wt = g[i][j] / gs;
          ma += wt * a[(y + i) * w + x + j];
          mb += wt * b[(y + i) * w + x + j];
        }
      }
      double va = 0, vb = 0, cov = 0;
      for (int i = 0; i < 11; ++i) {
        for (int j = 0; j < 11; ++j) {
          const double wt = g[i][j] / gs;
          const double da = a[(y + i) * w + x + j] - ma, db = b[(y + i) * w + x + j] - mb;
          va += wt * da * da;
          vb += wt * db * db;
          cov += wt * da * db;
        }
      }
      const double c1 = 1e-4, c2 = 9e-4;
      total += (2 * ma * mb + c1) * (2 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
      ++count;
    }
  }
  return total / count;
}

// Asymptotic Kolmogorov distribution tail.
double ks_pvalue(double d, std::size_t n) {
  const double sn = std::sqrt(static_cast<double>(n));
  const double lam = (sn + 0.12 + 0.11 / sn) * d;
  double p = 0.0;
  for (int k = 1; k <= 100; ++k) p += 2.0 * ((k % 2) ? 1.0 : -1.0) * std::exp(-2.0 * k * k * lam * lam);
  return std::clamp(p, 0.0, 1.0);
}

}  // namespace

TEST_CASE("pearson") {
  const std::vector<double> x = {1, 2, 3, 4, 5};
  std::vector<double> y2, yn;
  for (double v : x) {
    y2.push_back(2 * v);
    yn.push_back(-v);
  }
  CHECK(pearson(x, y2) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(pearson(x, yn) == doctest::Approx(-1.0).epsilon(1e-15));
  const std::vector<double> a = {1, 2, 3}, b = {1, 3, 2};
  CHECK(pearson(a, b) == doctest::Approx(0.5).epsilon(1e-14));

  SUBCASE("scale and shift invariance") {
    RngStream rng(11, 0);
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<double> p(30), q(30), r(30);
      for (std::size_t i = 0; i < 30; ++i) {
        p[i] = rng.normal();
        q[i] = rng.normal() + 0.3 * p[i];
      }
      const double s = rng.uniform(0.01, 100.0), t = rng.uniform(-50.0, 50.0);
      for (std::size_t i = 0; i < 30; ++i) r[i] = s * p[i] + t;
      CHECK(std::abs(pearson(r, q) - pearson(p, q)) <= 1e-12);
    }
  }
  SUBCASE("errors") {
    const std::vector<double> flat = {2, 2, 2};
    CHECK_THROWS_AS(pearson(flat, a), Error);
    try {
      pearson(a, flat);
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::undefined_correlation);
    }
    const std::vector<double> one = {1};
    CHECK_THROWS_AS(pearson(one, one), Error);
    CHECK_THROWS_AS(pearson(a, x), Error);
  }
}

TEST_CASE("trapezoid AUC") {
  Curve c{{0.0, 0.3, 1.0}, {1.0, 1.0, 1.0}, ""};
  CHECK(auc_trapezoid(c) == doctest::Approx(1.0).epsilon(1e-15));
  RngStream rng(2, 0);
  std::vector<double> xs = {0.0};
  while (xs.back() < 1.0) xs.push_back(std::min(1.0, xs.back() + rng.uniform(0.01, 0.2)));
  Curve lin{xs, xs, ""};
  CHECK(auc_trapezoid(lin) == doctest::Approx(0.5).epsilon(1e-14));
  // |x - 0.5| on a grid that contains the kink: exact area 0.25
  Curve kink{{0.0, 0.25, 0.5, 0.9, 1.0}, {0.5, 0.25, 0.0, 0.4, 0.5}, ""};
  CHECK(std::abs(auc_trapezoid(kink) - 0.25) <= 1e-12);
  CHECK_THROWS_AS(auc_trapezoid(Curve{{0.0}, {1.0}, ""}), Error);
  CHECK_THROWS_AS(auc_trapezoid(Curve{{0.0, 0.0}, {1.0, 1.0}, ""}), Error);
  CHECK_THROWS_AS(auc_trapezoid(Curve{{0.0, 1.0}, {1.0}, ""}), Error);
}

TEST_CASE("summary statistics") {
  const std::vector<double> v = {1, 2, 3, 4};
  const auto s = summarize(v);
  CHECK(s.n == 4);
  CHECK(s.mean == 2.5);
  // sample std sqrt(5/3), divided by 2
  CHECK(s.sem == doctest::Approx(std::sqrt(5.0 / 3.0) / 2.0).epsilon(1e-14));
}

TEST_CASE("parallel_for runs every index once") {
  for (std::size_t workers : {1u, 3u, 8u}) {
    std::vector<std::atomic<int>> hits(50);
    parallel_for(50, workers, [&](std::size_t i) { ++hits[i]; });
    for (auto& h : hits) CHECK(h.load() == 1);
  }
  std::vector<std::atomic<int>> hits(10);
  try {
    parallel_for(10, 4, [&](std::size_t i) {
      ++hits[i];
      if (i == 3 || i == 7) throw Error(ErrorKind::numeric, "boom " + std::to_string(i));
    });
    FAIL("expected a throw");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("boom 3") != std::string::npos);
  }
  for (auto& h : hits) CHECK(h.load() == 1);
}

TEST_CASE("sensitivity-n") {
  RngStream rng(5, 0);
  const Tensor w = rng.normal_tensor({1, 4, 4});
  const Tensor x = rng.normal_tensor({1, 4, 4});
  const auto net = linear_model({1, 4, 4}, w);

  SUBCASE("gradient x input on a linear model correlates perfectly") {
    Tensor map({4, 4});
    for (std::size_t i = 0; i < 16; ++i) map[i] = w[i] * x[i];
    const std::size_t ns[] = {1, 2, 4, 8, 15};
    RngStream s(1, 1);
    const auto r = sensitivity_n(net, x, 0, map, ns, 50, s);
    REQUIRE(r.curve.ys.size() == 5);
    for (double v : r.curve.ys) CHECK(v == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(r.curve.xs == std::vector<double>{1, 2, 4, 8, 15});
    // a min-max normalized copy is an affine map of the same sums
    RngStream s2(1, 1);
    const auto rn = sensitivity_n(net, x, 0, normalize_minmax(map), ns, 50, s2);
    for (double v : rn.curve.ys) CHECK(v == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("a constant map has no variance to correlate") {
    const std::size_t ns[] = {4};
    RngStream s(1, 1);
    CHECK_THROWS_AS(sensitivity_n(net, x, 0, Tensor({4, 4}, 0.5), ns, 20, s), Error);
    RngStream s2(1, 1);
    const auto r = sensitivity_n(net, x, 0, Tensor({4, 4}, 0.5), ns, 20, s2, Degenerate::flag);
    CHECK(r.degenerate == std::vector<bool>{true});
    CHECK(r.curve.ys[0] == 0.0);
  }
  SUBCASE("n beyond the element count") {
    const std::size_t ns[] = {17};
    RngStream s(1, 1);
    CHECK_THROWS_AS(sensitivity_n(net, x, 0, Tensor({4, 4}, 0.5), ns, 20, s), Error);
  }
}

TEST_CASE("sensitivity over token percentages") {
  models::SmallRnn rnn(3);
  RngStream rng(9, 0);
  std::vector<std::uint32_t> seq(32);
  for (auto& t : seq) t = 1 + static_cast<std::uint32_t>(rng.below(63));
  const Tensor map = rng.uniform_tensor({32}, 0.0, 1.0);
  const double pcts[] = {0.0, 0.5, 1.0};
  RngStream s(4, 0);
  const auto r = sensitivity_pct(rnn, seq, 0, map, pcts, 30, s, Degenerate::flag);
  CHECK(r.degenerate == std::vector<bool>{true, false, true});
  CHECK(r.curve.ys[0] == 0.0);
  CHECK(r.curve.ys[2] == 0.0);
  CHECK(std::abs(r.curve.ys[1]) <= 1.0);
  RngStream s2(4, 0);
  CHECK_THROWS_AS(sensitivity_pct(rnn, seq, 0, map, pcts, 30, s2), Error);
  const double bad[] = {1.5};
  RngStream s3(4, 0);
  CHECK_THROWS_AS(sensitivity_pct(rnn, seq, 0, map, bad, 30, s3, Degenerate::flag), Error);
}

TEST_CASE("insertion and deletion") {
  RngStream rng(6, 0);
  const Tensor w = rng.uniform_tensor({1, 4, 4}, 0.1, 1.0);
  const Tensor x = rng.uniform_tensor({1, 4, 4}, 0.0, 1.0);
  const auto net = linear_model({1, 4, 4}, w);
  Tensor oracle({4, 4});
  for (std::size_t i = 0; i < 16; ++i) oracle[i] = w[i] * x[i];

  SUBCASE("deletion visits each element once in ranking order") {
    const auto r = insertion_deletion(net, x, 0, oracle, 3, BaselineKind::zero);
    const auto order = ranking(oracle);
    REQUIRE(r.deletion.xs.size() == 7);  // 0, 3, ..., 15, 16
    CHECK(r.deletion.xs.front() == 0.0);
    CHECK(r.deletion.xs.back() == 1.0);
    for (std::size_t s = 0; s < r.deletion.xs.size(); ++s) {
      const std::size_t removed = std::min<std::size_t>(s * 3, 16);
      std::vector<char> gone(16, 0);
      for (std::size_t i = 0; i < removed; ++i) gone[order[i]] = 1;
      double del = 0.0, ins = 0.0;
      for (std::size_t i = 0; i < 16; ++i) {
        if (!gone[i]) del += oracle[i];
        if (gone[i]) ins += oracle[i];
      }
      CHECK(r.deletion.xs[s] == doctest::Approx(removed / 16.0));
      CHECK(r.deletion.ys[s] == doctest::Approx(softmax0(del)).epsilon(1e-12));
      CHECK(r.insertion.ys[s] == doctest::Approx(softmax0(ins)).epsilon(1e-12));
    }
    // the final deletion state is the all-zero input
    CHECK(r.deletion.ys.back() == doctest::Approx(0.5));
  }
  SUBCASE("rearrangement: the oracle order deletes fastest") {
    Tensor reversed = oracle;
    for (auto& v : reversed.data()) v = -v;
    const auto good = insertion_deletion(net, x, 0, oracle, 1, BaselineKind::zero);
    const auto bad = insertion_deletion(net, x, 0, reversed, 1, BaselineKind::zero);
    CHECK(good.deletion_auc <= bad.deletion_auc);
    CHECK(good.insertion_auc >= bad.insertion_auc);
  }
  SUBCASE("input equal to the baseline gives a flat curve") {
    const Tensor zero({1, 4, 4}, 0.0);
    const auto r = insertion_deletion(net, zero, 0, oracle, 2, BaselineKind::blur);
    for (double v : r.insertion.ys) CHECK(v == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(r.insertion_auc == doctest::Approx(0.5).epsilon(1e-15));
  }
  SUBCASE("ties break by ascending index") {
    const auto order = ranking(Tensor::from({0.2, 0.9, 0.2, 0.9, 0.1}));
    CHECK(order == std::vector<std::size_t>{1, 3, 0, 2, 4});
  }
  SUBCASE("blur baseline on a trained network") {
    const auto& f = piba::testing::trained_cnn();
    const auto& test = f.data.split(synth::Split::test);
    const Tensor img = test.image(0);
    const auto r = insertion_deletion(f.net, img, static_cast<std::size_t>(test.labels[0]), Tensor({16, 16}, 0.5), 10);
    REQUIRE(r.insertion.xs.size() == 27);
    const Tensor blurred = synth::blur_image(img, kBlurKernel, kBlurSigma);
    const Tensor p0 = softmax_rows(models::predict_logits(f.net, blurred.reshaped({1, 1, 16, 16})));
    const Tensor p1 = softmax_rows(models::predict_logits(f.net, img.reshaped({1, 1, 16, 16})));
    CHECK(r.insertion.ys.front() == doctest::Approx(p0[test.labels[0]]).epsilon(1e-12));
    CHECK(r.insertion.ys.back() == doctest::Approx(p1[test.labels[0]]).epsilon(1e-12));
    CHECK(r.deletion.ys.front() == doctest::Approx(p1[test.labels[0]]).epsilon(1e-12));
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(insertion_deletion(net, x, 0, oracle, 0), Error);
    CHECK_THROWS_AS(insertion_deletion(net, x, 0, Tensor({3, 3}), 1), Error);
  }
}

TEST_CASE("token insertion and deletion use the unknown token") {
  models::SmallRnn rnn(2);
  std::vector<std::uint32_t> seq(32, 5);
  const auto r = insertion_deletion(rnn, seq, 1, Tensor({32}, 0.5), 4);
  REQUIRE(r.deletion.xs.size() == 9);
  const std::vector<std::vector<std::uint32_t>> unk = {std::vector<std::uint32_t>(32, 0)}, orig = {seq};
  const Tensor pu = softmax_rows(models::predict_logits(rnn, rnn.embed(unk)));
  const Tensor po = softmax_rows(models::predict_logits(rnn, rnn.embed(orig)));
  CHECK(r.deletion.ys.back() == doctest::Approx(pu[1]).epsilon(1e-12));
  CHECK(r.insertion.ys.front() == doctest::Approx(pu[1]).epsilon(1e-12));
  CHECK(r.insertion.ys.back() == doctest::Approx(po[1]).epsilon(1e-12));
  CHECK_THROWS_AS(insertion_deletion(rnn, std::vector<std::uint32_t>(31, 5), 1, Tensor({32}, 0.5), 4), Error);
}

TEST_CASE("EHR separates what the bbox ratio cannot") {
  const Tensor a = box_map(1.0, 0.0), b = box_map(1.0, 0.25), c = box_map(0.25, 0.0);
  // hand-evaluated trapezoids over the 101 thresholds
  CHECK(ehr(a, kBox) == doctest::Approx(0.99625).epsilon(1e-12));
  CHECK(ehr(b, kBox) == doctest::Approx(0.80875).epsilon(1e-12));
  CHECK(ehr(c, kBox) == doctest::Approx(0.0628125).epsilon(1e-12));
  CHECK(ehr(a, kBox) > ehr(b, kBox));
  CHECK(ehr(b, kBox) > ehr(c, kBox));
  CHECK(bbox_ratio(a, kBox) == 1.0);
  CHECK(bbox_ratio(b, kBox) == 1.0);
  CHECK(bbox_ratio(c, kBox) == 1.0);

  SUBCASE("empty threshold sets count as zero") {
    CHECK(ehr(Tensor({16, 16}, 0.0), kBox) == 0.0);
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(ehr(a, synth::BBox{10, 10, 8, 8}), Error);
    CHECK_THROWS_AS(ehr(Tensor({256}), kBox), Error);
    CHECK_THROWS_AS(bbox_ratio(a, kBox, 257), Error);
  }
}

TEST_CASE("bbox ratio") {
  CHECK(bbox_ratio(box_map(0.0, 1.0), kBox) == 0.0);
  CHECK(bbox_ratio(box_map(1.0, 0.0), kBox, 128) == 0.5);
  RngStream rng(8, 0);
  double total = 0.0;
  for (int t = 0; t < 1000; ++t) total += bbox_ratio(rng.uniform_tensor({16, 16}, 0.0, 1.0), kBox);
  // expectation is the area fraction; std of the mean is about 0.0016
  CHECK(total / 1000.0 == doctest::Approx(0.25).epsilon(0.04));
}

TEST_CASE("ssim") {
  RngStream rng(12, 0);
  const Tensor a = rng.uniform_tensor({16, 16}, 0.0, 1.0);
  Tensor b = a;
  for (auto& v : b.data()) v = std::clamp(v + 0.3 * rng.normal(), 0.0, 1.0);
  CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(std::abs(ssim(a, b) - ssim(b, a)) <= 1e-12);
  CHECK(std::abs(ssim(a, b) - ssim_oracle(a, b)) <= 1e-10);
  const Tensor c = rng.uniform_tensor({20, 13}, 0.0, 1.0), d = rng.uniform_tensor({20, 13}, 0.0, 1.0);
  CHECK(std::abs(ssim(c, d) - ssim_oracle(c, d)) <= 1e-10);

  SUBCASE("complement of a half/half map is anti-correlated") {
    Tensor half({16, 16});
    for (std::size_t y = 0; y < 16; ++y) {
      for (std::size_t x = 8; x < 16; ++x) half[y * 16 + x] = 1.0;
    }
    Tensor comp = half;
    for (auto& v : comp.data()) v = 1.0 - v;
    CHECK(ssim(half, comp) < 0.0);
  }
  SUBCASE("range over random pairs") {
    for (int t = 0; t < 50; ++t) {
      const double s = ssim(rng.uniform_tensor({16, 16}, 0.0, 1.0), rng.uniform_tensor({16, 16}, 0.0, 1.0));
      CHECK(s >= -1.0);
      CHECK(s <= 1.0);
    }
  }
  CHECK_THROWS_AS(ssim(a, Tensor({16, 15})), Error);
  CHECK_THROWS_AS(ssim(Tensor({10, 10}), Tensor({10, 10})), Error);
}

TEST_CASE("sanity check") {
  const auto& f = piba::testing::trained_cnn();
  const auto& test = f.data.split(synth::Split::test);
  std::vector<std::size_t> targets;
  for (int l : test.labels) targets.push_back(static_cast<std::size_t>(l));
  const Tensor few = stack(std::vector<Tensor>{test.image(0), test.image(1), test.image(2), test.image(3)});
  const std::span<const std::size_t> few_targets(targets.data(), 4);

  SUBCASE("a model-independent attributor never changes") {
    Attributor constant = [](const models::Network&) -> MapFn {
      return [](const Tensor& input, std::size_t, std::size_t) { return AttributionMap{channel_mean(input), "{}"}; };
    };
    const auto r = sanity_check(f.net, constant, few, few_targets, 3, 2);
    REQUIRE(r.mean_ssim.ys.size() == 5);
    for (double v : r.mean_ssim.ys) CHECK(v == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(r.layers == std::vector<std::string>{"", "fc2", "fc1", "conv2", "conv1"});
  }
  SUBCASE("gradient maps follow the model") {
    Attributor grad = [](const models::Network& net) -> MapFn {
      return [&net](const Tensor& input, std::size_t target, std::size_t) {
        Tensor g = models::input_gradient(net, input.reshaped({1, 1, 16, 16}), target);
        for (auto& v : g.data()) v = std::abs(v);
        return AttributionMap{normalize_minmax(channel_mean(g.reshaped({1, 16, 16}))), "{}"};
      };
    };
    const auto r = sanity_check(f.net, grad, few, few_targets, 3);
    CHECK(r.mean_ssim.ys[0] == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(r.stdev[0] == doctest::Approx(0.0));
    CHECK(r.mean_ssim.ys.back() < 0.9);
  }
  CHECK_THROWS_AS(sanity_check(f.net, {}, few, std::span<const std::size_t>(targets.data(), 3), 3), Error);
}

TEST_CASE("integrated gradients") {
  RngStream rng(4, 0);
  const Tensor w = rng.normal_tensor({1, 4, 4});
  const Tensor x = rng.normal_tensor({1, 4, 4});
  const auto net = linear_model({1, 4, 4}, w);

  SUBCASE("exact on a linear model for any step count") {
    for (std::size_t steps : {1u, 7u, 50u}) {
      const Tensor ig = integrated_gradients_raw(net, x, 0, steps);
      for (std::size_t i = 0; i < 16; ++i) CHECK(ig[i] == doctest::Approx(w[i] * x[i]).epsilon(1e-12));
    }
    const Tensor ig = integrated_gradients_raw(net, x, 0, 10, 0.5);
    for (std::size_t i = 0; i < 16; ++i) CHECK(ig[i] == doctest::Approx(w[i] * (x[i] - 0.5)).epsilon(1e-12));
  }
  SUBCASE("zero at the baseline") {
    const Tensor ig = integrated_gradients_raw(net, Tensor({1, 4, 4}, 0.25), 0, 20, 0.25);
    for (double v : ig.data()) CHECK(v == 0.0);
  }
  SUBCASE("normalized map") {
    const auto m = integrated_gradients(net, x, 0, 10);
    CHECK(m.values.shape() == Shape{4, 4});
    CHECK(*std::min_element(m.values.data().begin(), m.values.data().end()) == 0.0);
    CHECK(*std::max_element(m.values.data().begin(), m.values.data().end()) == 1.0);
    std::size_t top = 0;
    for (std::size_t i = 1; i < 16; ++i) {
      if (std::abs(w[i] * x[i]) > std::abs(w[top] * x[top])) top = i;
    }
    CHECK(m.values[top] == 1.0);
  }
  SUBCASE("completeness on the trained network") {
    const auto& f = piba::testing::trained_cnn();
    const auto& test = f.data.split(synth::Split::test);
    for (std::size_t i = 0; i < 3; ++i) {
      const Tensor img = test.image(i);
      const auto t = static_cast<std::size_t>(test.labels[i]);
      const Tensor ig = integrated_gradients_raw(f.net, img, t, 300);
      const double total = std::accumulate(ig.data().begin(), ig.data().end(), 0.0);
      const double fx = models::predict_logits(f.net, img.reshaped({1, 1, 16, 16}))[t];
      const double f0 = models::predict_logits(f.net, Tensor({1, 1, 16, 16}))[t];
      CHECK(std::abs(total - (fx - f0)) <= 0.01 * std::abs(fx - f0));
    }
  }
  CHECK_THROWS_AS(integrated_gradients_raw(net, x, 0, 0), Error);
}

TEST_CASE("random attribution") {
  RngStream a(21, 3), b(21, 3);
  const auto ma = random_attribution({16, 16}, a), mb = random_attribution({16, 16}, b);
  CHECK(ma.values == mb.values);

  RngStream s(22, 0);
  const Tensor v = random_attribution({40, 25}, s).values;
  std::vector<double> sorted(v.data().begin(), v.data().end());
  std::sort(sorted.begin(), sorted.end());
  const double n = static_cast<double>(sorted.size());
  double d = 0.0;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    d = std::max({d, (static_cast<double>(i) + 1) / n - sorted[i], sorted[i] - static_cast<double>(i) / n});
  }
  CHECK(ks_pvalue(d, sorted.size()) > 0.01);
}

// Box interiors as maps: the ideal ranking for every image.
RoarMaps bbox_maps(const synth::PatchImageSet& data) {
  RoarMaps maps;
  Tensor* dst[] = {&maps.train, &maps.val, &maps.test};
  for (auto s : synth::kSplits) {
    const auto& split = data.split(s);
    Tensor m({split.size(), 16, 16});
    for (std::size_t i = 0; i < split.size(); ++i) {
      const auto& bb = split.bboxes[i];
      for (std::size_t y = 0; y < 16; ++y) {
        for (std::size_t x = 0; x < 16; ++x) m[i * 256 + y * 16 + x] = bb.contains(y, x) ? 1.0 : 0.0;
      }
    }
    *dst[static_cast<std::size_t>(s)] = m;
  }
  return maps;
}

TEST_CASE("ROAR") {
  SUBCASE("perturbation replaces the top pixels of every channel") {
    RngStream rng(30, 0);
    const Tensor imgs = rng.uniform_tensor({2, 2, 4, 4}, 0.0, 1.0);
    const Tensor maps = rng.uniform_tensor({2, 4, 4}, 0.0, 1.0);
    const Tensor out = roar_perturb(imgs, maps, 0.25, -7.0);
    for (std::size_t n = 0; n < 2; ++n) {
      const auto order = ranking(maps.slice(n));
      std::vector<char> top(16, 0);
      for (std::size_t k = 0; k < 4; ++k) top[order[k]] = 1;
      for (std::size_t c = 0; c < 2; ++c) {
        for (std::size_t p = 0; p < 16; ++p) {
          const std::size_t e = (n * 2 + c) * 16 + p;
          CHECK(out[e] == (top[p] ? -7.0 : imgs[e]));
        }
      }
    }
    CHECK(roar_perturb(imgs, maps, 0.0, -7.0) == imgs);
    CHECK_THROWS_AS(roar_perturb(imgs, maps, 1.2, 0.0), Error);
    CHECK_THROWS_AS(roar_perturb(imgs, maps.slice(0), 0.5, 0.0), Error);
  }
  SUBCASE("retraining is per-rate deterministic regardless of workers") {
    const auto data = synth::gen_patch_dataset(3, {60, 20, 20});
    const RoarMaps maps = bbox_maps(data);
    models::TrainConfig cfg;
    cfg.epochs = 3;
    const double rates[] = {0.0, 0.9};
    const auto one = roar(data, maps, rates, cfg, 5, 1);
    const auto two = roar(data, maps, rates, cfg, 5, 2);
    CHECK(one.accuracy.ys == two.accuracy.ys);
    CHECK(one.accuracy.xs == std::vector<double>{0.0, 0.9});
    for (double a : one.accuracy.ys) {
      CHECK(a >= 0.0);
      CHECK(a <= 1.0);
    }
    CHECK(one.failures == std::vector<std::string>{"", ""});
  }
}

TEST_CASE("ROAR with box maps destroys the patch task") {
  const auto& data = testing::trained_cnn().data;
  const RoarMaps oracle = bbox_maps(data);
  RoarMaps random;
  Tensor* dst[] = {&random.train, &random.val, &random.test};
  RngStream rng(31, 0);
  for (auto s : synth::kSplits) *dst[static_cast<std::size_t>(s)] = rng.uniform_tensor({data.split(s).size(), 16, 16}, 0, 1);
  const models::TrainConfig cfg;
  const double rates[] = {0.3, 0.9}, low[] = {0.3};
  const auto o = roar(data, oracle, rates, cfg, 11);
  const auto r = roar(data, random, low, cfg, 11);
  // the box is 6.25% of the image, so both rates remove the whole patch
  CHECK(o.accuracy.ys[1] <= 0.45);
  CHECK(o.accuracy.ys[0] <= 0.45);
  CHECK(r.accuracy.ys[0] >= o.accuracy.ys[0]);
}
