// Acceptance suite: one [PASS]/[FAIL] line per criterion. Usage:
//   acceptance [--cli PATH] [--workdir DIR] [--workers N] [criterion ...]
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "op_catalogue.hpp"
#include "piba/cli/manifest.hpp"
#include "piba/evalsuite/metrics.hpp"
#include "piba/featbn/feature_bottleneck.hpp"
#include "piba/inputbn/input_bottleneck.hpp"
#include "piba/models/training.hpp"
#include "piba/numcore/grad_check.hpp"
#include "piba/synthdata/datasets.hpp"

using namespace piba;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Options {
  std::string cli;
  fs::path workdir = fs::temp_directory_path() / "piba_acceptance";
  std::size_t workers = std::max(1u, std::thread::hardware_concurrency());
  std::set<int> only;
};
Options opt;

struct Verdict {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double mean_of(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / v.size(); }

// ---------------------------------------------------------------- shared state

constexpr std::uint64_t kDataSeed = 7, kModelSeed = 1;

struct ImageWorld {
  synth::PatchImageSet data = synth::gen_patch_dataset(kDataSeed, {600, 100, 100});
  models::SmallCnn net{kModelSeed};
  double test_acc = 0.0;
  double train_seconds = 0.0;
  std::unique_ptr<inputbn::InputIbaExplainer> explainer;
  // InputIBA maps per split, filled on demand
  std::map<synth::Split, std::vector<Tensor>> maps;
  std::map<synth::Split, double> map_seconds;
};

ImageWorld& images() {
  static ImageWorld w = [] {
    ImageWorld x;
    const auto t0 = Clock::now();
    models::TrainConfig cfg;
    cfg.seed = kModelSeed;
    x.test_acc = models::train_classifier(x.net, x.data, cfg).test_acc;
    x.train_seconds = seconds_since(t0);
    return x;
  }();
  if (!w.explainer) {
    w.explainer = std::make_unique<inputbn::InputIbaExplainer>(w.net, "conv2",
                                                               w.data.split(synth::Split::train).images);
  }
  return w;
}

std::uint64_t map_seed(synth::Split s, std::size_t i) { return 1000003ULL * (static_cast<std::uint64_t>(s) + 1) + i; }

const std::vector<Tensor>& inputiba_maps(synth::Split s) {
  auto& w = images();
  if (!w.maps.count(s)) {
    const auto t0 = Clock::now();
    const auto& split = w.data.split(s);
    std::vector<Tensor> maps(split.size());
    eval::parallel_for(maps.size(), opt.workers, [&](std::size_t i) {
      maps[i] = w.explainer->explain(split.image(i), split.labels[i], map_seed(s, i)).map.values;
    });
    w.maps[s] = std::move(maps);
    w.map_seconds[s] = seconds_since(t0);
  }
  return w.maps[s];
}

Tensor random_map(synth::Split s, std::size_t i) {
  RngStream rng(map_seed(s, i), 0x52414E44ULL);
  return eval::random_attribution({16, 16}, rng).values;
}

// ---------------------------------------------------------------- criteria

Verdict c1_autodiff() {
  const auto t0 = Clock::now();
  RngStream rng(1, 0);
  double worst = 0.0;
  std::string worst_op;
  std::size_t checks = 0;
  for (const auto& entry : testing::op_catalogue()) {
    for (int p = 0; p < 100; ++p) {
      const auto c = entry.make(rng);
      const double e = grad_check(c.f, c.x, 1e-4, 1e-5).max_error;
      ++checks;
      if (e > worst) {
        worst = e;
        worst_op = entry.name;
      }
    }
  }
  auto& w = images();
  const auto& test = w.data.split(synth::Split::test);
  const auto& train = w.data.split(synth::Split::train);
  const std::size_t layer = w.net.layer_index("conv2");
  const auto fstats = featbn::estimate_feature_stats(w.net, "conv2", train.images);
  const auto istats = featbn::stats_over_batch(train.images);
  double feat_err = 0.0, input_err = 0.0;
  for (std::size_t i = 0; i < 2; ++i) {
    RngStream r(40 + i, 0);
    const Tensor feats =
        models::feature_activations(w.net, "conv2", test.image(i).reshaped({1, 1, 16, 16})).reshaped({16, 16, 16});
    const Tensor eta_f = r.normal_tensor({2, 16, 16, 16});
    const Tensor alpha = r.normal_tensor({16, 16, 16});
    const auto target = static_cast<std::size_t>(test.labels[i]);
    feat_err = std::max(feat_err, grad_check([&](Var a) {
                                    return featbn::feature_loss(w.net, layer, a, feats, fstats, eta_f, target, 10.0);
                                  },
                                  alpha, 1e-6, 1e-4)
                                      .max_error);
    const Tensor eta_i = r.normal_tensor({2, 1, 16, 16});
    const Tensor logits = r.normal_tensor({1, 16, 16});
    const Tensor lambda_g = r.uniform_tensor({1, 16, 16}, 0.05, 0.95);
    input_err = std::max(input_err, grad_check([&](Var m) {
                                      return inputbn::input_loss(w.net, m, test.image(i), lambda_g, istats, eta_i,
                                                                 target, 20.0);
                                    },
                                    logits, 1e-6, 1e-4)
                                        .max_error);
  }
  const double secs = seconds_since(t0) - w.train_seconds;
  return {worst < 1e-5 && feat_err < 1e-4 && input_err < 1e-4 && secs < 60.0,
          fmt("%zu op checks, worst %.2e (%s); feature loss %.2e, input loss %.2e; %.1f s (limit 60)", checks, worst,
              worst_op.c_str(), feat_err, input_err, secs)};
}

// KL(P || Q) by sampling P, with both log-densities written out in full.
double monte_carlo_kl(double lam, double v, double p, double mu, double sigma, std::size_t n, RngStream& rng) {
  const double m1 = lam * v + (1 - lam) * mu, s1 = (1 - lam) * sigma;
  const double m2 = p * lam * v + (1 - p * lam) * mu, s2 = (1 - p * lam) * sigma;
  const double log_norm = 0.5 * std::log(2 * M_PI);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = lam * v + (1 - lam) * (mu + sigma * rng.normal());
    const double lp = -log_norm - std::log(s1) - 0.5 * ((x - m1) / s1) * ((x - m1) / s1);
    const double lq = -log_norm - std::log(s2) - 0.5 * ((x - m2) / s2) * ((x - m2) / s2);
    total += lp - lq;
  }
  return total / static_cast<double>(n);
}

Verdict c2_kl_oracle() {
  const auto t0 = Clock::now();
  RngStream rng(2, 0);
  double worst_rel = 0.0, worst_zero = 0.0;
  for (int d = 0; d < 20; ++d) {
    const double lam = rng.uniform(0.1, 0.9), p = rng.uniform(0.0, 0.9);
    const double v = rng.normal(), mu = rng.normal(), sigma = rng.uniform(0.5, 1.5);
    const double exact = featbn::bottleneck_kl(lam, v, p, mu, sigma);
    RngStream mc(20, static_cast<std::uint64_t>(d));
    const double est = monte_carlo_kl(lam, v, p, mu, sigma, 1000000, mc);
    worst_rel = std::max(worst_rel, std::abs(est - exact) / exact);
    // open generator mask, closed input mask
    worst_zero = std::max({worst_zero, std::abs(featbn::bottleneck_kl(lam, v, 1.0, mu, sigma)),
                           std::abs(featbn::bottleneck_kl(0.0, v, p, mu, sigma))});
  }
  const double secs = seconds_since(t0);
  return {worst_rel < 0.02 && worst_zero < 1e-12 && secs < 120.0,
          fmt("20 draws, worst relative gap %.4f (limit 0.02); zero cases max |KL| %.1e; %.1f s", worst_rel, worst_zero,
              secs)};
}

Verdict c3_reduction() {
  RngStream rng(3, 0);
  double worst = 0.0;
  for (int i = 0; i < 100000; ++i) {
    const double lam = rng.uniform() * 0.999;
    const double v = 3 * rng.normal(), mu = rng.normal(), sigma = 0.05 + 2 * rng.uniform();
    const double d = (v - mu) / sigma;
    const double direct =
        -std::log(1 - lam) + (1 - lam) * (1 - lam) / 2 + lam * lam * d * d / 2 - 0.5;
    worst = std::max(worst, std::abs(featbn::bottleneck_kl(lam, v, 0.0, mu, sigma) - direct) /
                                std::max(1.0, std::abs(direct)));
  }
  return {worst <= 1e-12, fmt("1e5 draws, worst gap %.2e (limit 1e-12, relative above magnitude 1)", worst)};
}

Verdict c4_appendix_f() {
  auto box_map = [](double in, double out) {
    Tensor m({16, 16}, out);
    for (std::size_t y = 0; y < 8; ++y) {
      for (std::size_t x = 0; x < 8; ++x) m[y * 16 + x] = in;
    }
    return m;
  };
  const synth::BBox box{0, 0, 8, 8};
  const Tensor a = box_map(1.0, 0.0), b = box_map(1.0, 0.25), c = box_map(0.25, 0.0);
  const double ea = eval::ehr(a, box), eb = eval::ehr(b, box), ec = eval::ehr(c, box);
  const double ra = eval::bbox_ratio(a, box), rb = eval::bbox_ratio(b, box), rc = eval::bbox_ratio(c, box);
  const bool ok = ea >= 0.99 && eb >= 0.78 && eb <= 0.84 && ec >= 0.05 && ec <= 0.08 && ra == 1.0 && rb == 1.0 &&
                  rc == 1.0;
  return {ok, fmt("EHR a %.5f, b %.5f, c %.5f; bbox ratio %.1f/%.1f/%.1f", ea, eb, ec, ra, rb, rc)};
}

Verdict c5_linear() {
  RngStream rng(5, 0);
  models::LinearModel lin({1, 16, 16}, 3, 5);
  const Tensor x = rng.uniform_tensor({1, 16, 16}, 0.0, 1.0);
  const Tensor& w = lin.param("fc.w").value;
  Tensor gxi({16, 16});
  for (std::size_t i = 0; i < 256; ++i) gxi[i] = w[i * 3 + 1] * x[i];
  const std::size_t ns[] = {1, 2, 4, 8, 16, 32, 64, 128};
  RngStream s(50, 0);
  const auto r = eval::sensitivity_n(lin, x, 1, gxi, ns, 200, s);
  double worst = 0.0;
  for (double v : r.curve.ys) worst = std::max(worst, std::abs(v - 1.0));

  auto& world = images();
  const auto& test = world.data.split(synth::Split::test);
  double worst_ig = 0.0;
  for (std::size_t i = 0; i < 5; ++i) {
    const auto t = static_cast<std::size_t>(test.labels[i]);
    const Tensor ig = eval::integrated_gradients_raw(world.net, test.image(i), t, 300);
    const double total = std::accumulate(ig.data().begin(), ig.data().end(), 0.0);
    const double fx = models::predict_logits(world.net, test.image(i).reshaped({1, 1, 16, 16}))[t];
    const double f0 = models::predict_logits(world.net, Tensor({1, 1, 16, 16}))[t];
    worst_ig = std::max(worst_ig, std::abs(total - (fx - f0)) / std::abs(fx - f0));
  }
  return {worst <= 1e-9 && worst_ig <= 0.01,
          fmt("sensitivity-N max |PCC-1| %.1e over 8 n (limit 1e-9); IG completeness worst gap %.4f over 5 images "
              "(limit 0.01)",
              worst, worst_ig)};
}

Verdict c6_image() {
  const auto t0 = Clock::now();
  auto& w = images();
  const auto& test = w.data.split(synth::Split::test);
  const auto& maps = inputiba_maps(synth::Split::test);
  std::vector<double> ehr_iba, ehr_rnd, ins, del;
  std::vector<eval::InsDelResult> insdel(test.size());
  eval::parallel_for(test.size(), opt.workers, [&](std::size_t i) {
    insdel[i] = eval::insertion_deletion(w.net, test.image(i), test.labels[i], maps[i], 10);
  });
  for (std::size_t i = 0; i < test.size(); ++i) {
    ehr_iba.push_back(eval::ehr(maps[i], test.bboxes[i]));
    ehr_rnd.push_back(eval::ehr(random_map(synth::Split::test, i), test.bboxes[i]));
    ins.push_back(insdel[i].insertion_auc);
    del.push_back(insdel[i].deletion_auc);
  }
  const double secs = seconds_since(t0) + w.train_seconds;
  const double ei = mean_of(ehr_iba), er = mean_of(ehr_rnd), mi = mean_of(ins), md = mean_of(del);
  return {w.test_acc >= 0.95 && ei >= 2 * er && mi > md && secs <= 1800.0,
          fmt("test acc %.3f; EHR InputIBA %.4f vs random %.4f (%.2fx, need 2x); insertion %.4f > deletion %.4f; "
              "%.0f s (limit 1800)",
              w.test_acc, ei, er, ei / er, mi, md, secs)};
}

Verdict c7_tokens() {
  const auto t0 = Clock::now();
  const auto data = synth::gen_token_dataset(kDataSeed, {1000, 100, 100});
  models::SmallRnn rnn(kModelSeed);
  models::TrainConfig cfg;
  cfg.seed = kModelSeed;
  const double acc = models::train_classifier(rnn, data, cfg).test_acc;
  const auto& train = data.split(synth::Split::train);
  const auto& test = data.split(synth::Split::test);
  const inputbn::InputIbaExplainer ex(rnn, "rnn", rnn.embed(train.sequences), inputbn::sequence_config());
  std::vector<int> hit(test.size(), 0);
  eval::parallel_for(test.size(), opt.workers, [&](std::size_t i) {
    const std::vector<std::uint32_t> one[] = {test.sequences[i]};
    const Tensor input = rnn.embed(one).reshaped(rnn.input_shape());
    const Tensor m = ex.explain(input, test.labels[i], map_seed(synth::Split::test, i)).map.values;
    std::vector<char> key(32, 0);
    for (auto p : test.key_positions[i]) key[p] = 1;
    double ks = 0, os = 0;
    int kn = 0, on = 0;
    for (std::size_t p = 0; p < 32; ++p) {
      (key[p] ? ks : os) += m[p];
      ++(key[p] ? kn : on);
    }
    hit[i] = ks / kn > os / on;
  });
  const double frac = std::accumulate(hit.begin(), hit.end(), 0.0) / hit.size();
  const double secs = seconds_since(t0);
  return {frac >= 0.9 && secs <= 900.0,
          fmt("RNN test acc %.3f; key tokens above distractors in %.0f%% of 100 sequences (need 90%%); %.0f s "
              "(limit 900)",
              acc, 100 * frac, secs)};
}

Verdict c8_sanity() {
  const auto t0 = Clock::now();
  auto& w = images();
  const auto& test = w.data.split(synth::Split::test);
  std::vector<Tensor> inputs;
  std::vector<std::size_t> targets;
  for (std::size_t i = 0; i < 20; ++i) {
    inputs.push_back(test.image(i));
    targets.push_back(test.labels[i]);
  }
  const Tensor batch = stack(inputs);
  const Tensor& train_images = w.data.split(synth::Split::train).images;
  eval::Attributor iba = [&](const models::Network& net) -> eval::MapFn {
    auto ex = std::make_shared<inputbn::InputIbaExplainer>(net, "conv2", train_images);
    return [ex](const Tensor& x, std::size_t t, std::size_t i) {
      return ex->explain(x, t, map_seed(synth::Split::test, i)).map;
    };
  };
  eval::Attributor constant = [](const models::Network&) -> eval::MapFn {
    return [](const Tensor& x, std::size_t, std::size_t) { return AttributionMap{normalize_minmax(channel_mean(x))}; };
  };
  const auto r = eval::sanity_check(w.net, iba, batch, targets, 99, opt.workers);
  const auto c = eval::sanity_check(w.net, constant, batch, targets, 99, opt.workers);
  double flat = 0.0;
  for (double v : c.mean_ssim.ys) flat = std::max(flat, std::abs(v - 1.0));
  std::string curve;
  for (double v : r.mean_ssim.ys) curve += fmt(" %.3f", v);
  const double full = r.mean_ssim.ys.back(), depth0 = r.mean_ssim.ys.front();
  const double secs = seconds_since(t0);
  return {std::abs(depth0 - 1.0) < 1e-12 && full < 0.5 && flat < 1e-12 && secs <= 1200.0,
          fmt("InputIBA SSIM by depth:%s (full randomization %.3f, need < 0.5); constant attributor max |SSIM-1| "
              "%.1e; %.0f s (limit 1200)",
              curve.c_str(), full, flat, secs)};
}

Verdict c9_roar() {
  auto& w = images();
  eval::RoarMaps iba, rnd;
  Tensor* iba_dst[] = {&iba.train, &iba.val, &iba.test};
  Tensor* rnd_dst[] = {&rnd.train, &rnd.val, &rnd.test};
  // every split's map time counts, including maps first made for criterion 6
  double map_secs = 0.0;
  for (auto s : synth::kSplits) {
    const auto& maps = inputiba_maps(s);
    map_secs += w.map_seconds[s];
    std::vector<Tensor> r;
    for (std::size_t i = 0; i < maps.size(); ++i) r.push_back(random_map(s, i));
    *iba_dst[static_cast<std::size_t>(s)] = stack(maps);
    *rnd_dst[static_cast<std::size_t>(s)] = stack(r);
  }
  const auto t1 = Clock::now();
  models::TrainConfig cfg;
  const double iba_rates[] = {0.3, 0.9}, rnd_rates[] = {0.3};
  const auto ri = eval::roar(w.data, iba, iba_rates, cfg, 11, opt.workers);
  const auto rr = eval::roar(w.data, rnd, rnd_rates, cfg, 11, opt.workers);
  const double secs = map_secs + seconds_since(t1);
  const double i30 = ri.accuracy.ys[0], i90 = ri.accuracy.ys[1], r30 = rr.accuracy.ys[0];
  return {i90 <= 0.45 && r30 >= i30 && secs <= 2700.0,
          fmt("InputIBA maps: acc %.3f at 30%%, %.3f at 90%% (need <= 0.45); random maps: %.3f at 30%% (need >= "
              "%.3f); %.0f s incl. 800 maps (limit 2700)",
              i30, i90, r30, i30, secs)};
}

Verdict c10_wgan() {
  const auto t0 = Clock::now();
  auto& w = images();
  const auto& test = w.data.split(synth::Split::test);
  inputbn::InputIbaConfig cfg;
  cfg.gen.eval_samples = 200;
  const inputbn::InputIbaExplainer ex(w.net, "conv2", w.data.split(synth::Split::train).images, cfg);
  std::vector<double> ratios(5);
  eval::parallel_for(5, opt.workers, [&](std::size_t i) {
    const auto r = ex.explain(test.image(i), test.labels[i], 100 + i);
    ratios[i] = r.wasserstein_trace.back() / r.wasserstein_trace.front();
  });
  std::string list;
  for (double v : ratios) list += fmt(" %.3f", v);
  std::vector<double> sorted = ratios;
  std::sort(sorted.begin(), sorted.end());
  return {sorted[2] <= 0.5,
          fmt("final/initial critic estimate per seed:%s; median %.3f (need <= 0.5); %.0f s", list.c_str(), sorted[2],
              seconds_since(t0))};
}

int sh(const std::string& cmd) { return std::system((cmd + " >> " + (opt.workdir / "cli.log").string() + " 2>&1").c_str()); }

Verdict c11_determinism() {
  if (opt.cli.empty()) return {false, "no --cli path given"};
  const auto t0 = Clock::now();
  const fs::path root = opt.workdir / "cli";
  fs::remove_all(root);
  fs::create_directories(root);
  const std::string P = opt.cli, d = (root / "d").string(), m = (root / "m").string(), a = (root / "a").string(),
                    r = (root / "r").string(), g = (root / "g").string(), s = (root / "s").string(),
                    e = (root / "e").string();
  // command, output directory, arguments
  const std::vector<std::tuple<std::string, std::string, std::string>> runs = {
      {"gen-data", d, "--seed 7 --n_train 120 --n_val 30 --n_test 30"},
      {"train", m, "--data " + d + " --epochs 5"},
      {"attribute", a, "--method inputiba --gen_epochs 4 --data " + d + " --model " + m + " --count 2"},
      {"attribute", r, "--method random --split all --count 0 --data " + d + " --model " + m},
      {"attribute", g, "--method ig --count 4 --data " + d + " --model " + m},
      {"eval-sensn", a, "--k_sets 50 --data " + d + " --model " + m + " --maps " + a},
      {"eval-insdel", a, "--data " + d + " --model " + m + " --maps " + a},
      {"eval-ehr", a, "--data " + d + " --maps " + a},
      {"eval-roar", r, "--rates 0.3,0.9 --epochs 3 --workers 2 --data " + d + " --maps " + r},
      {"sanity-check", s, "--method ig --count 4 --data " + d + " --model " + m},
      {"report", a, ""},
  };
  std::size_t compared = 0;
  std::vector<std::string> bad;
  for (const auto& [cmd, out, args] : runs) {
    if (sh(P + " " + cmd + " " + args + " --out " + out) != 0) return {false, cmd + " failed; see cli.log"};
    const fs::path again = fs::path(e) / (cmd + "_" + fs::path(out).filename().string());
    const fs::path manifest = fs::path(out) / cli::manifest_name(cmd);
    if (cmd == "report") {
      // report aggregates its own output directory; re-run it over a copy
      fs::copy(out, again, fs::copy_options::recursive);
      if (sh(P + " report --manifest " + manifest.string() + " --out " + again.string()) != 0) {
        return {false, "report re-run failed"};
      }
    } else if (sh(P + " " + cmd + " --manifest " + manifest.string() + " --out " + again.string()) != 0) {
      return {false, cmd + " re-run failed; see cli.log"};
    }
    const auto first = cli::read_manifest(manifest), second = cli::read_manifest(again / cli::manifest_name(cmd));
    if (!cli::verify_manifest(out, first).empty()) bad.push_back(cmd + " (artifacts changed after run)");
    std::map<std::string, std::string> h1, h2;
    for (const auto& x : first.artifacts) h1[x.path] = x.sha256;
    for (const auto& x : second.artifacts) h2[x.path] = x.sha256;
    if (h1 != h2 || h1.empty()) bad.push_back(cmd + " -> " + fs::path(out).filename().string());
    compared += h1.size();
  }
  std::string list;
  for (const auto& b : bad) list += " " + b;
  return {bad.empty(), fmt("%zu commands re-run from their manifests, %zu artifacts compared by SHA-256%s%s; %.0f s",
                           runs.size(), compared, bad.empty() ? "" : "; differing:", list.c_str(),
                           seconds_since(t0))};
}

}  // namespace

int main(int argc, char** argv) {
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--cli" && i + 1 < argc) {
      opt.cli = argv[++i];
    } else if (a == "--workdir" && i + 1 < argc) {
      opt.workdir = argv[++i];
    } else if (a == "--workers" && i + 1 < argc) {
      opt.workers = std::max(1, std::atoi(argv[++i]));
    } else {
      opt.only.insert(std::atoi(a.c_str()));
    }
  }
  fs::create_directories(opt.workdir);
  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria = {
      {"autodiff correctness", c1_autodiff},
      {"closed-form KL vs Monte-Carlo", c2_kl_oracle},
      {"IBA reduction identity", c3_reduction},
      {"EHR synthetic triple", c4_appendix_f},
      {"linear-model exactness", c5_linear},
      {"image localization end to end", c6_image},
      {"sequence localization end to end", c7_tokens},
      {"sanity check", c8_sanity},
      {"ROAR", c9_roar},
      {"WGAN progress", c10_wgan},
      {"CLI determinism", c11_determinism},
  };
  int failed = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    const int id = static_cast<int>(k) + 1;
    if (!opt.only.empty() && !opt.only.count(id)) continue;
    Verdict v;
    try {
      v = criteria[k].second();
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
    }
    failed += !v.pass;
    std::printf("[%s] %d %s: %s\n", v.pass ? "PASS" : "FAIL", id, criteria[k].first.c_str(), v.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
