#include "piba/cli/app.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fmt/chrono.h>
#include <fmt/format.h>
#include <functional>
#include <memory>
#include <ostream>
#include <variant>

#include "CLI11.hpp"
#include "piba/cli/config.hpp"
#include "piba/cli/manifest.hpp"
#include "piba/cli/map_file.hpp"
#include "piba/featbn/feature_bottleneck.hpp"
#include "piba/inputbn/input_bottleneck.hpp"
#include "piba/io/binary.hpp"
#include "piba/models/checkpoint.hpp"
#include "piba/models/training.hpp"
#include "piba/numcore/rng.hpp"
#include "piba/synthdata/datasets.hpp"

namespace piba::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kDataFile = "dataset.piba";
constexpr const char* kModelFile = "model.pibc";
constexpr const char* kMapDir = "maps";
constexpr const char* kMetricsSuffix = ".metrics.json";

// ---------------------------------------------------------------- run context

struct Context {
  std::string command;
  Config cfg;
  fs::path out;
  std::ostream* log = nullptr;
  std::vector<std::string> files;

  void bytes(const std::string& rel, std::span<const std::uint8_t> data) {
    io::write_file_atomic(out / rel, data);
    files.push_back(rel);
  }
  void text(const std::string& rel, const std::string& s) {
    io::write_text_atomic(out / rel, s);
    files.push_back(rel);
  }
  void csv(const std::string& rel, const eval::Curve& c) { text(rel, curve_csv(c)); }
  void metrics(const eval::EvalReport& r) { text(command + kMetricsSuffix, to_json(r).dump(2) + "\n"); }
};

fs::path artifact(const std::string& given, const char* default_name) {
  fs::path p(given);
  if (given.empty()) throw Error(ErrorKind::config, std::string("no path given for ") + default_name);
  std::error_code ec;
  if (fs::is_directory(p, ec)) p /= default_name;
  if (!fs::exists(p, ec)) throw Error(ErrorKind::missing_artifact, "missing artifact " + p.string());
  return p;
}

std::string fmt_real(double v) { return fmt::format("{}", v); }

// ---------------------------------------------------------------- samples

// Uniform access to image and token samples in the model's continuous input space.
struct Samples {
  synth::Dataset data;

  bool tokens() const { return std::holds_alternative<synth::TokenSeqSet>(data); }
  const synth::PatchImageSet& images() const { return std::get<synth::PatchImageSet>(data); }
  const synth::TokenSeqSet& seqs() const { return std::get<synth::TokenSeqSet>(data); }

  std::size_t count(synth::Split s) const { return tokens() ? seqs().split(s).size() : images().split(s).size(); }
  std::size_t label(synth::Split s, std::size_t i) const {
    return static_cast<std::size_t>(tokens() ? seqs().split(s).labels.at(i) : images().split(s).labels.at(i));
  }
  Tensor input(const models::Network& net, synth::Split s, std::size_t i) const {
    if (!tokens()) return images().split(s).image(i);
    const std::vector<std::uint32_t> one[] = {seqs().split(s).sequences.at(i)};
    return rnn(net).embed(one).reshaped(net.input_shape());
  }
  Tensor inputs(const models::Network& net, synth::Split s) const {
    if (!tokens()) return images().split(s).images;
    return rnn(net).embed(seqs().split(s).sequences);
  }
  Shape map_shape() const {
    return tokens() ? Shape{synth::kSeqLen} : Shape{synth::kImageSide, synth::kImageSide};
  }
  void check_model(const models::Network& net) const {
    const auto want = tokens() ? models::ModelKind::small_rnn : models::ModelKind::small_cnn;
    if (net.kind() != want) {
      throw Error(ErrorKind::validation, "model kind '" + std::string(models::kind_tag(net.kind())) +
                                             "' does not match the dataset");
    }
  }
  static const models::SmallRnn& rnn(const models::Network& net) {
    const auto* r = dynamic_cast<const models::SmallRnn*>(&net);
    if (r == nullptr) throw Error(ErrorKind::validation, "token data needs a SmallRnn checkpoint");
    return *r;
  }
};

Samples load_samples(const Config& cfg) { return Samples{synth::load_dataset(artifact(cfg.str("data"), kDataFile))}; }

std::unique_ptr<models::Network> load_model(const Config& cfg, const Samples& samples) {
  auto ck = models::load_checkpoint(artifact(cfg.str("model"), kModelFile));
  samples.check_model(*ck.net);
  return std::move(ck.net);
}

synth::Split parse_split(const std::string& s) {
  for (auto sp : synth::kSplits) {
    if (s == synth::split_name(sp)) return sp;
  }
  throw Error(ErrorKind::config, "unknown split '" + s + "' (train, val, test)");
}

std::string map_name(synth::Split s, std::size_t index) {
  return fmt::format("{}/{}_{:04}.pibm", kMapDir, synth::split_name(s), index);
}

// Stable per-map seed shared by attribute and sanity-check.
std::uint64_t map_seed(std::uint64_t seed, synth::Split s, std::size_t index) {
  return RngStream(seed, 0x6D6170ULL + static_cast<std::uint64_t>(s)).split(index).next_u64();
}

struct LoadedMaps {
  std::vector<std::size_t> indices;
  std::vector<AttributionMap> maps;
  std::string method = "unknown";
};

// Every map of `split` found under dir/maps (or dir itself), in index order.
LoadedMaps load_maps(const std::string& dir_str, synth::Split split, std::size_t available, const Shape& shape) {
  fs::path dir = artifact(dir_str, kMapDir);
  std::error_code ec;
  if (fs::is_directory(dir / kMapDir, ec)) dir /= kMapDir;
  const std::string prefix = std::string(synth::split_name(split)) + "_";
  LoadedMaps out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (entry.path().extension() != ".pibm" || !name.starts_with(prefix)) continue;
    const std::string digits = name.substr(prefix.size(), name.size() - prefix.size() - 5);
    if (digits.empty() || !std::all_of(digits.begin(), digits.end(), [](char c) { return c >= '0' && c <= '9'; })) {
      continue;
    }
    out.indices.push_back(std::stoul(digits));
  }
  std::sort(out.indices.begin(), out.indices.end());
  if (out.indices.empty()) {
    throw Error(ErrorKind::missing_artifact, "no " + std::string(synth::split_name(split)) + " maps in " + dir.string());
  }
  for (std::size_t i : out.indices) {
    if (i >= available) throw Error(ErrorKind::validation, "map index " + std::to_string(i) + " beyond the split");
    auto m = read_map(dir / fs::path(map_name(split, i)).filename());
    if (m.values.shape() != shape) {
      throw Error(ErrorKind::shape, "map " + std::to_string(i) + " has shape " + shape_string(m.values.shape()) +
                                        ", expected " + shape_string(shape));
    }
    out.maps.push_back(std::move(m));
  }
  try {
    const json prov = json::parse(out.maps.front().provenance);
    if (prov.contains("method")) out.method = prov["method"].get<std::string>();
  } catch (const json::exception&) {
  }
  return out;
}

// ---------------------------------------------------------------- attribution methods

const std::vector<KeySpec> kMethodKeys = {
    {"method", "inputiba", "inputiba | iba | ig | random"},
    {"layer", "auto", "bottleneck layer (auto: conv2 for images, rnn for tokens)"},
    {"beta_feat", "auto", "feature bottleneck beta (auto: 10 for images, 15 for tokens)"},
    {"feat_steps", "10", "feature bottleneck Adam steps"},
    {"feat_lr", "auto", "feature bottleneck learning rate (auto: 1 for images, 5e-05 for tokens)"},
    {"bank_size", "200", "target bank samples"},
    {"gen_epochs", "20", "generator epochs"},
    {"gen_lr", "0.01", "generator RMSProp learning rate"},
    {"critic_lr", "5e-05", "critic RMSProp learning rate"},
    {"gen_batch", "16", "generator batch"},
    {"critic_every", "5", "generator updates per critic update"},
    {"critic_warmup", "200", "critic updates before the first generator update"},
    {"clip", "0.01", "critic weight clip"},
    {"beta_input", "auto", "input bottleneck beta (auto: 20 for images, 30 for tokens)"},
    {"input_steps", "auto", "input bottleneck Adam steps (auto: 60 for images, 30 for tokens)"},
    {"input_lr", "0.5", "input bottleneck learning rate"},
    {"noise_draws", "10", "noise draws per bottleneck step"},
    {"ig_steps", "50", "integrated gradients steps"},
    {"ig_baseline", "0", "integrated gradients baseline value"},
    {"smooth_sigma", "0", "Gaussian smoothing of 2-D maps (0: off)"},
};

std::string resolve_layer(const Config& cfg, const Samples& samples) {
  const std::string& l = cfg.str("layer");
  if (l != "auto") return l;
  return samples.tokens() ? "rnn" : "conv2";
}

// "auto" keeps the value already in `dst`.
void maybe(const Config& cfg, std::string_view key, double& dst) {
  if (cfg.str(key) != "auto") dst = cfg.real(key);
}
void maybe(const Config& cfg, std::string_view key, std::size_t& dst) {
  if (cfg.str(key) != "auto") dst = cfg.size(key);
}

inputbn::InputIbaConfig inputiba_config(const Config& cfg, const Samples& samples) {
  inputbn::InputIbaConfig c = samples.tokens() ? inputbn::sequence_config() : inputbn::InputIbaConfig{};
  maybe(cfg, "beta_feat", c.feature.beta);
  c.feature.steps = cfg.size("feat_steps");
  maybe(cfg, "feat_lr", c.feature.lr);
  c.feature.noise_draws = cfg.size("noise_draws");
  c.bank_size = cfg.size("bank_size");
  c.gen.epochs = cfg.size("gen_epochs");
  c.gen.lr = cfg.real("gen_lr");
  c.gen.critic_lr = cfg.real("critic_lr");
  c.gen.batch = cfg.size("gen_batch");
  c.gen.critic_every = cfg.size("critic_every");
  c.gen.critic_warmup = cfg.size("critic_warmup");
  c.gen.clip = cfg.real("clip");
  maybe(cfg, "beta_input", c.input.beta);
  maybe(cfg, "input_steps", c.input.steps);
  c.input.lr = cfg.real("input_lr");
  c.input.noise_draws = cfg.size("noise_draws");
  return c;
}

AttributionMap smooth(AttributionMap m, double sigma) {
  if (sigma <= 0.0 || m.values.rank() != 2) return m;
  const auto k = static_cast<std::size_t>(2 * std::ceil(3 * sigma) + 1);
  m.values = normalize_minmax(synth::blur_image(m.values, k, sigma));
  return m;
}

// Binds the configured method to a model. The returned MapFn takes the
// per-map seed as its index argument.
eval::Attributor make_attributor(const Config& cfg, const Samples& samples) {
  const std::string method = cfg.str("method");
  const std::string layer = resolve_layer(cfg, samples);
  const double sigma = cfg.real("smooth_sigma");
  const Shape map_shape = samples.map_shape();
  if (method == "inputiba") {
    const auto ic = inputiba_config(cfg, samples);
    return [&samples, layer, ic, sigma](const models::Network& net) -> eval::MapFn {
      auto ex = std::make_shared<inputbn::InputIbaExplainer>(net, layer, samples.inputs(net, synth::Split::train), ic);
      return [ex, sigma](const Tensor& input, std::size_t target, std::size_t seed) {
        return smooth(ex->explain(input, target, seed).map, sigma);
      };
    };
  }
  if (method == "iba") {
    featbn::FeatureBottleneckConfig fc;
    maybe(cfg, "beta_feat", fc.beta);
    fc.steps = cfg.size("feat_steps");
    maybe(cfg, "feat_lr", fc.lr);
    fc.noise_draws = cfg.size("noise_draws");
    return [&samples, layer, fc, sigma](const models::Network& net) -> eval::MapFn {
      auto stats = std::make_shared<featbn::FeatureStats>(
          featbn::estimate_feature_stats(net, layer, samples.inputs(net, synth::Split::train)));
      return [&net, layer, fc, stats, sigma](const Tensor& input, std::size_t target, std::size_t seed) {
        RngStream rng(seed, 1);
        const auto fit = featbn::fit_feature_bottleneck(net, layer, input, target, *stats, fc, rng);
        auto m = featbn::iba_attribution(fit.lambda, input.shape());
        m.provenance = R"({"method":"iba","seed":)" + std::to_string(seed) + R"(,"layer":")" + layer + "\"}";
        return smooth(std::move(m), sigma);
      };
    };
  }
  if (method == "ig") {
    const std::size_t steps = cfg.size("ig_steps");
    const double baseline = cfg.real("ig_baseline");
    return [steps, baseline, sigma](const models::Network& net) -> eval::MapFn {
      return [&net, steps, baseline, sigma](const Tensor& input, std::size_t target, std::size_t) {
        return smooth(eval::integrated_gradients(net, input, target, steps, baseline), sigma);
      };
    };
  }
  if (method == "random") {
    return [map_shape, sigma](const models::Network&) -> eval::MapFn {
      return [map_shape, sigma](const Tensor&, std::size_t, std::size_t seed) {
        RngStream rng(seed, 0);
        auto m = eval::random_attribution(map_shape, rng);
        m.provenance = R"({"method":"random","seed":)" + std::to_string(seed) + "}";
        return smooth(std::move(m), sigma);
      };
    };
  }
  throw Error(ErrorKind::config, "unknown method '" + method + "' (inputiba, iba, ig, random)");
}

// ---------------------------------------------------------------- reports

eval::EvalReport base_report(const Context& ctx) {
  eval::EvalReport r;
  r.experiment = ctx.command;
  r.config = ctx.cfg.values();
  return r;
}

eval::Curve mean_curve(const std::vector<eval::Curve>& curves, std::string label) {
  eval::Curve out;
  out.label = std::move(label);
  out.xs = curves.front().xs;
  out.ys.assign(out.xs.size(), 0.0);
  for (const auto& c : curves) {
    for (std::size_t i = 0; i < c.ys.size(); ++i) out.ys[i] += c.ys[i] / static_cast<double>(curves.size());
  }
  return out;
}

// ---------------------------------------------------------------- commands

void cmd_gen_data(Context& ctx) {
  const auto& cfg = ctx.cfg;
  const std::string kind = cfg.str("kind");
  if (kind != "patch" && kind != "token") throw Error(ErrorKind::config, "kind must be patch or token");
  synth::SplitSizes sizes{kind == "patch" ? std::size_t{600} : std::size_t{1000}, 100, 100};
  if (cfg.str("n_train") != "auto") sizes.train = cfg.size("n_train");
  sizes.val = cfg.size("n_val");
  sizes.test = cfg.size("n_test");
  const std::uint64_t seed = cfg.u64("seed");
  const synth::Dataset set = kind == "patch" ? synth::Dataset(synth::gen_patch_dataset(seed, sizes))
                                             : synth::Dataset(synth::gen_token_dataset(seed, sizes));
  ctx.bytes(kDataFile, synth::encode_dataset(set));
}

void cmd_train(Context& ctx) {
  const auto& cfg = ctx.cfg;
  const Samples samples = load_samples(cfg);
  models::TrainConfig tc;
  tc.epochs = cfg.size("epochs");
  tc.lr = cfg.real("lr");
  tc.batch = cfg.size("batch");
  tc.seed = cfg.u64("seed");
  std::unique_ptr<models::Network> net;
  models::TrainResult result;
  if (samples.tokens()) {
    auto rnn = std::make_unique<models::SmallRnn>(tc.seed);
    result = models::train_classifier(*rnn, samples.seqs(), tc);
    net = std::move(rnn);
  } else {
    auto cnn = std::make_unique<models::SmallCnn>(tc.seed);
    result = models::train_classifier(*cnn, samples.images(), tc);
    net = std::move(cnn);
  }
  json cj = cfg.values();
  ctx.bytes(kModelFile, models::encode_checkpoint(*net, {tc.seed, cj.dump()}));
  eval::Curve val{{}, {}, "val_accuracy"}, loss{{}, {}, "train_loss"};
  for (const auto& e : result.history) {
    val.xs.push_back(static_cast<double>(e.epoch));
    val.ys.push_back(e.val_acc);
    loss.xs.push_back(static_cast<double>(e.epoch));
    loss.ys.push_back(e.loss);
  }
  ctx.csv("accuracy.csv", val);
  ctx.csv("loss.csv", loss);
  auto report = base_report(ctx);
  const std::size_t n = samples.count(synth::Split::test);
  const auto right = static_cast<std::size_t>(std::lround(result.test_acc * static_cast<double>(n)));
  std::vector<double> hits(n, 0.0);
  std::fill_n(hits.begin(), right, 1.0);
  const std::string model_tag(models::kind_tag(net->kind()));
  report.scalars[model_tag]["test_accuracy"] = eval::summarize(hits);
  report.curves[model_tag] = {val, loss};
  ctx.metrics(report);
  *ctx.log << fmt::format("test accuracy {:.4f}\n", result.test_acc);
}

void cmd_attribute(Context& ctx) {
  const auto& cfg = ctx.cfg;
  const Samples samples = load_samples(cfg);
  const auto net = load_model(cfg, samples);
  const std::size_t workers = std::max<std::size_t>(1, cfg.size("workers"));
  std::vector<synth::Split> splits;
  if (cfg.str("split") == "all") {
    splits.assign(synth::kSplits.begin(), synth::kSplits.end());
  } else {
    splits.push_back(parse_split(cfg.str("split")));
  }
  const std::size_t first = cfg.size("index"), count = cfg.size("count");
  const std::size_t scale = cfg.size("heatmap_scale");
  const std::uint64_t seed = cfg.u64("seed");
  const eval::MapFn fn = make_attributor(cfg, samples)(*net);
  for (auto split : splits) {
    const std::size_t available = samples.count(split);
    if (first >= available) {
      throw Error(ErrorKind::config, "index " + std::to_string(first) + " beyond the " + synth::split_name(split) +
                                         " split (" + std::to_string(available) + " samples)");
    }
    const std::size_t last = count == 0 ? available : std::min(available, first + count);
    std::vector<AttributionMap> maps(last - first);
    eval::parallel_for(maps.size(), workers, [&](std::size_t k) {
      const std::size_t i = first + k;
      maps[k] = fn(samples.input(*net, split, i), samples.label(split, i), map_seed(seed, split, i));
    });
    for (std::size_t k = 0; k < maps.size(); ++k) {
      const std::size_t i = first + k;
      ctx.bytes(map_name(split, i), encode_map(maps[k]));
      if (maps[k].values.rank() == 2) {
        ctx.bytes(fmt::format("heatmaps/{}_{:04}.pgm", synth::split_name(split), i),
                  render_heatmap(maps[k].values, scale));
      }
    }
    *ctx.log << fmt::format("{} {} maps for {}\n", maps.size(), cfg.str("method"), synth::split_name(split));
  }
}

void cmd_eval_sensn(Context& ctx) {
  const auto& cfg = ctx.cfg;
  const Samples samples = load_samples(cfg);
  const auto net = load_model(cfg, samples);
  const auto split = parse_split(cfg.str("split"));
  const auto maps = load_maps(cfg.str("maps"), split, samples.count(split), samples.map_shape());
  std::string grid = cfg.str("grid");
  if (grid == "auto") grid = samples.tokens() ? "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9" : "1,2,4,8,16,32,64,128";
  ctx.cfg.set("grid", grid);
  const std::size_t k_sets = cfg.size("k_sets");
  const std::uint64_t seed = cfg.u64("seed");
  const auto pcts = samples.tokens() ? cfg.reals("grid") : std::vector<double>{};
  const auto ns = samples.tokens() ? std::vector<std::size_t>{} : cfg.sizes("grid");
  std::vector<eval::SensitivityResult> results(maps.maps.size());
  eval::parallel_for(results.size(), std::max<std::size_t>(1, cfg.size("workers")), [&](std::size_t k) {
    const std::size_t i = maps.indices[k];
    RngStream rng(seed, 0x53454E53ULL + i);
    if (samples.tokens()) {
      results[k] = eval::sensitivity_pct(Samples::rnn(*net), samples.seqs().split(split).sequences[i],
                                         samples.label(split, i), maps.maps[k].values, pcts, k_sets, rng,
                                         eval::Degenerate::flag);
    } else {
      results[k] = eval::sensitivity_n(*net, samples.input(*net, split, i), samples.label(split, i),
                                       maps.maps[k].values, ns, k_sets, rng, eval::Degenerate::flag);
    }
  });
  auto report = base_report(ctx);
  std::vector<eval::Curve> curves;
  for (const auto& r : results) curves.push_back(r.curve);
  const eval::Curve mean = mean_curve(curves, "sensitivity");
  for (std::size_t j = 0; j < mean.xs.size(); ++j) {
    std::vector<double> pcc, degenerate;
    for (const auto& r : results) {
      pcc.push_back(r.curve.ys[j]);
      degenerate.push_back(r.degenerate[j] ? 1.0 : 0.0);
    }
    const std::string at = "@" + fmt_real(mean.xs[j]);
    report.scalars[maps.method]["pcc" + at] = eval::summarize(pcc);
    report.scalars[maps.method]["degenerate" + at] = eval::summarize(degenerate);
  }
  report.curves[maps.method] = {mean};
  ctx.csv("sensitivity.csv", mean);
  ctx.metrics(report);
}

void cmd_eval_insdel(Context& ctx) {
  const auto& cfg = ctx.cfg;
  const Samples samples = load_samples(cfg);
  const auto net = load_model(cfg, samples);
  const auto split = parse_split(cfg.str("split"));
  const auto maps = load_maps(cfg.str("maps"), split, samples.count(split), samples.map_shape());
  if (cfg.str("batch") == "auto") ctx.cfg.set("batch", samples.tokens() ? "1" : "10");
  const std::size_t batch = ctx.cfg.size("batch");
  const std::string base = cfg.str("baseline");
  if (base != "blur" && base != "zero") throw Error(ErrorKind::config, "baseline must be blur or zero");
  const auto kind = base == "blur" ? eval::BaselineKind::blur : eval::BaselineKind::zero;
  std::vector<eval::InsDelResult> results(maps.maps.size());
  eval::parallel_for(results.size(), std::max<std::size_t>(1, cfg.size("workers")), [&](std::size_t k) {
    const std::size_t i = maps.indices[k];
    if (samples.tokens()) {
      results[k] = eval::insertion_deletion(Samples::rnn(*net), samples.seqs().split(split).sequences[i],
                                            samples.label(split, i), maps.maps[k].values, batch);
    } else {
      results[k] = eval::insertion_deletion(*net, samples.input(*net, split, i), samples.label(split, i),
                                            maps.maps[k].values, batch, kind);
    }
  });
  std::vector<double> ins, del;
  std::vector<eval::Curve> ic, dc;
  for (const auto& r : results) {
    ins.push_back(r.insertion_auc);
    del.push_back(r.deletion_auc);
    ic.push_back(r.insertion);
    dc.push_back(r.deletion);
  }
  auto report = base_report(ctx);
  report.scalars[maps.method]["insertion_auc"] = eval::summarize(ins);
  report.scalars[maps.method]["deletion_auc"] = eval::summarize(del);
  const auto mi = mean_curve(ic, "insertion"), md = mean_curve(dc, "deletion");
  report.curves[maps.method] = {mi, md};
  ctx.csv("insertion.csv", mi);
  ctx.csv("deletion.csv", md);
  ctx.metrics(report);
  *ctx.log << fmt::format("insertion AUC {:.4f}, deletion AUC {:.4f}\n", report.scalars[maps.method]["insertion_auc"].mean,
                          report.scalars[maps.method]["deletion_auc"].mean);
}

void cmd_eval_ehr(Context& ctx) {
  const auto& cfg = ctx.cfg;
  const Samples samples = load_samples(cfg);
  const auto split = parse_split(cfg.str("split"));
  const auto maps = load_maps(cfg.str("maps"), split, samples.count(split), samples.map_shape());
  auto report = base_report(ctx);
  auto& scalars = report.scalars[maps.method];
  eval::Curve per{{}, {}, ""};
  for (std::size_t k = 0; k < maps.indices.size(); ++k) per.xs.push_back(static_cast<double>(maps.indices[k]));
  if (samples.tokens()) {
    std::vector<double> hit, key_mean, other_mean;
    for (std::size_t k = 0; k < maps.maps.size(); ++k) {
      const auto& keys = samples.seqs().split(split).key_positions[maps.indices[k]];
      const Tensor& m = maps.maps[k].values;
      std::vector<char> is_key(m.size(), 0);
      for (auto p : keys) is_key.at(p) = 1;
      double ks = 0, os = 0;
      std::size_t kn = 0, on = 0;
      for (std::size_t p = 0; p < m.size(); ++p) {
        (is_key[p] ? ks : os) += m[p];
        ++(is_key[p] ? kn : on);
      }
      if (kn == 0 || on == 0) throw Error(ErrorKind::validation, "sequence without key tokens or distractors");
      key_mean.push_back(ks / static_cast<double>(kn));
      other_mean.push_back(os / static_cast<double>(on));
      hit.push_back(key_mean.back() > other_mean.back() ? 1.0 : 0.0);
    }
    scalars["key_hit"] = eval::summarize(hit);
    scalars["key_mean"] = eval::summarize(key_mean);
    scalars["distractor_mean"] = eval::summarize(other_mean);
    per.label = "key_hit";
    per.ys = hit;
    *ctx.log << fmt::format("key tokens win on {:.3f} of sequences\n", scalars["key_hit"].mean);
  } else {
    const std::size_t n_thresholds = cfg.size("thresholds");
    std::vector<double> e, b;
    for (std::size_t k = 0; k < maps.maps.size(); ++k) {
      const auto& box = samples.images().split(split).bboxes[maps.indices[k]];
      e.push_back(eval::ehr(maps.maps[k].values, box, n_thresholds));
      b.push_back(eval::bbox_ratio(maps.maps[k].values, box));
    }
    scalars["ehr"] = eval::summarize(e);
    scalars["bbox_ratio"] = eval::summarize(b);
    per.label = "ehr";
    per.ys = e;
    *ctx.log << fmt::format("EHR {:.4f}, bbox ratio {:.4f}\n", scalars["ehr"].mean, scalars["bbox_ratio"].mean);
  }
  ctx.csv(per.label + ".csv", per);
  ctx.metrics(report);
}

void cmd_eval_roar(Context& ctx) {
  const auto& cfg = ctx.cfg;
  const Samples samples = load_samples(cfg);
  if (samples.tokens()) throw Error(ErrorKind::config, "eval-roar needs patch image data");
  eval::RoarMaps rm;
  Tensor* dst[] = {&rm.train, &rm.val, &rm.test};
  std::string method;
  for (auto s : synth::kSplits) {
    const std::size_t n = samples.count(s);
    const auto maps = load_maps(cfg.str("maps"), s, n, samples.map_shape());
    if (maps.indices.size() != n) {
      throw Error(ErrorKind::missing_artifact, fmt::format("ROAR needs all {} {} maps, found {}", n,
                                                           synth::split_name(s), maps.indices.size()));
    }
    std::vector<Tensor> planes;
    for (const auto& m : maps.maps) planes.push_back(m.values);
    *dst[static_cast<std::size_t>(s)] = stack(planes);
    method = maps.method;
  }
  models::TrainConfig tc;
  tc.epochs = cfg.size("epochs");
  tc.lr = cfg.real("lr");
  tc.batch = cfg.size("batch");
  const auto rates = cfg.reals("rates");
  const auto result = eval::roar(samples.images(), rm, rates, tc, cfg.u64("seed"),
                                 std::max<std::size_t>(1, cfg.size("workers")));
  auto report = base_report(ctx);
  for (std::size_t r = 0; r < rates.size(); ++r) {
    if (!result.failures[r].empty()) report.config["failure@" + fmt_real(rates[r])] = result.failures[r];
  }
  report.curves[method] = {result.accuracy};
  ctx.csv("roar.csv", result.accuracy);
  ctx.metrics(report);
  for (std::size_t r = 0; r < rates.size(); ++r) {
    *ctx.log << fmt::format("rate {}: accuracy {:.3f}\n", rates[r], result.accuracy.ys[r]);
  }
}

void cmd_sanity(Context& ctx) {
  const auto& cfg = ctx.cfg;
  const Samples samples = load_samples(cfg);
  if (samples.tokens()) throw Error(ErrorKind::config, "sanity-check needs patch image data (SSIM is 2-D)");
  const auto net = load_model(cfg, samples);
  const auto split = parse_split(cfg.str("split"));
  const std::size_t n = std::min(cfg.size("count"), samples.count(split));
  if (n == 0) throw Error(ErrorKind::config, "count must be positive");
  const std::uint64_t seed = cfg.u64("seed");
  std::vector<Tensor> inputs;
  std::vector<std::size_t> targets;
  for (std::size_t i = 0; i < n; ++i) {
    inputs.push_back(samples.input(*net, split, i));
    targets.push_back(samples.label(split, i));
  }
  const eval::Attributor base = make_attributor(cfg, samples);
  // sanity_check passes the input position; map it to the same seed attribute uses
  eval::Attributor seeded = [&](const models::Network& m) -> eval::MapFn {
    eval::MapFn fn = base(m);
    return [fn, seed, split](const Tensor& x, std::size_t t, std::size_t i) { return fn(x, t, map_seed(seed, split, i)); };
  };
  const auto r = eval::sanity_check(*net, seeded, stack(inputs), targets, cfg.u64("randomize_seed"),
                                    std::max<std::size_t>(1, cfg.size("workers")));
  auto report = base_report(ctx);
  for (std::size_t d = 0; d < r.mean_ssim.xs.size(); ++d) {
    eval::ScalarStat s{r.mean_ssim.ys[d], r.stdev[d] / std::sqrt(static_cast<double>(n)), n};
    report.scalars[cfg.str("method")]["ssim@" + std::to_string(d)] = s;
    report.config["layer@" + std::to_string(d)] = r.layers[d];
    *ctx.log << fmt::format("depth {} ({}): SSIM {:.4f} +/- {:.4f}\n", d, r.layers[d].empty() ? "-" : r.layers[d],
                            r.mean_ssim.ys[d], r.stdev[d]);
  }
  eval::Curve sd{r.mean_ssim.xs, r.stdev, "sanity_ssim_stdev"};
  report.curves[cfg.str("method")] = {r.mean_ssim, sd};
  ctx.csv("sanity.csv", r.mean_ssim);
  ctx.csv("sanity_stdev.csv", sd);
  ctx.metrics(report);
}

void cmd_report(Context& ctx) {
  std::vector<fs::path> found;
  if (fs::is_directory(ctx.out)) {
    for (const auto& e : fs::recursive_directory_iterator(ctx.out)) {
      const std::string name = e.path().filename().string();
      if (e.is_regular_file() && name.ends_with(kMetricsSuffix) && name != std::string("report") + kMetricsSuffix) {
        found.push_back(e.path());
      }
    }
  }
  std::sort(found.begin(), found.end());
  if (found.empty()) throw Error(ErrorKind::missing_artifact, "no metric artifacts under " + ctx.out.string());
  json reports = json::array();
  for (const auto& p : found) {
    const auto bytes = io::read_file(p);
    json doc;
    try {
      doc = json::parse(bytes.begin(), bytes.end());
    } catch (const json::exception& e) {
      throw Error(ErrorKind::format, p.string() + ": " + e.what());
    }
    doc["source"] = fs::relative(p, ctx.out).generic_string();
    reports.push_back(std::move(doc));
  }
  ctx.text("report.json", json{{"report_version", 1}, {"reports", reports}}.dump(2) + "\n");
  *ctx.log << fmt::format("aggregated {} metric files\n", found.size());
}

// ---------------------------------------------------------------- command table

struct Command {
  std::string name;
  std::string help;
  std::vector<KeySpec> keys;
  std::function<void(Context&)> fn;
};

std::vector<KeySpec> with(std::vector<KeySpec> a, const std::vector<KeySpec>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

const std::vector<Command>& commands() {
  static const KeySpec workers{"workers", "1", "threads for per-sample loops"};
  static const KeySpec data{"data", "", "dataset directory or file"};
  static const KeySpec model{"model", "", "model directory or checkpoint file"};
  static const KeySpec maps{"maps", "", "directory holding maps/*.pibm"};
  static const KeySpec split{"split", "test", "train | val | test"};
  static const std::vector<Command> table = {
      {"gen-data", "generate a synthetic dataset",
       {{"seed", "7", "dataset seed"},
        {"kind", "patch", "patch | token"},
        {"n_train", "auto", "training samples (auto: 600 patch, 1000 token)"},
        {"n_val", "100", "validation samples"},
        {"n_test", "100", "test samples"}},
       cmd_gen_data},
      {"train", "train the classifier for a dataset",
       {data,
        {"seed", "1", "initialization and shuffle seed"},
        {"epochs", "30", "training epochs"},
        {"lr", "0.001", "Adam learning rate"},
        {"batch", "16", "minibatch size"}},
       cmd_train},
      {"attribute", "compute attribution maps",
       with({data, model, workers,
             {"seed", "0", "attribution seed"},
             {"split", "test", "train | val | test | all"},
             {"index", "0", "first sample"},
             {"count", "1", "number of samples (0: through the end of the split)"},
             {"heatmap_scale", "1", "PGM upscale factor"}},
            kMethodKeys),
       cmd_attribute},
      {"eval-sensn", "Sensitivity-N (images) or percentage sensitivity (tokens)",
       {data, model, maps, split, workers,
        {"seed", "0", "index-set seed"},
        {"grid", "auto", "n values (images) or fractions (tokens), comma separated"},
        {"k_sets", "200", "index sets per grid point"}},
       cmd_eval_sensn},
      {"eval-insdel", "insertion and deletion curves",
       {data, model, maps, split, workers,
        {"seed", "0", "unused; recorded for uniformity"},
        {"batch", "auto", "elements per step (auto: 10 pixels, 1 token)"},
        {"baseline", "blur", "image insertion start: blur | zero"}},
       cmd_eval_insdel},
      {"eval-ehr", "effective heat ratio and bbox ratio (images) or key-token hits (tokens)",
       {data, maps, split,
        {"seed", "0", "unused; recorded for uniformity"},
        {"thresholds", "101", "EHR threshold count"}},
       cmd_eval_ehr},
      {"eval-roar", "remove and retrain",
       {data, maps, workers,
        {"seed", "0", "retraining seed (plus the rate index)"},
        {"rates", "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9", "perturbation rates"},
        {"epochs", "30", "retraining epochs"},
        {"lr", "0.001", "Adam learning rate"},
        {"batch", "16", "minibatch size"}},
       cmd_eval_roar},
      {"sanity-check", "cascading model randomization vs map similarity",
       with({data, model, split, workers,
             {"seed", "0", "attribution seed"},
             {"randomize_seed", "99", "seed for re-initialized layers"},
             {"count", "20", "inputs from the start of the split"}},
            kMethodKeys),
       cmd_sanity},
      {"report", "aggregate every *.metrics.json under --out into report.json", {}, cmd_report},
  };
  return table;
}

void print_error(std::ostream& err, int code, std::string_view kind, const std::string& message,
                 const std::string& stage = {}) {
  json e = {{"kind", kind}, {"message", message}, {"exit_code", code}};
  if (!stage.empty()) e["stage"] = stage;
  err << json{{"error", e}}.dump() << "\n";
}

}  // namespace

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::config:
    case ErrorKind::invalid_argument:
      return 2;
    case ErrorKind::numeric:
    case ErrorKind::undefined_correlation:
      return 4;
    default:
      return 3;
  }
}

json to_json(const eval::EvalReport& report) {
  json scalars = json::object();
  for (const auto& [method, metrics] : report.scalars) {
    for (const auto& [name, s] : metrics) {
      scalars[method][name] = {{"mean", s.mean}, {"sem", s.sem}, {"n", s.n}};
    }
  }
  json curves = json::object();
  for (const auto& [method, list] : report.curves) {
    curves[method] = json::array();
    for (const auto& c : list) curves[method].push_back({{"label", c.label}, {"x", c.xs}, {"y", c.ys}});
  }
  return {{"report_version", 1},
          {"experiment", report.experiment},
          {"config", report.config},
          {"scalars", scalars},
          {"curves", curves}};
}

std::string curve_csv(const eval::Curve& curve) {
  curve.validate();
  std::string out = "x,y\n";
  for (std::size_t i = 0; i < curve.xs.size(); ++i) out += fmt::format("{},{}\n", curve.xs[i], curve.ys[i]);
  return out;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"InputIBA attribution and evaluation toolkit", "piba"};
  app.require_subcommand(1);
  struct Parsed {
    std::string config_path, manifest_path, out_dir;
    std::map<std::string, std::string> flags;
  };
  std::vector<Parsed> parsed(commands().size());
  for (std::size_t c = 0; c < commands().size(); ++c) {
    const auto& cmd = commands()[c];
    auto* sub = app.add_subcommand(cmd.name, cmd.help);
    auto& p = parsed[c];
    sub->add_option("--config", p.config_path, "key = value file");
    sub->add_option("--manifest", p.manifest_path, "re-run with the resolved config of a manifest");
    sub->add_option("--out", p.out_dir, "output directory (default: $PIBA_OUT_DIR)");
    for (const auto& k : cmd.keys) {
      std::string names = "--" + k.name;
      std::string dashed = k.name;
      std::replace(dashed.begin(), dashed.end(), '_', '-');
      if (dashed != k.name) names += ",--" + dashed;
      sub->add_option_function<std::string>(
          names, [&p, key = k.name](const std::string& v) { p.flags[key] = v; },
          k.help + (k.fallback.empty() ? "" : " [" + k.fallback + "]"));
    }
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      app.exit(e, out, err);
      return 0;
    }
    print_error(err, 2, "config", e.what());
    return 2;
  }

  std::size_t which = 0;
  while (!app.got_subcommand(commands()[which].name)) ++which;
  const Command& cmd = commands()[which];
  Parsed& p = parsed[which];

  try {
    std::map<std::string, std::string> file;
    if (!p.config_path.empty() && !p.manifest_path.empty()) {
      throw Error(ErrorKind::config, "--config and --manifest are exclusive");
    }
    if (!p.config_path.empty()) {
      std::vector<std::uint8_t> bytes;
      try {
        bytes = io::read_file(p.config_path);
      } catch (const Error& e) {
        throw Error(ErrorKind::config, e.what());
      }
      file = parse_config_text(std::string(bytes.begin(), bytes.end()));
    }
    if (!p.manifest_path.empty()) {
      const RunManifest m = read_manifest(artifact(p.manifest_path, manifest_name(cmd.name).c_str()));
      if (m.command != cmd.name) {
        throw Error(ErrorKind::config, "manifest belongs to '" + m.command + "', not '" + cmd.name + "'");
      }
      file = m.config;
    }
    Context ctx{cmd.name, Config(cmd.keys, file, p.flags), {}, &out, {}};
    if (p.out_dir.empty()) {
      if (const char* env = std::getenv("PIBA_OUT_DIR"); env != nullptr && *env != '\0') p.out_dir = env;
    }
    if (p.out_dir.empty()) throw Error(ErrorKind::config, "no output directory: pass --out or set PIBA_OUT_DIR");
    ctx.out = p.out_dir;
    fs::create_directories(ctx.out);

    cmd.fn(ctx);

    ctx.text(cmd.name + ".config.txt", ctx.cfg.to_text());
    std::map<std::string, std::uint64_t> seeds;
    for (const auto& [k, v] : ctx.cfg.values()) {
      if (k == "seed" || k.ends_with("_seed")) seeds[k] = ctx.cfg.u64(k);
    }
    write_manifest(ctx.out, cmd.name, ctx.cfg.values(), seeds, ctx.files);
    return 0;
  } catch (const Error& e) {
    const int code = exit_code_for(e.kind());
    print_error(err, code, to_string(e.kind()), e.what(), e.stage());
    return code;
  } catch (const fs::filesystem_error& e) {
    print_error(err, 3, "io", e.what());
    return 3;
  }
}

}  // namespace piba::cli
