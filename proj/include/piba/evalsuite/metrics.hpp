#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "piba/attribution.hpp"
#include "piba/models/network.hpp"
#include "piba/models/training.hpp"
#include "piba/numcore/rng.hpp"
#include "piba/synthdata/datasets.hpp"

namespace piba::eval {

struct Curve {
  std::vector<double> xs;
  std::vector<double> ys;
  std::string label;

  // Throws invalid_argument unless xs and ys have equal length and xs strictly increases.
  void validate() const;
};

// Mean and standard error (sample std / sqrt(n)) of per-sample values.
struct ScalarStat {
  double mean = 0.0;
  double sem = 0.0;
  std::size_t n = 0;
};
ScalarStat summarize(std::span<const double> values);

struct EvalReport {
  std::string experiment;
  std::map<std::string, std::string> config;
  // method -> metric -> statistic
  std::map<std::string, std::map<std::string, ScalarStat>> scalars;
  // method -> curves
  std::map<std::string, std::vector<Curve>> curves;
};

// Runs fn(0..n-1) on up to `workers` threads. Every index runs exactly once;
// the exception of the lowest failing index is rethrown after all finish.
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn);

// Throws undefined_correlation when either input has zero variance.
double pearson(std::span<const double> x, std::span<const double> y);
double auc_trapezoid(const Curve& curve);

// ---- perturbation metrics ----

// How a zero-variance correlation is surfaced: as an error, or as 0 plus a flag.
enum class Degenerate { raise, flag };

struct SensitivityResult {
  Curve curve;  // PCC vs n (or vs percentage)
  std::vector<bool> degenerate;
};

// For each n: k_sets uniform index sets of n positions; output change = target
// logit(input) - target logit(input with those positions zeroed); PCC between
// the changes and the map sums over each set.
SensitivityResult sensitivity_n(const models::Network& net, const Tensor& input, std::size_t target,
                                const Tensor& map, std::span<const std::size_t> n_values, std::size_t k_sets,
                                RngStream& stream, Degenerate policy = Degenerate::raise);

// Token version: ceil(pct * L) tokens replaced by the unknown token.
SensitivityResult sensitivity_pct(const models::SmallRnn& net, const std::vector<std::uint32_t>& sequence,
                                  std::size_t target, const Tensor& map, std::span<const double> pct_values,
                                  std::size_t k_sets, RngStream& stream, Degenerate policy = Degenerate::raise);

enum class BaselineKind { blur, zero };

inline constexpr std::size_t kBlurKernel = 5;
inline constexpr double kBlurSigma = 2.0;

struct InsDelResult {
  Curve insertion;
  Curve deletion;
  double insertion_auc = 0.0;
  double deletion_auc = 0.0;
};

// Positions are visited in descending map order, ties by ascending index.
// Deletion moves the input to zero `batch` positions at a time; insertion
// starts from the baseline (blurred or zero input) and restores them. Curves
// track the target-class softmax probability against the fraction perturbed.
InsDelResult insertion_deletion(const models::Network& net, const Tensor& input, std::size_t target, const Tensor& map,
                                std::size_t batch, BaselineKind baseline = BaselineKind::blur);
// Token version: both directions use the all-unknown sequence as the baseline.
InsDelResult insertion_deletion(const models::SmallRnn& net, const std::vector<std::uint32_t>& sequence,
                                std::size_t target, const Tensor& map, std::size_t batch);

// Perturbation order: indices sorted by descending value, stable.
std::vector<std::size_t> ranking(const Tensor& map);

// ---- ROAR ----

struct RoarMaps {
  Tensor train, val, test;  // [N, H, W] per split
};

struct RoarResult {
  Curve accuracy;                    // test accuracy vs rate; NaN where training failed
  std::vector<std::string> failures;  // one entry per rate, empty when it trained
};

// Replaces the top round(rate * H*W) pixels of each image (by its map) with `fill`.
Tensor roar_perturb(const Tensor& images, const Tensor& maps, double rate, double fill);

// Per rate: perturb every split, retrain a fresh SmallCnn (seed + rate index),
// report test accuracy. The fill value is the training-set pixel mean.
RoarResult roar(const synth::PatchImageSet& data, const RoarMaps& maps, std::span<const double> rates,
                const models::TrainConfig& cfg, std::uint64_t seed, std::size_t workers = 1);

// ---- localization ----

double ehr(const Tensor& map, const synth::BBox& box, std::size_t n_thresholds = 101);
// Fraction of the top-n positions inside the box; n = 0 means the box area.
double bbox_ratio(const Tensor& map, const synth::BBox& box, std::size_t n = 0);

// ---- map similarity and sanity check ----

inline constexpr std::size_t kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;

// Mean SSIM over all fully contained 11x11 Gaussian windows (K1 0.01, K2 0.03, L 1).
double ssim(const Tensor& a, const Tensor& b);

// Map for one input; `index` identifies the input so methods can derive per-input seeds.
using MapFn = std::function<AttributionMap(const Tensor& input, std::size_t target, std::size_t index)>;
// Binds an attribution method to a model; called once per (randomized) model.
using Attributor = std::function<MapFn(const models::Network&)>;

struct SanityResult {
  Curve mean_ssim;          // x = number of randomized layers counted from the end
  std::vector<double> stdev;  // per depth
  std::vector<std::string> layers;  // first randomized layer per depth ("" at depth 0)
};

// Depth d re-initializes the last d layers (cascading from the output) and
// compares each input's map against the map from the intact model.
SanityResult sanity_check(const models::Network& net, const Attributor& attributor, const Tensor& inputs,
                          std::span<const std::size_t> targets, std::uint64_t seed, std::size_t workers = 1);

// ---- comparison attributors ----

// (input - baseline) * mean target-logit gradient along the straight path.
Tensor integrated_gradients_raw(const models::Network& net, const Tensor& input, std::size_t target,
                                std::size_t steps = 50, double baseline = 0.0);
// |raw| reduced to positions (channel mean for images, embedding mean for
// sequences), then min-max normalized.
AttributionMap integrated_gradients(const models::Network& net, const Tensor& input, std::size_t target,
                                    std::size_t steps = 50, double baseline = 0.0);

AttributionMap random_attribution(const Shape& shape, RngStream& stream);

}  // namespace piba::eval
