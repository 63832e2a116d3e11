#pragma once

#include "piba/models/training.hpp"
#include "piba/synthdata/datasets.hpp"

namespace piba::testing {

// Patch data and a SmallCnn trained on it, built once per test binary.
struct TrainedCnn {
  synth::PatchImageSet data;
  models::SmallCnn net{1};
};

inline const TrainedCnn& trained_cnn() {
  static const TrainedCnn fixture = [] {
    TrainedCnn f{synth::gen_patch_dataset(7, {600, 100, 100}), models::SmallCnn(1)};
    models::TrainConfig cfg;
    cfg.seed = 1;
    models::train_classifier(f.net, f.data, cfg);
    return f;
  }();
  return fixture;
}

}  // namespace piba::testing
