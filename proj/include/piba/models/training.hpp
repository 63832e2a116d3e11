#pragma once

#include <cstdint>
#include <vector>

#include "piba/models/network.hpp"
#include "piba/synthdata/datasets.hpp"

namespace piba::models {

struct TrainConfig {
  std::size_t epochs = 30;
  double lr = 1e-3;
  std::size_t batch = 16;
  std::uint64_t seed = 0;
};

struct EpochStats {
  std::size_t epoch = 0;
  double loss = 0.0;
  double train_acc = 0.0;
  double val_acc = 0.0;
};

struct TrainResult {
  std::vector<EpochStats> history;
  double test_acc = 0.0;
};

// Adam on mean cross-entropy with a fresh shuffle per epoch. Throws
// ErrorKind::numeric naming the epoch if the loss diverges.
TrainResult train_classifier(Network& net, const synth::PatchImageSet& data, const TrainConfig& cfg);
TrainResult train_classifier(SmallRnn& net, const synth::TokenSeqSet& data, const TrainConfig& cfg);

double accuracy(const Network& net, const synth::PatchSplit& split);
double accuracy(const SmallRnn& net, const synth::TokenSplit& split);

}  // namespace piba::models
