#include "piba/models/training.hpp"

#include <cmath>
#include <numeric>

#include "piba/error.hpp"
#include "piba/numcore/ops.hpp"
#include "piba/numcore/optim.hpp"
#include "piba/numcore/rng.hpp"

namespace piba::models {

namespace {

std::size_t argmax_row(const Tensor& logits, std::size_t row) {
  const std::size_t c = logits.dim(1);
  std::size_t best = 0;
  for (std::size_t j = 1; j < c; ++j) {
    if (logits[row * c + j] > logits[row * c + best]) best = j;
  }
  return best;
}

double count_correct(const Tensor& logits, std::span<const int> labels) {
  double hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += argmax_row(logits, i) == static_cast<std::size_t>(labels[i]);
  return hits;
}

Tensor gather_images(const Tensor& images, std::span<const std::size_t> idx) {
  const std::size_t per = images.size() / images.dim(0);
  Shape shape = images.shape();
  shape[0] = idx.size();
  Tensor out(shape);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    std::copy_n(images.data().begin() + static_cast<std::ptrdiff_t>(idx[i] * per), per,
                out.data().begin() + static_cast<std::ptrdiff_t>(i * per));
  }
  return out;
}

// Shared loop: `step_loss` builds the mean CE of a minibatch on `tape` from
// bound weights and returns (loss, logits).
template <typename StepFn, typename EvalFn>
TrainResult run_training(Network& net, std::size_t n_train, const TrainConfig& cfg, StepFn&& step_loss,
                         EvalFn&& eval_acc) {
  if (n_train == 0) throw Error(ErrorKind::invalid_argument, "training split is empty");
  if (cfg.batch == 0) throw Error(ErrorKind::invalid_argument, "batch size must be positive");
  OptimState opt(OptimConfig{.kind = OptimKind::adam, .lr = cfg.lr});
  RngStream order_rng(cfg.seed, 0x5452414EULL);
  std::vector<std::size_t> order(n_train);
  TrainResult result;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    order_rng.shuffle(std::span(order));
    double loss_sum = 0.0, hits = 0.0;
    for (std::size_t start = 0; start < n_train; start += cfg.batch) {
      const std::size_t end = std::min(n_train, start + cfg.batch);
      const std::span<const std::size_t> idx(order.data() + start, end - start);
      Tape tape;
      const auto w = net.bind(tape, true);
      Gradients g;
      try {
        auto [loss, correct] = step_loss(tape, w, idx);
        loss_sum += loss.value().item() * static_cast<double>(idx.size());
        hits += correct;
        g = tape.backward(loss);
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::numeric) throw;
        throw Error(ErrorKind::numeric, "training diverged at epoch " + std::to_string(epoch + 1) + ": " + e.what());
      }
      std::vector<Tensor*> params;
      std::vector<Tensor> grads;
      for (std::size_t i = 0; i < w.size(); ++i) {
        params.push_back(&net.params()[i].value);
        grads.push_back(g[w[i]]);
      }
      optimizer_step(opt, params, grads);

    }
    result.history.push_back(EpochStats{epoch + 1, loss_sum / static_cast<double>(n_train),
                                        hits / static_cast<double>(n_train), eval_acc(synth::Split::val)});
  }
  result.test_acc = eval_acc(synth::Split::test);
  return result;
}

}  // namespace

double accuracy(const Network& net, const synth::PatchSplit& split) {
  if (split.size() == 0) return 0.0;
  return count_correct(predict_logits(net, split.images), split.labels) / static_cast<double>(split.size());
}

double accuracy(const SmallRnn& net, const synth::TokenSplit& split) {
  if (split.size() == 0) return 0.0;
  return count_correct(predict_logits(net, net.embed(split.sequences)), split.labels) /
         static_cast<double>(split.size());
}

TrainResult train_classifier(Network& net, const synth::PatchImageSet& data, const TrainConfig& cfg) {
  const auto& train = data.split(synth::Split::train);
  return run_training(
      net, train.size(), cfg,
      [&](Tape& tape, const std::vector<Var>& w, std::span<const std::size_t> idx) {
        std::vector<int> labels;
        for (auto i : idx) labels.push_back(train.labels[i]);
        Var logits = net.forward(w, tape.constant(gather_images(train.images, idx)), 0, net.last_layer());
        return std::pair{softmax_cross_entropy(logits, labels), count_correct(logits.value(), labels)};
      },
      [&](synth::Split s) { return accuracy(net, data.split(s)); });
}

TrainResult train_classifier(SmallRnn& net, const synth::TokenSeqSet& data, const TrainConfig& cfg) {
  const auto& train = data.split(synth::Split::train);
  return run_training(
      net, train.size(), cfg,
      [&](Tape&, const std::vector<Var>& w, std::span<const std::size_t> idx) {
        std::vector<int> labels;
        std::vector<std::vector<std::uint32_t>> seqs;
        for (auto i : idx) {
          labels.push_back(train.labels[i]);
          seqs.push_back(train.sequences[i]);
        }
        Var logits = net.forward(w, net.embed(w[0], seqs), 0, net.last_layer());
        return std::pair{softmax_cross_entropy(logits, labels), count_correct(logits.value(), labels)};
      },
      [&](synth::Split s) { return accuracy(net, data.split(s)); });
}

}  // namespace piba::models
