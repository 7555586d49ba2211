#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "nilmprune/dataset.hpp"
#include "nilmprune/model.hpp"
#include "nilmprune/optimizer.hpp"

namespace nilmprune {

enum class LossKind { MSE };

struct TrainConfig {
  std::int64_t epochs = 100;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  LossKind loss = LossKind::MSE;
  OptimizerKind optimizer = OptimizerKind::Adam;
  std::optional<std::int64_t> patience;  // epochs without improvement before stopping

  void validate() const;
};

struct TrainHooks {
  /// Extra scalar added to every batch loss (sparse-training regularizers).
  std::function<Tensor(const ModelGraph&)> penalty;
  std::function<void(std::int64_t epoch, double loss)> on_epoch;
};

struct TrainResult {
  std::vector<double> loss_history;  // mean batch loss per epoch run
  bool early_stopped = false;
};

/**
 * Minibatch training on normalized windows. Masked entries are re-zeroed after
 * every optimizer step. Epoch numbering continues from model.epochs_trained so
 * that resumed runs shuffle exactly as an uninterrupted run would.
 *
 * Throws NumericError naming the epoch and batch when the loss goes non-finite.
 */
TrainResult train(ModelGraph& model, const WindowDataset& data, const TrainConfig& cfg,
                  const TrainHooks& hooks = {});

/// Model predictions in watts for every window of `data`, row-major [count, W].
std::vector<double> predict_watts(const ModelGraph& model, const WindowDataset& data);

}  // namespace nilmprune
