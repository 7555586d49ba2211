#include "nilmprune/train.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "nilmprune/errors.hpp"
#include "nilmprune/rng.hpp"

namespace nilmprune {

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1, got " + std::to_string(epochs));
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
  if (patience && *patience < 1) throw ConfigError("patience must be >= 1 when set");
}

TrainResult train(ModelGraph& model, const WindowDataset& data, const TrainConfig& cfg,
                  const TrainHooks& hooks) {
  cfg.validate();
  if (data.count == 0) throw DataError("training dataset is empty");
  if (data.window != model.window_len) {
    throw DimensionError("dataset windows have " + std::to_string(data.window) +
                         " samples, model expects " + std::to_string(model.window_len));
  }
  const std::size_t out_len = model.output_len();
  if (out_len != data.window) {
    throw DimensionError("seq2seq training needs output length " + std::to_string(data.window) +
                         ", model produces " + std::to_string(out_len));
  }

  const auto xs = data.normalized_x();
  const auto ys = data.normalized_y();
  const std::size_t w = data.window;

  Optimizer opt({cfg.optimizer, cfg.learning_rate}, model.parameters());
  model.apply_masks();
  model.normalization = data.stats;

  TrainResult result;
  double best = std::numeric_limits<double>::infinity();
  std::int64_t since_best = 0;
  std::vector<std::size_t> order(data.count);

  for (std::int64_t e = 0; e < cfg.epochs; ++e) {
    const std::int64_t epoch = model.epochs_trained;
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(cfg.seed, static_cast<std::uint64_t>(epoch));
    rng.shuffle(order.begin(), order.end());

    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < data.count; start += cfg.batch_size) {
      const std::size_t n = std::min(cfg.batch_size, data.count - start);
      std::vector<double> bx(n * w), by(n * w);
      for (std::size_t r = 0; r < n; ++r) {
        const std::size_t row = order[start + r];
        std::copy_n(xs.begin() + static_cast<std::ptrdiff_t>(row * w), w, bx.begin() + static_cast<std::ptrdiff_t>(r * w));
        std::copy_n(ys.begin() + static_cast<std::ptrdiff_t>(row * w), w, by.begin() + static_cast<std::ptrdiff_t>(r * w));
      }
      Tensor input({n, w}, std::move(bx));
      Tensor target({n, w}, std::move(by));

      opt.zero_grad();
      Tensor loss = mse_loss(forward_batch(model, input), target);
      if (hooks.penalty) loss = add(loss, hooks.penalty(model));
      const double value = loss.item();
      if (!std::isfinite(value)) {
        std::ostringstream os;
        os << "non-finite loss (" << value << ") at epoch " << epoch << ", batch " << batches;
        throw NumericError(os.str());
      }
      backward(loss);
      opt.step();
      model.apply_masks();
      loss_sum += value;
      ++batches;
    }
    const double epoch_loss = loss_sum / static_cast<double>(batches);
    result.loss_history.push_back(epoch_loss);
    model.loss_history.push_back(epoch_loss);
    ++model.epochs_trained;
    if (hooks.on_epoch) hooks.on_epoch(epoch, epoch_loss);

    if (cfg.patience) {
      if (epoch_loss < best) {
        best = epoch_loss;
        since_best = 0;
      } else if (++since_best >= *cfg.patience) {
        result.early_stopped = true;
        break;
      }
    }
  }
  return result;
}

std::vector<double> predict_watts(const ModelGraph& model, const WindowDataset& data) {
  if (data.window != model.window_len) {
    throw DimensionError("dataset windows have " + std::to_string(data.window) +
                         " samples, model expects " + std::to_string(model.window_len));
  }
  const NormStats stats = model.normalization.value_or(data.stats);
  std::vector<double> out;
  out.reserve(data.count * model.output_len());
  NoGradGuard no_grad;
  constexpr std::size_t chunk = 64;
  for (std::size_t start = 0; start < data.count; start += chunk) {
    const std::size_t n = std::min(chunk, data.count - start);
    std::vector<double> bx(n * data.window);
    for (std::size_t i = 0; i < bx.size(); ++i) {
      bx[i] = stats.normalize_input(data.x[start * data.window + i]);
    }
    Tensor pred = forward_batch(model, Tensor({n, data.window}, std::move(bx)));
    for (double v : pred.data()) out.push_back(stats.denormalize_target(v));
  }
  return out;
}

}  // namespace nilmprune
