#include "nilmprune/dataset.hpp"

#include "nilmprune/errors.hpp"

namespace nilmprune {

std::vector<double> WindowDataset::normalized_x() const {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = stats.normalize_input(x[i]);
  return out;
}

std::vector<double> WindowDataset::normalized_y() const {
  std::vector<double> out(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) out[i] = stats.normalize_target(y[i]);
  return out;
}

void WindowDataset::append(const WindowDataset& other) {
  if (other.count == 0) return;
  if (count == 0 && window == 0) window = other.window;
  if (other.window != window) {
    throw DimensionError("cannot append windows of " + std::to_string(other.window) +
                         " samples to a dataset of " + std::to_string(window));
  }
  x.insert(x.end(), other.x.begin(), other.x.end());
  y.insert(y.end(), other.y.begin(), other.y.end());
  count += other.count;
}

}  // namespace nilmprune
