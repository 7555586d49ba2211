#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace nilmprune {

/// Aggregate is standardized, the appliance target divided by its rated wattage.
struct NormStats {
  double input_mean = 0.0;
  double input_std = 1.0;
  double target_scale = 1.0;

  double normalize_input(double watts) const { return (watts - input_mean) / input_std; }
  double normalize_target(double watts) const { return watts / target_scale; }
  double denormalize_target(double unit) const { return unit * target_scale; }
};

enum class Split { Train, Validation, Test };

/// Row-aligned aggregate/appliance windows in watts, plus the statistics used
/// to feed them to a model.
struct WindowDataset {
  std::size_t window = 0;
  std::size_t count = 0;
  std::vector<double> x;  // count * window aggregate samples
  std::vector<double> y;  // count * window appliance samples
  NormStats stats;
  Split split = Split::Train;
  std::string appliance;

  std::vector<double> normalized_x() const;
  std::vector<double> normalized_y() const;
  /// Appends the windows of `other`; both must share the window length.
  void append(const WindowDataset& other);
};

}  // namespace nilmprune
