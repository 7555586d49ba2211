#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

namespace nilmprune {

struct SweepPoint {
  double threshold = 0.0;
  double f1 = 0.0;
  double mae = 0.0;
  double smape = 0.0;
  double mre = 0.0;
  std::uint64_t params = 0;
  std::uint64_t macs = 0;
  std::uint64_t size_bytes = 0;
  std::string error;  // non-empty when the run for this threshold failed

  bool failed() const { return !error.empty(); }
};

struct SweepCurve {
  std::string strategy;
  std::string appliance;
  std::vector<SweepPoint> points;  // sorted by threshold, baseline first

  const SweepPoint* baseline() const;
};

enum class CompressionAxis { PrunedFraction, NormalizedMacsReduction };

CompressionAxis compression_axis_from_string(const std::string& s);
std::string to_string(CompressionAxis a);

/// 0.05, 0.10, ..., 0.95.
std::vector<double> default_grid();
/// "A:B:STEP", inclusive of both ends.
std::vector<double> parse_grid(const std::string& spec);

struct SweepOptions {
  std::size_t threads = 1;
};

/// Runs `run_point` once per distinct threshold (plus the baseline at 0) and
/// collects the curve. A throwing run becomes a failed point.
SweepCurve sweep(std::vector<double> thresholds, const std::function<SweepPoint(double)>& run_point,
                 const SweepOptions& opts = {});

struct ThresholdChoice {
  double threshold = 0.0;
  double distance = 0.0;
  std::size_t index = 0;
};

/// argmin sqrt((1-F1)^2 + (1-c)^2); ties go to the larger threshold. Failed
/// and NaN-F1 points are skipped.
ThresholdChoice optimal_threshold(const SweepCurve& curve,
                                  CompressionAxis axis = CompressionAxis::PrunedFraction);
double compression_coordinate(const SweepCurve& curve, const SweepPoint& p, CompressionAxis axis);

void write_curve_csv(const SweepCurve& curve, const std::filesystem::path& path);
SweepCurve read_curve_csv(const std::filesystem::path& path);
nlohmann::json to_json(const SweepCurve& curve);
SweepCurve curve_from_json(const nlohmann::json& j);

}  // namespace nilmprune
