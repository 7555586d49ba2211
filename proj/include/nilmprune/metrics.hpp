#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "nilmprune/model.hpp"

namespace nilmprune {

inline constexpr double kMetricEpsilon = 1e-8;

struct ApplianceMeta {
  std::string name;
  double max_wattage = 0.0;
  double on_threshold = 0.0;
  double min_on = 0.0;   // seconds
  double min_off = 0.0;  // seconds

  void validate() const;
};

struct RegressionMetrics {
  double mae = 0.0;
  double smape = 0.0;
  double mre = 0.0;
};

struct ClassificationMetrics {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double accuracy = 0.0;
  bool degenerate = false;  // no ON sample in either series
};

struct ActivationStats {
  std::size_t count = 0;
  double on_seconds = 0.0;
};

struct MetricReport {
  RegressionMetrics regression;
  ClassificationMetrics classification;
  ActivationStats true_activations;
  ActivationStats predicted_activations;
};

RegressionMetrics regression_metrics(std::span<const double> y, std::span<const double> y_hat);

/// Threshold, then merge OFF gaps shorter than min_off between ON runs, then
/// drop ON runs shorter than min_on.
std::vector<std::uint8_t> extract_states(std::span<const double> power, const ApplianceMeta& meta,
                                         double sample_period);
/// The merge/drop passes alone, on an existing boolean series.
std::vector<std::uint8_t> apply_hysteresis(std::vector<std::uint8_t> states,
                                           const ApplianceMeta& meta, double sample_period);

ClassificationMetrics classification_metrics(std::span<const std::uint8_t> truth,
                                             std::span<const std::uint8_t> pred);

ActivationStats count_activations(std::span<const std::uint8_t> states, double sample_period);

MetricReport evaluate_series(std::span<const double> y, std::span<const double> y_hat,
                             const ApplianceMeta& meta, double sample_period);

struct CompressionMetrics {
  double param_reduction_pct = 0.0;
  double size_reduction_pct = 0.0;
  double efficiency = 1.0;  // MACs before / after
};

CompressionMetrics compression_metrics(const ModelGraph& before, const ModelGraph& after);

nlohmann::json to_json(const MetricReport& r);
MetricReport metric_report_from_json(const nlohmann::json& j);
nlohmann::json to_json(const CompressionMetrics& c);

}  // namespace nilmprune
