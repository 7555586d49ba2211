#include "nilmprune/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "nilmprune/errors.hpp"
#include "nilmprune/serialize.hpp"

namespace nilmprune {

void ApplianceMeta::validate() const {
  if (!(on_threshold > 0.0 && on_threshold <= max_wattage)) {
    throw ConfigError("appliance '" + name + "': need 0 < on_threshold <= max_wattage");
  }
  if (!(min_on >= 0.0) || !(min_off >= 0.0)) {
    throw ConfigError("appliance '" + name + "': min_on and min_off must be >= 0");
  }
}

RegressionMetrics regression_metrics(std::span<const double> y, std::span<const double> y_hat) {
  if (y.empty()) throw DataError("regression metrics on an empty series");
  if (y.size() != y_hat.size()) {
    throw DimensionError("regression metrics: " + std::to_string(y.size()) + " targets vs " +
                         std::to_string(y_hat.size()) + " predictions");
  }
  const double t = static_cast<double>(y.size());
  double abs_sum = 0.0, sym = 0.0, ymax = y[0];
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double e = std::fabs(y[i] - y_hat[i]);
    abs_sum += e;
    sym += e / (std::fabs(y[i]) + std::fabs(y_hat[i]) + kMetricEpsilon);
    ymax = std::max(ymax, y[i]);
  }
  return {abs_sum / t, 2.0 * sym / t, abs_sum / (t * ymax + kMetricEpsilon)};
}

std::vector<std::uint8_t> apply_hysteresis(std::vector<std::uint8_t> s, const ApplianceMeta& meta,
                                           double sample_period) {
  if (!(sample_period > 0.0)) throw ConfigError("sample_period must be > 0");
  const std::size_t n = s.size();
  // merge short OFF gaps that sit between two ON runs
  std::size_t i = 0;
  while (i < n && !s[i]) ++i;
  while (i < n) {
    while (i < n && s[i]) ++i;
    const std::size_t gap = i;
    while (i < n && !s[i]) ++i;
    if (i == n) break;
    if (static_cast<double>(i - gap) * sample_period < meta.min_off)
      std::fill(s.begin() + static_cast<std::ptrdiff_t>(gap), s.begin() + static_cast<std::ptrdiff_t>(i), 1);
  }
  // drop short ON runs
  i = 0;
  while (i < n) {
    if (!s[i]) {
      ++i;
      continue;
    }
    const std::size_t start = i;
    while (i < n && s[i]) ++i;
    if (static_cast<double>(i - start) * sample_period < meta.min_on)
      std::fill(s.begin() + static_cast<std::ptrdiff_t>(start), s.begin() + static_cast<std::ptrdiff_t>(i), 0);
  }
  return s;
}

std::vector<std::uint8_t> extract_states(std::span<const double> power, const ApplianceMeta& meta,
                                         double sample_period) {
  std::vector<std::uint8_t> s(power.size());
  for (std::size_t i = 0; i < power.size(); ++i) s[i] = power[i] >= meta.on_threshold ? 1 : 0;
  return apply_hysteresis(std::move(s), meta, sample_period);
}

ClassificationMetrics classification_metrics(std::span<const std::uint8_t> truth,
                                             std::span<const std::uint8_t> pred) {
  if (truth.size() != pred.size()) {
    throw DimensionError("classification metrics: " + std::to_string(truth.size()) +
                         " true states vs " + std::to_string(pred.size()) + " predicted");
  }
  ClassificationMetrics c;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const bool t = truth[i] != 0, p = pred[i] != 0;
    if (t && p) ++c.tp;
    else if (!t && p) ++c.fp;
    else if (t && !p) ++c.fn;
    else ++c.tn;
  }
  const auto tp = static_cast<double>(c.tp), fp = static_cast<double>(c.fp),
             fn = static_cast<double>(c.fn), tn = static_cast<double>(c.tn);
  c.precision = c.tp + c.fp ? tp / (tp + fp) : 0.0;
  c.recall = c.tp + c.fn ? tp / (tp + fn) : 0.0;
  c.degenerate = c.tp + c.fp + c.fn == 0;
  c.f1 = c.degenerate ? 0.0 : tp / (tp + 0.5 * (fp + fn));
  c.accuracy = truth.empty() ? 0.0 : (tp + tn) / static_cast<double>(truth.size());
  return c;
}

ActivationStats count_activations(std::span<const std::uint8_t> states, double sample_period) {
  ActivationStats a;
  std::size_t on = 0;
  for (std::size_t i = 0; i < states.size(); ++i) {
    if (!states[i]) continue;
    ++on;
    if (i == 0 || !states[i - 1]) ++a.count;
  }
  a.on_seconds = static_cast<double>(on) * sample_period;
  return a;
}

MetricReport evaluate_series(std::span<const double> y, std::span<const double> y_hat,
                             const ApplianceMeta& meta, double sample_period) {
  MetricReport r;
  r.regression = regression_metrics(y, y_hat);
  const auto t = extract_states(y, meta, sample_period);
  const auto p = extract_states(y_hat, meta, sample_period);
  r.classification = classification_metrics(t, p);
  r.true_activations = count_activations(t, sample_period);
  r.predicted_activations = count_activations(p, sample_period);
  return r;
}

CompressionMetrics compression_metrics(const ModelGraph& before, const ModelGraph& after) {
  const auto macs_after = count_macs(after);
  if (macs_after == 0) throw NumericError("compression metrics: pruned model has zero MACs");
  const auto pb = static_cast<double>(count_params(before).nonzero);
  const auto pa = static_cast<double>(count_params(after).nonzero);
  const auto sb = static_cast<double>(serialize_model(before).size());
  const auto sa = static_cast<double>(serialize_model(after).size());
  return {100.0 * (1.0 - pa / pb), 100.0 * (1.0 - sa / sb),
          static_cast<double>(count_macs(before)) / static_cast<double>(macs_after)};
}

nlohmann::json to_json(const MetricReport& r) {
  const auto& c = r.classification;
  return {
      {"mae", r.regression.mae},
      {"smape", r.regression.smape},
      {"mre", r.regression.mre},
      {"f1", c.f1},
      {"precision", c.precision},
      {"recall", c.recall},
      {"accuracy", c.accuracy},
      {"degenerate", c.degenerate},
      {"tp", c.tp},
      {"fp", c.fp},
      {"tn", c.tn},
      {"fn", c.fn},
      {"true_activations", r.true_activations.count},
      {"true_on_seconds", r.true_activations.on_seconds},
      {"predicted_activations", r.predicted_activations.count},
      {"predicted_on_seconds", r.predicted_activations.on_seconds},
  };
}

MetricReport metric_report_from_json(const nlohmann::json& j) {
  MetricReport r;
  try {
    r.regression = {j.at("mae"), j.at("smape"), j.at("mre")};
    auto& c = r.classification;
    c.f1 = j.at("f1");
    c.precision = j.at("precision");
    c.recall = j.at("recall");
    c.accuracy = j.at("accuracy");
    c.degenerate = j.at("degenerate");
    c.tp = j.at("tp");
    c.fp = j.at("fp");
    c.tn = j.at("tn");
    c.fn = j.at("fn");
    r.true_activations = {j.at("true_activations"), j.at("true_on_seconds")};
    r.predicted_activations = {j.at("predicted_activations"), j.at("predicted_on_seconds")};
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("metric report: ") + e.what());
  }
  return r;
}

nlohmann::json to_json(const CompressionMetrics& c) {
  return {{"param_reduction_pct", c.param_reduction_pct},
          {"size_reduction_pct", c.size_reduction_pct},
          {"efficiency", c.efficiency}};
}

}  // namespace nilmprune
