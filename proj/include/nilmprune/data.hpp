#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "nilmprune/dataset.hpp"
#include "nilmprune/metrics.hpp"

namespace nilmprune {

struct NamedSeries {
  std::string name;
  std::vector<double> values;
};

/// One household recording. Electrical files carry V, A, P_agg and appliance
/// channels; environmental files carry the temperature/humidity channels.
struct HouseholdSeries {
  std::vector<double> timestamps;  // epoch seconds, strictly increasing
  std::vector<double> voltage;
  std::vector<double> current;
  std::vector<double> p_agg;
  std::vector<NamedSeries> appliances;
  std::vector<NamedSeries> environment;
  std::vector<std::uint8_t> issues;
  double sample_period = 10.0;

  std::size_t size() const { return timestamps.size(); }
  const std::vector<double>& appliance(const std::string& name) const;
  bool has_appliance(const std::string& name) const;
};

/// "MM/DD/YYYY HH:MM:SS AM/PM" in UTC+3.
double parse_plegma_datetime(const std::string& text);
std::string format_plegma_datetime(double epoch_seconds);

HouseholdSeries parse_plegma_csv(const std::filesystem::path& path);
HouseholdSeries parse_environmental_csv(const std::filesystem::path& path);
/// NaN cells are written empty. Timestamps are written at whole seconds.
void write_plegma_csv(const HouseholdSeries& series, const std::filesystem::path& path);

std::vector<ApplianceMeta> read_appliance_metadata(const std::filesystem::path& path);
/// `extra` holds optional per-appliance JSON written to a trailing parameters column.
void write_appliance_metadata(const std::vector<ApplianceMeta>& metas, const std::filesystem::path& path,
                              const std::vector<nlohmann::json>& extra = {});
const ApplianceMeta& find_meta(const std::vector<ApplianceMeta>& metas, const std::string& name);

/// Nearest-sample synchronization onto multiples of `grid_period`. Ties go to
/// the earlier sample; grid points with no non-NaN sample closer than one
/// period become NaN.
HouseholdSeries resample_nearest(const HouseholdSeries& series, double grid_period);

/// Out-of-range values take the last in-range value; leading ones become NaN.
std::vector<double> clean_abnormal(std::span<const double> values, double lo, double hi,
                                   std::size_t* replaced = nullptr);
/// Linear fill of interior NaN runs strictly shorter than `max_gap`.
std::vector<double> interpolate_gaps(std::span<const double> values, std::size_t max_gap,
                                     std::size_t* filled = nullptr);
std::vector<std::uint8_t> flag_issues(std::span<const double> p_agg,
                                      const std::vector<NamedSeries>& appliances);

struct PreprocessParams {
  double grid_period = 10.0;
  std::size_t max_gap = 3;
  double voltage_max = 300.0;
  double current_max = 100.0;
  double aggregate_max = 15000.0;
  bool clean_appliances_with_metadata = true;
  double temperature_min = -10.0;
  double temperature_max = 50.0;
  double humidity_max = 100.0;

  static PreprocessParams environmental();
};

struct ChannelStats {
  std::string channel;
  std::size_t samples = 0;
  std::size_t nan_after_resample = 0;
  std::size_t abnormal = 0;
  std::size_t interpolated = 0;
  std::size_t nan_after = 0;
};

struct PreprocessResult {
  HouseholdSeries series;
  std::vector<ChannelStats> channels;
  std::size_t issues = 0;

  double nan_percentage() const;
  double issues_percentage() const;
};

/// resample -> clean_abnormal -> interpolate_gaps per channel, then flag_issues.
PreprocessResult preprocess(const HouseholdSeries& series, const std::vector<ApplianceMeta>& metas,
                            const PreprocessParams& params);
nlohmann::json to_json(const PreprocessParams& p);
nlohmann::json provenance_json(const PreprocessResult& r, const PreprocessParams& p);

/// Sliding (P_agg, appliance) windows in watts. Stats are left at identity.
WindowDataset windowize(const HouseholdSeries& series, const std::string& appliance, std::size_t window,
                        std::size_t stride, bool drop_nan, std::vector<std::string>* warnings = nullptr);

struct House {
  std::string id;
  HouseholdSeries series;
};

struct SplitConfig {
  std::size_t window = 128;
  std::size_t stride = 64;
  std::size_t eval_stride = 0;  // 0 means non-overlapping windows
  std::vector<std::string> test_houses;  // empty means the last house
  std::vector<std::string> validation_houses;
};

struct DatasetSplits {
  WindowDataset train;
  WindowDataset validation;
  WindowDataset test;
};

/// Splits by house; normalization statistics come from the training windows
/// and are copied to every split.
DatasetSplits split_by_house(const std::vector<House>& houses, const ApplianceMeta& meta,
                             const SplitConfig& cfg, std::vector<std::string>* warnings = nullptr);
NormStats compute_norm_stats(const WindowDataset& train, double appliance_max);

enum class TemplateKind { TwoState, MultiState, Cyclic };
TemplateKind template_kind_from_string(const std::string& s);
std::string to_string(TemplateKind k);

struct ProgramState {
  double watts = 0.0;
  double seconds = 0.0;
};

struct ApplianceTemplate {
  std::string name;
  TemplateKind kind = TemplateKind::TwoState;
  double wattage = 2000.0;             // rated power of two-state and cyclic templates
  double events_per_day = 6.0;         // two-state and multi-state
  double min_duration = 60.0;          // two-state burst length range, seconds
  double max_duration = 180.0;
  std::vector<ProgramState> program;   // multi-state
  double cycle_period = 2700.0;        // cyclic
  double duty_cycle = 0.35;
  double on_threshold = 0.0;           // evaluation metadata
  double min_on = 0.0;
  double min_off = 0.0;

  double max_wattage() const;
  ApplianceMeta meta() const;
};

struct SynthConfig {
  std::vector<ApplianceTemplate> appliances;
  double days = 2.0;
  double sample_period = 10.0;
  double baseline = 150.0;
  double noise_sigma = 10.0;
  double voltage = 230.0;
  double voltage_sigma = 1.0;
  double start_epoch = 1640995200.0;  // 2022-01-01T00:00:00Z
};

std::vector<ApplianceTemplate> default_templates();

struct SynthHousehold {
  HouseholdSeries series;
  std::vector<ApplianceMeta> metas;
  std::vector<nlohmann::json> parameters;  // one record per appliance
};

/// Appliance powers are whole watts; P_agg adds the baseline and Gaussian
/// noise clipped at three sigma.
SynthHousehold synth_generate(const SynthConfig& cfg, std::uint64_t seed);
nlohmann::json to_json(const ApplianceTemplate& t);
ApplianceTemplate template_from_json(const nlohmann::json& j);

}  // namespace nilmprune
