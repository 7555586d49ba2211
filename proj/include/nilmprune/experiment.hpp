#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "nilmprune/compression.hpp"
#include "nilmprune/data.hpp"
#include "nilmprune/metrics.hpp"
#include "nilmprune/threshold.hpp"
#include "nilmprune/train.hpp"

namespace nilmprune {

struct DatasetSection {
  std::string source = "synthetic";  // synthetic | plegma
  std::string dir;                   // plegma: house CSVs plus appliances_metadata.csv
  std::string appliance = "kettle";
  std::size_t houses = 3;
  double days = 3.0;
  double sample_period = 10.0;
  double baseline = 150.0;
  double noise_sigma = 10.0;
  std::vector<ApplianceTemplate> templates = default_templates();
  std::vector<std::string> test_houses;
  std::vector<std::string> validation_houses;
  PreprocessParams preprocess;
};

struct ModelSection {
  std::string preset = "desk-small";
  std::size_t window = 0;  // 0 keeps the preset's window
  std::size_t stride = 32;
  std::vector<ConvStage> convs;  // explicit layers replace the preset when set
  std::size_t hidden = 0;
};

enum class Strategy { AfterTraining, OptNilm, OptimizedStructured, DgStructured };
Strategy strategy_from_string(const std::string& s);
std::string to_string(Strategy s);

struct PruneSection {
  Strategy strategy = Strategy::OptNilm;
  double threshold = 0.0;
  std::string grid = "0.05:0.95:0.05";
  std::int64_t rounds = 10;
  MaskScope scope = MaskScope::Global;
  std::optional<std::int64_t> fine_tune_epochs;  // unset: 0 unstructured, 20% of training structured
  double alpha = 4.0;
  double regularization = 1e-4;
  std::int64_t sparse_epochs = 0;
  std::size_t top_p = 0;
  CompressionAxis axis = CompressionAxis::PrunedFraction;
};

struct EvalSection {
  std::string metadata;  // overrides the dataset's appliance metadata when set
  std::vector<std::string> metrics = {"f1", "mae", "smape", "mre"};
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  DatasetSection dataset;
  ModelSection model;
  TrainConfig train;
  PruneSection prune;
  EvalSection eval;
};

/// Desk defaults: synthetic kettle, desk-small, 30 epochs of batch 8.
ExperimentConfig default_experiment_config();
/// Unknown keys anywhere are rejected with ConfigError.
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ExperimentConfig& cfg);
ArchitectureConfig resolve_architecture(const ExperimentConfig& cfg);

struct SynthDataset {
  std::vector<House> houses;
  std::vector<ApplianceMeta> metas;
  std::vector<nlohmann::json> parameters;
};

/// House h is generated from the seed stream (seed, h).
SynthDataset synth_dataset(const ExperimentConfig& cfg);

struct ExperimentData {
  std::vector<House> houses;
  std::vector<ApplianceMeta> metas;
  ApplianceMeta meta;
  DatasetSplits splits;
  double sample_period = 10.0;
  std::vector<std::string> warnings;
};

ExperimentData load_experiment_data(const ExperimentConfig& cfg);

/// Predictions over the non-overlapping test windows, scored as one series.
MetricReport evaluate_model(const ModelGraph& model, const WindowDataset& test, const ApplianceMeta& meta,
                            double sample_period);

ModelGraph fresh_model(const ExperimentConfig& cfg);
/// Trains `model` (fresh or resumed) for cfg.train.epochs more epochs.
TrainResult train_model(ModelGraph& model, const ExperimentConfig& cfg, const ExperimentData& data);

struct StrategyRun {
  ModelGraph model;
  PruneReport report;
};

/// after-training, optimized-structured and dg-structured start from
/// `trained`; opt-nilm starts from a fresh model and trains the ticket.
StrategyRun run_strategy(const ExperimentConfig& cfg, const ExperimentData& data, Strategy strategy,
                         double threshold, const ModelGraph* trained);

SweepPoint evaluate_point(const ModelGraph& model, const ExperimentData& data);
SweepCurve run_sweep(const ExperimentConfig& cfg, const ExperimentData& data, Strategy strategy,
                     const std::vector<double>& grid, const ModelGraph* trained, std::size_t threads);

/// One row of the comparison tables, as written to run.json.
struct RunRecord {
  std::string appliance;
  std::string approach;  // baseline or a strategy name
  double threshold = 0.0;
  std::uint64_t params = 0;
  std::uint64_t macs = 0;
  std::uint64_t size_bytes = 0;
  std::uint64_t training_params = 0;  // parameters live during full training
  std::uint64_t training_macs = 0;
  double f1 = 0.0;
  double mae = 0.0;
  double smape = 0.0;
  double mre = 0.0;
};

nlohmann::json to_json(const RunRecord& r);
RunRecord run_record_from_json(const nlohmann::json& j);

struct ReportTables {
  std::vector<RunRecord> rows;  // sorted by (appliance, approach)
  std::string text;
  std::string performance_csv;
  std::string improvement_csv;
};

/// Percentage improvements are 1 - pruned/baseline per appliance; a run
/// without a baseline of the same appliance gets no improvement rows.
ReportTables build_report(std::vector<RunRecord> rows);

}  // namespace nilmprune
