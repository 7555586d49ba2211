#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "nilmprune/dataset.hpp"
#include "nilmprune/dependency_graph.hpp"
#include "nilmprune/model.hpp"
#include "nilmprune/train.hpp"

namespace nilmprune {

enum class PruneMode { Unstructured, Structured };
enum class MaskScope { Global, PerLayer };

inline constexpr double kMaxSparsity = 0.95;

/// Masks cover weights only; biases leave only together with their unit.
struct PruneState {
  PruneMode mode = PruneMode::Unstructured;
  std::vector<std::vector<std::uint8_t>> masks;       // by layer index, empty when not masked
  std::vector<std::vector<std::size_t>> removed_out;  // by layer index, sorted
  std::vector<std::vector<std::size_t>> removed_in;
  double applied_sparsity = 0.0;
};

/// Masks the round(s*N) smallest |w|. Entries already masked rank first, then
/// |w|, then (layer, flat index), so repeated calls only ever grow the mask.
PruneState magnitude_mask(const ModelGraph& model, double sparsity,
                          MaskScope scope = MaskScope::Global);
void apply_mask_state(ModelGraph& model, const PruneState& state);

struct PruneOutcome {
  ModelGraph model;
  PruneState state;
  std::vector<std::string> warnings;
};

struct AfterTrainingConfig {
  MaskScope scope = MaskScope::Global;
  std::int64_t fine_tune_epochs = 0;
  TrainConfig train;
};

PruneOutcome prune_after_training(const ModelGraph& model, const WindowDataset* data,
                                  double sparsity, const AfterTrainingConfig& cfg = {});

struct OptNilmConfig {
  std::int64_t rounds = 10;
  TrainConfig train;  // epochs is ignored, each round runs one
  bool keep_round_masks = false;
};

struct OptNilmOutcome {
  ModelGraph model;
  PruneState state;
  std::vector<double> round_sparsity;  // cumulative target after each round
  std::vector<std::size_t> round_masked;
  std::vector<PruneState> round_states;  // filled when keep_round_masks
  std::vector<double> round_loss;
  bool rewind_verified = false;
  bool monotone = false;
};

/// Cumulative sparsity after round r of R: 1 - (1-p)^(r/R), exactly p at r = R.
double opt_nilm_round_sparsity(double p, std::int64_t round, std::int64_t rounds);

OptNilmOutcome pretrain_prune(const ModelGraph& model, const WindowDataset& data, double sparsity,
                              const OptNilmConfig& cfg);

struct LayerProfile {
  std::size_t layer = 0;
  std::size_t params = 0;  // maskable weights
  std::size_t zeros = 0;
  double fraction = 0.0;
};

/// Per parameterized layer, in layer order.
std::vector<LayerProfile> per_layer_sparsity_profile(const PruneState& state,
                                                     const ModelGraph& model);
std::vector<double> profile_fractions(const std::vector<LayerProfile>& profile);

/// Builds a structured state from unit sets chosen per group.
PruneState structured_state(const ModelGraph& model, const std::vector<ParameterGroup>& groups,
                            const std::vector<std::vector<std::size_t>>& removed_units);

/// New model with the units of `state` physically removed. theta_0 and masks
/// are sliced alongside the parameters.
ModelGraph rebuild_dense(const ModelGraph& model, const PruneState& state);

/// Removes round(f_l * units_l) output units with the smallest L1 norm from
/// every parameterized layer but the last; `profile` has one entry per
/// parameterized layer.
PruneOutcome structured_prune_by_profile(const ModelGraph& model,
                                         const std::vector<double>& profile);

/// Sum over prunable groups and units of gamma_c * ||W_c||^2, with
/// gamma_c = 2^(alpha (I_max - I_c) / (I_max - I_min)) and 2^alpha when flat.
Tensor group_regularizer(const ModelGraph& model, const std::vector<ParameterGroup>& groups,
                         double alpha = 4.0);
std::vector<double> regularizer_gammas(const std::vector<double>& importance, double alpha);

struct DgConfig {
  double alpha = 4.0;
  double regularization_weight = 1e-4;
  std::int64_t sparse_epochs = 0;
  std::int64_t fine_tune_epochs = 0;
  std::size_t top_p = 0;  // 0: whole group
  TrainConfig train;
};

/// 20% of the full-training epochs, at least one.
std::int64_t default_fine_tune_epochs(std::int64_t full_epochs);

/// Sparse-train (optional), score units by normalized importance, drop the
/// lowest units across prunable groups until parameter sparsity >= s, rebuild,
/// fine-tune (optional). Throws RangeError naming the layer when s cannot be
/// reached without emptying one.
PruneOutcome dg_structured_prune(const ModelGraph& model, const WindowDataset* data,
                                 double sparsity, const DgConfig& cfg = {});

/// Parameter count after removing `state` from `model`, without rebuilding.
std::size_t params_after_removal(const ModelGraph& model, const PruneState& state);

struct PruneReport {
  std::string strategy;
  double threshold = 0.0;
  std::size_t params_before = 0;
  std::size_t params_after = 0;  // nonzero parameters
  std::uint64_t macs_before = 0;
  std::uint64_t macs_after = 0;
  std::size_t size_bytes_before = 0;
  std::size_t size_bytes_after = 0;
  std::vector<LayerProfile> per_layer_profile;
  std::vector<std::string> warnings;
  std::optional<bool> rewind_verified;

  double param_reduction() const;
  double macs_efficiency() const;
  double size_reduction() const;
};

PruneReport make_prune_report(const std::string& strategy, double threshold,
                              const ModelGraph& before, const ModelGraph& after);
nlohmann::json to_json(const PruneReport& r);
PruneReport prune_report_from_json(const nlohmann::json& j);

}  // namespace nilmprune
