#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "nilmprune/dataset.hpp"
#include "nilmprune/tensor.hpp"

namespace nilmprune {

enum class LayerKind { Conv1D, ReLU, Sigmoid, Flatten, Linear };

std::string to_string(LayerKind kind);
LayerKind layer_kind_from_string(const std::string& name);

struct LayerSpec {
  LayerKind kind = LayerKind::ReLU;
  // Conv1D: in = in_channels, out = out_channels. Linear: in/out features.
  std::size_t in = 0;
  std::size_t out = 0;
  std::size_t kernel = 0;
  std::size_t stride = 1;
  bool prunable = true;

  static LayerSpec conv(std::size_t in_ch, std::size_t out_ch, std::size_t k,
                        std::size_t stride = 1);
  static LayerSpec linear(std::size_t in_f, std::size_t out_f);
  static LayerSpec relu() { return {LayerKind::ReLU}; }
  static LayerSpec sigmoid() { return {LayerKind::Sigmoid}; }
  static LayerSpec flatten() { return {LayerKind::Flatten}; }

  bool has_params() const { return kind == LayerKind::Conv1D || kind == LayerKind::Linear; }
  Shape weight_shape() const;
  std::size_t weight_count() const;

  bool operator==(const LayerSpec&) const = default;
};

/// Activation shape flowing into or out of a layer, batch axis excluded.
/// Sequence activations are [channels, length]; flat ones have length 0.
struct ActivationShape {
  std::size_t channels = 0;
  std::size_t length = 0;

  bool is_sequence() const { return length > 0; }
  std::size_t numel() const { return is_sequence() ? channels * length : channels; }
  bool operator==(const ActivationShape&) const = default;
};

struct Layer {
  LayerSpec spec;
  Tensor weight;  // undefined for parameter-free layers
  Tensor bias;
  Tensor initial_weight;  // theta_0 snapshot
  Tensor initial_bias;
  std::vector<std::uint8_t> mask;  // per weight entry, 1 = kept; empty when unmasked
  std::size_t removed_units = 0;   // output units removed structurally so far
};

/**
 * Ordered layer chain operating on a single aggregate window.
 *
 * The input is a window of `window_len` samples; a leading Conv1D sees it as
 * one channel, a leading Linear as `window_len` features. Parameters always
 * require gradients; masked weight entries are held at exactly zero.
 */
struct ModelGraph {
  std::vector<Layer> layers;
  std::size_t window_len = 0;
  std::uint64_t seed = 0;
  bool has_initial = false;
  std::int64_t epochs_trained = 0;
  std::vector<double> loss_history;
  std::optional<NormStats> normalization;

  ModelGraph() = default;
  /// Allocates parameters with fan-in scaled uniform init and snapshots theta_0.
  ModelGraph(std::vector<LayerSpec> specs, std::size_t window_len, std::uint64_t seed);

  ModelGraph clone() const;

  /// Throws DimensionError when adjacent layers do not chain.
  void validate() const;
  std::vector<ActivationShape> input_shapes() const;
  ActivationShape output_shape() const;
  std::size_t output_len() const { return output_shape().numel(); }

  std::vector<std::size_t> param_layer_indices() const;
  /// Index of the last parameterized layer; its output units are never pruned.
  std::size_t final_param_layer() const;
  std::vector<Tensor> parameters() const;
  std::vector<LayerSpec> specs() const;

  bool has_masks() const;
  /// Multiplies every masked weight by zero.
  void apply_masks();
  void clear_masks();
  /// Resets every parameter to theta_0, keeping masked entries at zero.
  void rewind_to_initial();
};

/// Convolution stage of the disaggregator.
struct ConvStage {
  std::size_t out_channels = 0;
  std::size_t kernel = 0;
  std::size_t stride = 1;
};

struct ArchitectureConfig {
  std::string name = "custom";
  std::size_t window_len = 480;
  std::vector<ConvStage> convs;
  std::size_t hidden = 0;
};

/// 5-conv / 2-linear seq2seq chain with conv widths 8/8/16/16/16.
ArchitectureConfig default_architecture(std::size_t window_len);
/// ~1.2e5 parameters on 128-sample windows.
ArchitectureConfig desk_small_preset();
/// Widths of the classic seq2point stack, sized toward 22.1M parameters.
ArchitectureConfig paper_shape_preset();
ArchitectureConfig architecture_preset(const std::string& name);

std::vector<LayerSpec> build_layer_specs(const ArchitectureConfig& arch);
ModelGraph build_default_model(std::size_t window_len, std::uint64_t seed = 0);
ModelGraph build_model(const ArchitectureConfig& arch, std::uint64_t seed);

/// Differentiable batched forward: x [N, W] -> [N, output_len].
Tensor forward_batch(const ModelGraph& model, const Tensor& x);
/// Single-window inference: x_window [W] -> [output_len].
Tensor forward(const ModelGraph& model, const Tensor& x_window);

struct ParamCount {
  std::size_t total = 0;    // allocated parameters (structural removal already excluded)
  std::size_t nonzero = 0;  // total minus masked entries
  std::size_t masked = 0;

  bool operator==(const ParamCount&) const = default;
};

ParamCount count_params(const ModelGraph& model);
/// Multiply-accumulates for one window. Unstructured masks do not change it.
std::uint64_t count_macs(const ModelGraph& model);
std::uint64_t count_flops(const ModelGraph& model);

/// Survivors after masking round(s * n) of n entries.
std::uint64_t surviving_after_sparsity(std::uint64_t n, double sparsity);

}  // namespace nilmprune
