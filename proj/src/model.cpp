#include "nilmprune/model.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "nilmprune/errors.hpp"
#include "nilmprune/rng.hpp"

namespace nilmprune {

std::string to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::Conv1D: return "conv1d";
    case LayerKind::ReLU: return "relu";
    case LayerKind::Sigmoid: return "sigmoid";
    case LayerKind::Flatten: return "flatten";
    case LayerKind::Linear: return "linear";
  }
  return "unknown(" + std::to_string(static_cast<int>(kind)) + ")";
}

LayerKind layer_kind_from_string(const std::string& name) {
  if (name == "conv1d") return LayerKind::Conv1D;
  if (name == "relu") return LayerKind::ReLU;
  if (name == "sigmoid") return LayerKind::Sigmoid;
  if (name == "flatten") return LayerKind::Flatten;
  if (name == "linear") return LayerKind::Linear;
  throw FormatError("unknown layer kind '" + name + "'");
}

LayerSpec LayerSpec::conv(std::size_t in_ch, std::size_t out_ch, std::size_t k,
                          std::size_t stride) {
  LayerSpec s;
  s.kind = LayerKind::Conv1D;
  s.in = in_ch;
  s.out = out_ch;
  s.kernel = k;
  s.stride = stride;
  return s;
}

LayerSpec LayerSpec::linear(std::size_t in_f, std::size_t out_f) {
  LayerSpec s;
  s.kind = LayerKind::Linear;
  s.in = in_f;
  s.out = out_f;
  return s;
}

Shape LayerSpec::weight_shape() const {
  if (kind == LayerKind::Conv1D) return {out, in, kernel};
  if (kind == LayerKind::Linear) return {out, in};
  return {};
}

std::size_t LayerSpec::weight_count() const { return has_params() ? shape_numel(weight_shape()) : 0; }

ModelGraph::ModelGraph(std::vector<LayerSpec> specs, std::size_t window, std::uint64_t seed_)
    : window_len(window), seed(seed_), has_initial(true) {
  layers.reserve(specs.size());
  for (auto& s : specs) {
    Layer l;
    l.spec = s;
    layers.push_back(std::move(l));
  }
  validate();
  Rng rng(seed);
  for (auto& layer : layers) {
    if (!layer.spec.has_params()) continue;
    const auto& s = layer.spec;
    const double fan_in =
        static_cast<double>(s.kind == LayerKind::Conv1D ? s.in * s.kernel : s.in);
    const double bound = 1.0 / std::sqrt(fan_in);
    std::vector<double> w(s.weight_count());
    for (auto& v : w) v = rng.uniform(-bound, bound);
    std::vector<double> b(s.out);
    for (auto& v : b) v = rng.uniform(-bound, bound);
    layer.weight = Tensor(s.weight_shape(), std::move(w), true);
    layer.bias = Tensor(Shape{s.out}, std::move(b), true);
    layer.initial_weight = layer.weight.clone();
    layer.initial_bias = layer.bias.clone();
    layer.initial_weight.set_requires_grad(false);
    layer.initial_bias.set_requires_grad(false);
  }
}

ModelGraph ModelGraph::clone() const {
  ModelGraph copy;
  copy.window_len = window_len;
  copy.seed = seed;
  copy.has_initial = has_initial;
  copy.epochs_trained = epochs_trained;
  copy.loss_history = loss_history;
  copy.normalization = normalization;
  copy.layers.reserve(layers.size());
  for (const auto& l : layers) {
    Layer c;
    c.spec = l.spec;
    c.weight = l.weight.clone();
    c.bias = l.bias.clone();
    c.initial_weight = l.initial_weight.clone();
    c.initial_bias = l.initial_bias.clone();
    c.mask = l.mask;
    c.removed_units = l.removed_units;
    copy.layers.push_back(std::move(c));
  }
  return copy;
}

std::vector<ActivationShape> ModelGraph::input_shapes() const {
  if (layers.empty()) throw DimensionError("model has no layers");
  if (window_len == 0) throw DimensionError("model window length is 0");
  std::vector<ActivationShape> shapes;
  shapes.reserve(layers.size());
  ActivationShape cur = layers.front().spec.kind == LayerKind::Conv1D
                            ? ActivationShape{1, window_len}
                            : ActivationShape{window_len, 0};
  bool flattened = false;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& s = layers[i].spec;
    shapes.push_back(cur);
    const std::string where = "layer " + std::to_string(i) + " (" + to_string(s.kind) + ")";
    switch (s.kind) {
      case LayerKind::Conv1D:
        if (!cur.is_sequence()) throw DimensionError(where + ": conv after flattened features");
        if (cur.channels != s.in) {
          throw DimensionError(where + ": channel axis expects " + std::to_string(s.in) +
                               ", producer gives " + std::to_string(cur.channels));
        }
        if (s.kernel == 0 || s.stride == 0 || cur.length < s.kernel) {
          throw DimensionError(where + ": length axis " + std::to_string(cur.length) +
                               " too short for kernel " + std::to_string(s.kernel));
        }
        cur = {s.out, conv1d_output_length(cur.length, s.kernel, s.stride)};
        break;
      case LayerKind::ReLU:
      case LayerKind::Sigmoid:
        break;
      case LayerKind::Flatten:
        if (flattened) throw DimensionError(where + ": Flatten may appear only once");
        if (!cur.is_sequence()) throw DimensionError(where + ": nothing to flatten");
        flattened = true;
        cur = {cur.channels * cur.length, 0};
        break;
      case LayerKind::Linear:
        if (cur.is_sequence()) {
          throw DimensionError(where + ": linear layer needs a Flatten after the conv stage");
        }
        if (cur.channels != s.in) {
          throw DimensionError(where + ": feature axis expects " + std::to_string(s.in) +
                               ", producer gives " + std::to_string(cur.channels));
        }
        cur = {s.out, 0};
        break;
      default:
        throw DimensionError(where + ": unknown layer kind");
    }
  }
  shapes.push_back(cur);
  return shapes;
}

void ModelGraph::validate() const {
  (void)input_shapes();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    if (!l.spec.has_params() || !l.weight.defined()) continue;
    if (l.weight.shape() != l.spec.weight_shape() || l.bias.shape() != Shape{l.spec.out}) {
      throw DimensionError("layer " + std::to_string(i) + ": parameter shapes " +
                           shape_str(l.weight.shape()) + " do not match spec " +
                           shape_str(l.spec.weight_shape()));
    }
    if (!l.mask.empty() && l.mask.size() != l.weight.numel()) {
      throw DimensionError("layer " + std::to_string(i) + ": mask size mismatch");
    }
  }
}

ActivationShape ModelGraph::output_shape() const { return input_shapes().back(); }

std::vector<std::size_t> ModelGraph::param_layer_indices() const {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < layers.size(); ++i)
    if (layers[i].spec.has_params()) idx.push_back(i);
  return idx;
}

std::size_t ModelGraph::final_param_layer() const {
  auto idx = param_layer_indices();
  if (idx.empty()) throw DimensionError("model has no parameterized layer");
  return idx.back();
}

std::vector<Tensor> ModelGraph::parameters() const {
  std::vector<Tensor> params;
  for (const auto& l : layers) {
    if (!l.spec.has_params()) continue;
    params.push_back(l.weight);
    params.push_back(l.bias);
  }
  return params;
}

std::vector<LayerSpec> ModelGraph::specs() const {
  std::vector<LayerSpec> out;
  for (const auto& l : layers) out.push_back(l.spec);
  return out;
}

bool ModelGraph::has_masks() const {
  for (const auto& l : layers)
    if (!l.mask.empty()) return true;
  return false;
}

void ModelGraph::apply_masks() {
  for (auto& l : layers) {
    if (l.mask.empty()) continue;
    auto w = l.weight.data();
    for (std::size_t i = 0; i < w.size(); ++i)
      if (!l.mask[i]) w[i] = 0.0;
  }
}

void ModelGraph::clear_masks() {
  for (auto& l : layers) l.mask.clear();
}

void ModelGraph::rewind_to_initial() {
  if (!has_initial) throw ContractViolation("model carries no theta_0 snapshot to rewind to");
  for (auto& l : layers) {
    if (!l.spec.has_params()) continue;
    auto w = l.weight.data();
    auto w0 = std::as_const(l.initial_weight).data();
    std::copy(w0.begin(), w0.end(), w.begin());
    auto b = l.bias.data();
    auto b0 = std::as_const(l.initial_bias).data();
    std::copy(b0.begin(), b0.end(), b.begin());
  }
  apply_masks();
}

ArchitectureConfig default_architecture(std::size_t window_len) {
  ArchitectureConfig a;
  a.name = "default";
  a.window_len = window_len;
  a.convs = {{8, 5}, {8, 5}, {16, 3}, {16, 3}, {16, 3}};
  a.hidden = 64;
  return a;
}

ArchitectureConfig desk_small_preset() {
  ArchitectureConfig a = default_architecture(128);
  a.name = "desk-small";
  a.convs = {{8, 5}, {8, 5}, {16, 5}, {16, 5}, {16, 5}};
  return a;
}

ArchitectureConfig paper_shape_preset() {
  ArchitectureConfig a;
  a.name = "paper-shape";
  a.window_len = 452;
  a.convs = {{30, 10}, {30, 8}, {40, 6}, {50, 5}, {50, 5}};
  a.hidden = 1024;
  return a;
}

ArchitectureConfig architecture_preset(const std::string& name) {
  if (name == "desk-small") return desk_small_preset();
  if (name == "paper-shape") return paper_shape_preset();
  if (name == "default") return default_architecture(480);
  throw ConfigError("unknown architecture preset '" + name +
                    "' (expected desk-small, paper-shape or default)");
}

std::vector<LayerSpec> build_layer_specs(const ArchitectureConfig& arch) {
  if (arch.convs.empty()) throw ConfigError("architecture needs at least one conv stage");
  if (arch.hidden == 0) throw ConfigError("architecture hidden width must be >= 1");
  std::vector<LayerSpec> specs;
  std::size_t channels = 1;
  std::size_t length = arch.window_len;
  for (const auto& c : arch.convs) {
    if (c.out_channels == 0 || c.kernel == 0 || c.stride == 0) {
      throw ConfigError("conv stage widths, kernels and strides must be >= 1");
    }
    if (length < c.kernel) {
      throw ConfigError("window of " + std::to_string(arch.window_len) +
                        " samples is too short for the kernel stack");
    }
    specs.push_back(LayerSpec::conv(channels, c.out_channels, c.kernel, c.stride));
    specs.push_back(LayerSpec::relu());
    length = (length - c.kernel) / c.stride + 1;
    channels = c.out_channels;
  }
  specs.push_back(LayerSpec::flatten());
  specs.push_back(LayerSpec::linear(channels * length, arch.hidden));
  specs.push_back(LayerSpec::relu());
  specs.push_back(LayerSpec::linear(arch.hidden, arch.window_len));
  specs.push_back(LayerSpec::sigmoid());
  return specs;
}

ModelGraph build_model(const ArchitectureConfig& arch, std::uint64_t seed) {
  if (arch.window_len < 64) {
    throw ConfigError("window_len must be >= 64, got " + std::to_string(arch.window_len));
  }
  return ModelGraph(build_layer_specs(arch), arch.window_len, seed);
}

ModelGraph build_default_model(std::size_t window_len, std::uint64_t seed) {
  return build_model(default_architecture(window_len), seed);
}

Tensor forward_batch(const ModelGraph& model, const Tensor& x) {
  if (x.rank() != 2 || x.dim(1) != model.window_len) {
    throw DimensionError("forward: expected input [N, " + std::to_string(model.window_len) +
                         "], got " + shape_str(x.shape()));
  }
  const std::size_t n = x.dim(0);
  Tensor h = x;
  if (model.layers.front().spec.kind == LayerKind::Conv1D) h = h.reshape({n, 1, model.window_len});
  for (const auto& l : model.layers) {
    switch (l.spec.kind) {
      case LayerKind::Conv1D: h = conv1d(h, l.weight, l.bias, l.spec.stride); break;
      case LayerKind::Linear: h = linear(h, l.weight, l.bias); break;
      case LayerKind::ReLU: h = relu(h); break;
      case LayerKind::Sigmoid: h = sigmoid(h); break;
      case LayerKind::Flatten: h = h.reshape({n, h.numel() / n}); break;
    }
  }
  if (h.rank() != 2) h = h.reshape({n, h.numel() / n});
  return h;
}

Tensor forward(const ModelGraph& model, const Tensor& x_window) {
  if (x_window.rank() != 1 || x_window.numel() != model.window_len) {
    throw DimensionError("forward: window length " + std::to_string(x_window.numel()) +
                         " does not match model window " + std::to_string(model.window_len));
  }
  NoGradGuard no_grad;
  Tensor out = forward_batch(model, x_window.reshape({1, model.window_len}));
  return out.reshape({out.numel()});
}

ParamCount count_params(const ModelGraph& model) {
  ParamCount c;
  for (const auto& l : model.layers) {
    if (!l.spec.has_params()) continue;
    c.total += l.weight.numel() + l.bias.numel();
    for (auto m : l.mask) c.masked += m ? 0 : 1;
  }
  c.nonzero = c.total - c.masked;
  return c;
}

std::uint64_t count_macs(const ModelGraph& model) {
  const auto shapes = model.input_shapes();
  std::uint64_t macs = 0;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const auto& s = model.layers[i].spec;
    if (s.kind == LayerKind::Conv1D) {
      macs += static_cast<std::uint64_t>(s.out) * s.in * s.kernel * shapes[i + 1].length;
    } else if (s.kind == LayerKind::Linear) {
      macs += static_cast<std::uint64_t>(s.in) * s.out;
    }
  }
  return macs;
}

std::uint64_t count_flops(const ModelGraph& model) { return 2 * count_macs(model); }

std::uint64_t surviving_after_sparsity(std::uint64_t n, double sparsity) {
  const auto pruned = static_cast<std::uint64_t>(std::llround(sparsity * static_cast<double>(n)));
  return pruned >= n ? 0 : n - pruned;
}

}  // namespace nilmprune
