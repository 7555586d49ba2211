#include "nilmprune/compression.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <memory>
#include <numeric>
#include <sstream>
#include <tuple>

#include "nilmprune/errors.hpp"
#include "nilmprune/serialize.hpp"

namespace nilmprune {

namespace {

// Grids built as k * 0.05 overshoot 0.95 by an ulp or so.
double check_sparsity(double s) {
  if (s > kMaxSparsity && s <= kMaxSparsity + 1e-9) return kMaxSparsity;
  if (!(s >= 0.0 && s <= kMaxSparsity)) {
    std::ostringstream os;
    os << "sparsity " << s << " outside [0, " << kMaxSparsity << "]";
    throw RangeError(os.str());
  }
  return s;
}

std::string layer_name(const ModelGraph& m, std::size_t i) {
  return to_string(m.layers[i].spec.kind) + "#" + std::to_string(i);
}

std::string join(const std::vector<std::size_t>& v) {
  std::string s = "[";
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s + "]";
}

bool maskable(const Layer& l) { return l.spec.has_params() && l.spec.prunable; }

struct RankEntry {
  std::uint8_t kept;
  double magnitude;
  std::size_t layer;
  std::size_t index;

  bool operator<(const RankEntry& o) const {
    return std::tie(kept, magnitude, layer, index) < std::tie(o.kept, o.magnitude, o.layer, o.index);
  }
};

void mask_smallest(std::vector<RankEntry>& entries, double s, PruneState& st) {
  const auto k = static_cast<std::size_t>(std::llround(s * static_cast<double>(entries.size())));
  if (k == 0) return;
  std::nth_element(entries.begin(), entries.begin() + static_cast<std::ptrdiff_t>(k - 1),
                   entries.end());
  const RankEntry pivot = entries[k - 1];
  for (const auto& e : entries)
    if (!(pivot < e)) st.masks[e.layer][e.index] = 0;
}

const std::vector<std::size_t>& removed_axis(const PruneState& st, std::size_t layer, Side side) {
  static const std::vector<std::size_t> none;
  const auto& v = side == Side::Out ? st.removed_out : st.removed_in;
  return layer < v.size() ? v[layer] : none;
}

std::vector<std::size_t> kept_indices(std::size_t n, const std::vector<std::size_t>& removed) {
  std::vector<std::size_t> keep;
  keep.reserve(n - removed.size());
  std::size_t r = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (r < removed.size() && removed[r] == i) {
      ++r;
      continue;
    }
    keep.push_back(i);
  }
  return keep;
}

void finetune(ModelGraph& m, const WindowDataset* data, std::int64_t epochs, TrainConfig cfg,
              std::vector<std::string>& warnings) {
  if (epochs <= 0) return;
  if (!data) {
    warnings.push_back("fine-tuning requested but no dataset given; skipped");
    return;
  }
  cfg.epochs = epochs;
  train(m, *data, cfg);
}

std::size_t param_layer_weights(const LayerSpec& s, std::size_t out, std::size_t in) {
  return out * in * (s.kind == LayerKind::Conv1D ? s.kernel : 1);
}

}  // namespace

PruneState magnitude_mask(const ModelGraph& model, double sparsity, MaskScope scope) {
  sparsity = check_sparsity(sparsity);
  PruneState st;
  st.masks.resize(model.layers.size());
  std::vector<RankEntry> entries;
  std::size_t total = 0;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const Layer& l = model.layers[i];
    if (!maskable(l)) continue;
    const auto w = l.weight.data();
    st.masks[i].assign(w.size(), 1);
    if (scope == MaskScope::PerLayer) entries.clear();
    for (std::size_t j = 0; j < w.size(); ++j) {
      const std::uint8_t kept = l.mask.empty() ? 1 : l.mask[j];
      entries.push_back({kept, std::fabs(w[j]), i, j});
    }
    total += w.size();
    if (scope == MaskScope::PerLayer) mask_smallest(entries, sparsity, st);
  }
  if (scope == MaskScope::Global) mask_smallest(entries, sparsity, st);

  std::size_t zeros = 0;
  for (const auto& m : st.masks) zeros += static_cast<std::size_t>(std::count(m.begin(), m.end(), 0));
  st.applied_sparsity = total ? static_cast<double>(zeros) / static_cast<double>(total) : 0.0;
  return st;
}

void apply_mask_state(ModelGraph& model, const PruneState& state) {
  if (state.mode != PruneMode::Unstructured) throw ModeError("expected an unstructured prune state");
  for (std::size_t i = 0; i < model.layers.size() && i < state.masks.size(); ++i) {
    if (state.masks[i].empty()) continue;
    if (state.masks[i].size() != model.layers[i].spec.weight_count()) {
      throw DimensionError("mask for " + layer_name(model, i) + " has the wrong size");
    }
    model.layers[i].mask = state.masks[i];
  }
  model.apply_masks();
}

PruneOutcome prune_after_training(const ModelGraph& model, const WindowDataset* data,
                                  double sparsity, const AfterTrainingConfig& cfg) {
  PruneOutcome out{model.clone(), {}, {}};
  if (model.loss_history.empty()) {
    out.warnings.push_back("model has no training history; pruning an untrained model");
  }
  out.state = magnitude_mask(out.model, sparsity, cfg.scope);
  apply_mask_state(out.model, out.state);
  finetune(out.model, data, cfg.fine_tune_epochs, cfg.train, out.warnings);
  return out;
}

double opt_nilm_round_sparsity(double p, std::int64_t round, std::int64_t rounds) {
  if (round >= rounds) return p;
  return 1.0 - std::pow(1.0 - p, static_cast<double>(round) / static_cast<double>(rounds));
}

OptNilmOutcome pretrain_prune(const ModelGraph& model, const WindowDataset& data, double sparsity,
                              const OptNilmConfig& cfg) {
  sparsity = check_sparsity(sparsity);
  if (cfg.rounds < 1) throw ConfigError("rounds must be >= 1, got " + std::to_string(cfg.rounds));
  if (!model.has_initial) throw ContractViolation("OPT-NILM needs a model with a theta_0 snapshot");
  if (data.count == 0) throw DataError("dataset too small for one epoch: no windows");

  OptNilmOutcome out{model.clone(), {}, {}, {}, {}, {}, false, true};
  ModelGraph& m = out.model;
  TrainConfig tc = cfg.train;
  tc.epochs = 1;
  tc.patience.reset();

  PruneState prev;
  for (std::int64_t r = 1; r <= cfg.rounds; ++r) {
    const auto res = train(m, data, tc);
    out.round_loss.push_back(res.loss_history.back());
    const double target = opt_nilm_round_sparsity(sparsity, r, cfg.rounds);
    PruneState st = magnitude_mask(m, target, MaskScope::Global);
    apply_mask_state(m, st);
    m.rewind_to_initial();

    std::size_t masked = 0;
    for (std::size_t i = 0; i < st.masks.size(); ++i) {
      for (std::size_t j = 0; j < st.masks[i].size(); ++j) {
        if (st.masks[i][j]) continue;
        ++masked;
      }
      if (!prev.masks.empty()) {
        for (std::size_t j = 0; j < prev.masks[i].size(); ++j)
          if (!prev.masks[i][j] && st.masks[i][j]) out.monotone = false;
      }
    }
    out.round_sparsity.push_back(target);
    out.round_masked.push_back(masked);
    if (cfg.keep_round_masks) out.round_states.push_back(st);
    prev = std::move(st);
  }
  out.state = prev;

  out.rewind_verified = true;
  for (const auto& l : m.layers) {
    if (!l.spec.has_params()) continue;
    for (std::size_t j = 0; j < l.weight.numel(); ++j) {
      const bool kept = l.mask.empty() || l.mask[j];
      const double expect = kept ? l.initial_weight.at(j) : 0.0;
      if (std::bit_cast<std::uint64_t>(l.weight.at(j)) != std::bit_cast<std::uint64_t>(expect))
        out.rewind_verified = false;
    }
    for (std::size_t j = 0; j < l.bias.numel(); ++j)
      if (std::bit_cast<std::uint64_t>(l.bias.at(j)) != std::bit_cast<std::uint64_t>(l.initial_bias.at(j)))
        out.rewind_verified = false;
  }
  m.epochs_trained = 0;
  m.loss_history.clear();
  return out;
}

std::vector<LayerProfile> per_layer_sparsity_profile(const PruneState& state,
                                                     const ModelGraph& model) {
  if (state.mode != PruneMode::Unstructured) {
    throw ModeError("per-layer sparsity profile needs an unstructured prune state");
  }
  std::vector<LayerProfile> out;
  for (std::size_t i : model.param_layer_indices()) {
    LayerProfile p;
    p.layer = i;
    p.params = model.layers[i].spec.weight_count();
    if (i < state.masks.size())
      p.zeros = static_cast<std::size_t>(std::count(state.masks[i].begin(), state.masks[i].end(), 0));
    p.fraction = p.params ? static_cast<double>(p.zeros) / static_cast<double>(p.params) : 0.0;
    out.push_back(p);
  }
  return out;
}

std::vector<double> profile_fractions(const std::vector<LayerProfile>& profile) {
  std::vector<double> f;
  for (const auto& p : profile) f.push_back(p.fraction);
  return f;
}

PruneState structured_state(const ModelGraph& model, const std::vector<ParameterGroup>& groups,
                            const std::vector<std::vector<std::size_t>>& removed_units) {
  if (removed_units.size() != groups.size()) {
    throw DimensionError("structured removal needs one unit set per group");
  }
  PruneState st;
  st.mode = PruneMode::Structured;
  st.removed_out.resize(model.layers.size());
  st.removed_in.resize(model.layers.size());
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    const auto& g = groups[gi];
    std::vector<std::size_t> units = removed_units[gi];
    std::sort(units.begin(), units.end());
    units.erase(std::unique(units.begin(), units.end()), units.end());
    if (units.empty()) continue;
    if (!g.prunable) throw DependencyError("group " + g.label + " is not prunable");
    if (units.back() >= g.units) {
      throw DependencyError("group " + g.label + " has no unit " + std::to_string(units.back()));
    }
    for (const auto& m : g.members) {
      auto& dst = (m.side == Side::Out ? st.removed_out : st.removed_in)[m.layer];
      for (std::size_t u : units)
        for (std::size_t b = 0; b < m.block; ++b) dst.push_back(u * m.block + b);
    }
  }
  for (auto* v : {&st.removed_out, &st.removed_in})
    for (auto& s : *v) std::sort(s.begin(), s.end());
  const auto before = count_params(model).total;
  st.applied_sparsity =
      before ? 1.0 - static_cast<double>(params_after_removal(model, st)) / static_cast<double>(before)
             : 0.0;
  return st;
}

std::size_t params_after_removal(const ModelGraph& model, const PruneState& state) {
  std::size_t total = 0;
  for (std::size_t i : model.param_layer_indices()) {
    const LayerSpec& s = model.layers[i].spec;
    const std::size_t out = s.out - removed_axis(state, i, Side::Out).size();
    const std::size_t in = s.in - removed_axis(state, i, Side::In).size();
    total += param_layer_weights(s, out, in) + out;
  }
  return total;
}

ModelGraph rebuild_dense(const ModelGraph& model, const PruneState& state) {
  if (state.mode != PruneMode::Structured) throw ModeError("rebuild_dense needs a structured state");

  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    for (Side side : {Side::In, Side::Out}) {
      const auto& r = removed_axis(state, i, side);
      if (r.empty()) continue;
      const LayerSpec& s = model.layers[i].spec;
      const std::string where = layer_name(model, i) + (side == Side::In ? ".in" : ".out");
      if (!s.has_params()) throw DependencyError(where + " has no parameters to remove");
      const std::size_t n = side == Side::In ? s.in : s.out;
      for (std::size_t k = 0; k < r.size(); ++k) {
        if (r[k] >= n || (k && r[k] <= r[k - 1])) {
          throw DependencyError(where + ": removed indices must be sorted, unique and below " +
                                std::to_string(n));
        }
      }
    }
  }

  for (const auto& g : group_parameters(model)) {
    std::vector<std::size_t> base;
    const GroupMember* first = nullptr;
    for (const auto& m : g.members) {
      const auto& r = removed_axis(state, m.layer, m.side);
      std::vector<std::size_t> units;
      for (std::size_t k = 0; k < r.size(); k += m.block) {
        const std::size_t u = r[k] / m.block;
        bool whole = r[k] % m.block == 0 && k + m.block <= r.size();
        for (std::size_t b = 0; whole && b < m.block; ++b) whole = r[k + b] == u * m.block + b;
        if (!whole) {
          throw DependencyError("group " + g.label + ": " + layer_name(model, m.layer) +
                                " removes a partial unit block at index " + std::to_string(r[k]));
        }
        units.push_back(u);
      }
      if (!first) {
        first = &m;
        base = units;
      } else if (units != base) {
        throw DependencyError(
            "inconsistent removal in group " + g.label + ": " + layer_name(model, first->layer) +
            (first->side == Side::In ? ".in" : ".out") + " removes " + join(base) + " but " +
            layer_name(model, m.layer) + (m.side == Side::In ? ".in" : ".out") + " removes " +
            join(units));
      }
    }
    if (base.empty()) continue;
    if (!g.prunable) throw DependencyError("group " + g.label + " is not prunable");
    if (base.size() >= g.units) {
      throw DependencyError("group " + g.label + " would lose every unit");
    }
  }

  ModelGraph out = model.clone();
  for (std::size_t i : model.param_layer_indices()) {
    const Layer& src = model.layers[i];
    Layer& dst = out.layers[i];
    const auto& rout = removed_axis(state, i, Side::Out);
    const auto& rin = removed_axis(state, i, Side::In);
    if (rout.empty() && rin.empty()) continue;
    const auto keep_out = kept_indices(src.spec.out, rout);
    const auto keep_in = kept_indices(src.spec.in, rin);
    const std::size_t k = src.spec.kind == LayerKind::Conv1D ? src.spec.kernel : 1;

    dst.spec.out = keep_out.size();
    dst.spec.in = keep_in.size();
    const Shape wshape = dst.spec.weight_shape();
    auto slice_w = [&](auto get) {
      std::vector<std::remove_cvref_t<decltype(get(0))>> v;
      v.reserve(keep_out.size() * keep_in.size() * k);
      for (std::size_t o : keep_out)
        for (std::size_t c : keep_in)
          for (std::size_t j = 0; j < k; ++j) v.push_back(get((o * src.spec.in + c) * k + j));
      return v;
    };
    auto slice_b = [&](const Tensor& t, bool rg) {
      std::vector<double> v;
      for (std::size_t o : keep_out) v.push_back(t.at(o));
      return Tensor(Shape{keep_out.size()}, std::move(v), rg);
    };
    dst.weight = Tensor(wshape, slice_w([&](std::size_t f) { return src.weight.at(f); }), true);
    dst.bias = slice_b(src.bias, true);
    if (model.has_initial) {
      dst.initial_weight =
          Tensor(wshape, slice_w([&](std::size_t f) { return src.initial_weight.at(f); }), false);
      dst.initial_bias = slice_b(src.initial_bias, false);
    }
    if (!src.mask.empty()) dst.mask = slice_w([&](std::size_t f) { return src.mask[f]; });
    dst.removed_units = src.removed_units + rout.size();
  }
  out.validate();
  return out;
}

PruneOutcome structured_prune_by_profile(const ModelGraph& model,
                                         const std::vector<double>& profile) {
  const auto params = model.param_layer_indices();
  if (profile.size() != params.size()) {
    throw ConfigError("profile has " + std::to_string(profile.size()) + " entries, model has " +
                      std::to_string(params.size()) + " parameterized layers");
  }
  PruneOutcome out{{}, {}, {}};
  const auto groups = group_parameters(model);
  std::vector<std::vector<std::size_t>> removed(groups.size());
  const std::size_t final_layer = model.final_param_layer();

  for (std::size_t p = 0; p < params.size(); ++p) {
    const std::size_t li = params[p];
    const double f = profile[p];
    if (li == final_layer) continue;
    if (!(f >= 0.0 && f < 1.0)) {
      std::ostringstream os;
      os << "profile entry " << f << " for " << layer_name(model, li) << " must lie in [0, 1)";
      throw RangeError(os.str());
    }
    const Layer& l = model.layers[li];
    const auto n = static_cast<std::size_t>(std::llround(f * static_cast<double>(l.spec.out)));
    if (n == 0) continue;
    if (n >= l.spec.out) {
      throw RangeError("profile would remove every unit of " + layer_name(model, li));
    }
    std::size_t gi = groups.size();
    for (std::size_t g = 0; g < groups.size(); ++g)
      for (const auto& m : groups[g].members)
        if (m.layer == li && m.side == Side::Out) gi = g;
    if (gi == groups.size() || !groups[gi].prunable) {
      out.warnings.push_back(layer_name(model, li) + " is not structurally prunable; entry ignored");
      continue;
    }
    const std::size_t row = l.weight.numel() / l.spec.out;
    std::vector<std::pair<double, std::size_t>> l1;
    for (std::size_t o = 0; o < l.spec.out; ++o) {
      double s = std::fabs(l.bias.at(o));
      for (std::size_t j = 0; j < row; ++j) s += std::fabs(l.weight.at(o * row + j));
      l1.emplace_back(s, o);
    }
    std::sort(l1.begin(), l1.end());
    const std::size_t block = [&] {
      for (const auto& m : groups[gi].members)
        if (m.layer == li && m.side == Side::Out) return m.block;
      return std::size_t{1};
    }();
    for (std::size_t k = 0; k < n; ++k) removed[gi].push_back(l1[k].second / block);
  }
  out.state = structured_state(model, groups, removed);
  out.model = rebuild_dense(model, out.state);
  return out;
}

std::vector<double> regularizer_gammas(const std::vector<double>& importance, double alpha) {
  if (importance.empty()) return {};
  const auto [lo, hi] = std::minmax_element(importance.begin(), importance.end());
  const double imin = *lo, imax = *hi;
  std::vector<double> g(importance.size(), std::exp2(alpha));
  if (imax - imin <= 0.0) return g;
  for (std::size_t i = 0; i < g.size(); ++i)
    g[i] = std::exp2(alpha * (imax - importance[i]) / (imax - imin));
  return g;
}

Tensor group_regularizer(const ModelGraph& model, const std::vector<ParameterGroup>& groups,
                         double alpha) {
  const auto params = model.param_layer_indices();
  std::vector<std::size_t> slot(model.layers.size(), 0);
  std::vector<Tensor> parents;
  auto coeff = std::make_shared<std::vector<std::vector<double>>>();
  for (std::size_t i : params) {
    slot[i] = parents.size();
    parents.push_back(model.layers[i].weight);
    coeff->emplace_back(model.layers[i].weight.numel(), 0.0);
    parents.push_back(model.layers[i].bias);
    coeff->emplace_back(model.layers[i].bias.numel(), 0.0);
  }
  for (const auto& g : groups) {
    if (!g.prunable || g.units == 0 || g.members.empty()) continue;
    const auto gamma = regularizer_gammas(unit_importance(model, g), alpha);
    for (std::size_t u = 0; u < g.units; ++u) {
      for_each_unit_coordinate(model, g, u, 1, [&](std::size_t layer, bool bias, std::size_t f) {
        (*coeff)[slot[layer] + (bias ? 1 : 0)][f] += gamma[u];
      });
    }
  }
  double value = 0.0;
  for (std::size_t s = 0; s < parents.size(); ++s) {
    const auto d = std::as_const(parents[s]).data();
    for (std::size_t j = 0; j < d.size(); ++j) value += (*coeff)[s][j] * d[j] * d[j];
  }
  return Tensor::from_op(Shape{1}, {value}, std::move(parents),
                         [coeff](std::span<const double> g, std::span<Tensor> ps) {
                           for (std::size_t s = 0; s < ps.size(); ++s) {
                             if (!ps[s].requires_grad()) continue;
                             const auto d = std::as_const(ps[s]).data();
                             auto gr = ps[s].grad();
                             for (std::size_t j = 0; j < d.size(); ++j)
                               gr[j] += 2.0 * (*coeff)[s][j] * d[j] * g[0];
                           }
                         });
}

std::int64_t default_fine_tune_epochs(std::int64_t full_epochs) {
  return std::max<std::int64_t>(1, std::llround(0.2 * static_cast<double>(full_epochs)));
}

PruneOutcome dg_structured_prune(const ModelGraph& model, const WindowDataset* data,
                                 double sparsity, const DgConfig& cfg) {
  sparsity = check_sparsity(sparsity);
  PruneOutcome out{model.clone(), {}, {}};
  ModelGraph& m = out.model;
  out.state.mode = PruneMode::Structured;

  const auto groups = group_parameters(m);
  if (cfg.sparse_epochs > 0) {
    if (!data) throw ConfigError("sparse training needs a dataset");
    TrainConfig tc = cfg.train;
    tc.epochs = cfg.sparse_epochs;
    TrainHooks hooks;
    hooks.penalty = [&](const ModelGraph& mm) {
      return scale(group_regularizer(mm, groups, cfg.alpha), cfg.regularization_weight);
    };
    train(m, *data, tc, hooks);
  }
  if (sparsity == 0.0) return out;

  struct Candidate {
    double score;
    std::size_t group;
    std::size_t unit;
  };
  std::vector<Candidate> cands;
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    const auto& g = groups[gi];
    if (!g.prunable || g.members.empty()) continue;
    const auto scores = normalized_importance(unit_importance(m, g), cfg.top_p);
    for (std::size_t u = 0; u < g.units; ++u) cands.push_back({scores[u], gi, u});
  }
  std::sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
    return std::tie(a.score, a.group, a.unit) < std::tie(b.score, b.group, b.unit);
  });

  std::vector<std::size_t> kept_out(m.layers.size()), kept_in(m.layers.size());
  for (std::size_t i : m.param_layer_indices()) {
    kept_out[i] = m.layers[i].spec.out;
    kept_in[i] = m.layers[i].spec.in;
  }
  auto current_params = [&] {
    std::size_t t = 0;
    for (std::size_t i : m.param_layer_indices())
      t += param_layer_weights(m.layers[i].spec, kept_out[i], kept_in[i]) + kept_out[i];
    return t;
  };
  const double before = static_cast<double>(current_params());
  std::vector<std::size_t> remaining(groups.size());
  for (std::size_t gi = 0; gi < groups.size(); ++gi) remaining[gi] = groups[gi].units;
  std::vector<std::vector<std::size_t>> removed(groups.size());
  std::string blocked;

  double reached = 0.0;
  for (const auto& c : cands) {
    if (reached >= sparsity) break;
    if (remaining[c.group] <= 1) {
      if (blocked.empty()) blocked = layer_name(m, groups[c.group].members.front().layer);
      continue;
    }
    --remaining[c.group];
    removed[c.group].push_back(c.unit);
    for (const auto& mem : groups[c.group].members)
      (mem.side == Side::Out ? kept_out : kept_in)[mem.layer] -= mem.block;
    reached = 1.0 - static_cast<double>(current_params()) / before;
  }
  if (reached < sparsity) {
    std::ostringstream os;
    os << "structured sparsity " << sparsity << " is unreachable (stopped at " << reached
       << "): " << (blocked.empty() ? std::string("no prunable units") : blocked)
       << " would lose all of its units; lower the threshold";
    throw RangeError(os.str());
  }

  out.state = structured_state(m, groups, removed);
  out.model = rebuild_dense(m, out.state);
  finetune(out.model, data, cfg.fine_tune_epochs, cfg.train, out.warnings);
  return out;
}

double PruneReport::param_reduction() const {
  return params_before ? 1.0 - static_cast<double>(params_after) / static_cast<double>(params_before)
                       : 0.0;
}

double PruneReport::macs_efficiency() const {
  return macs_after ? static_cast<double>(macs_before) / static_cast<double>(macs_after) : 0.0;
}

double PruneReport::size_reduction() const {
  return size_bytes_before
             ? 1.0 - static_cast<double>(size_bytes_after) / static_cast<double>(size_bytes_before)
             : 0.0;
}

PruneReport make_prune_report(const std::string& strategy, double threshold,
                              const ModelGraph& before, const ModelGraph& after) {
  PruneReport r;
  r.strategy = strategy;
  r.threshold = threshold;
  r.params_before = count_params(before).nonzero;
  r.params_after = count_params(after).nonzero;
  r.macs_before = count_macs(before);
  r.macs_after = count_macs(after);
  r.size_bytes_before = serialize_model(before).size();
  r.size_bytes_after = serialize_model(after).size();
  if (before.layers.size() == after.layers.size()) {
    for (std::size_t i : before.param_layer_indices()) {
      const Layer& a = after.layers[i];
      LayerProfile p;
      p.layer = i;
      p.params = before.layers[i].spec.weight_count();
      std::size_t kept = a.spec.weight_count();
      for (auto b : a.mask) kept -= b ? 0 : 1;
      p.zeros = p.params - kept;
      p.fraction = p.params ? static_cast<double>(p.zeros) / static_cast<double>(p.params) : 0.0;
      r.per_layer_profile.push_back(p);
    }
  }
  return r;
}

nlohmann::json to_json(const PruneReport& r) {
  nlohmann::json prof = nlohmann::json::array();
  for (const auto& p : r.per_layer_profile) {
    prof.push_back({{"layer", p.layer}, {"params", p.params}, {"zeros", p.zeros},
                    {"fraction", p.fraction}});
  }
  nlohmann::json j = {
      {"strategy", r.strategy},
      {"threshold", r.threshold},
      {"params_before", r.params_before},
      {"params_after", r.params_after},
      {"macs_before", r.macs_before},
      {"macs_after", r.macs_after},
      {"size_bytes_before", r.size_bytes_before},
      {"size_bytes_after", r.size_bytes_after},
      {"param_reduction", r.param_reduction()},
      {"macs_efficiency", r.macs_efficiency()},
      {"size_reduction", r.size_reduction()},
      {"per_layer_profile", prof},
      {"warnings", r.warnings},
  };
  if (r.rewind_verified) j["rewind_verified"] = *r.rewind_verified;
  return j;
}

PruneReport prune_report_from_json(const nlohmann::json& j) {
  PruneReport r;
  try {
    r.strategy = j.at("strategy");
    r.threshold = j.at("threshold");
    r.params_before = j.at("params_before");
    r.params_after = j.at("params_after");
    r.macs_before = j.at("macs_before");
    r.macs_after = j.at("macs_after");
    r.size_bytes_before = j.at("size_bytes_before");
    r.size_bytes_after = j.at("size_bytes_after");
    for (const auto& p : j.at("per_layer_profile"))
      r.per_layer_profile.push_back({p.at("layer"), p.at("params"), p.at("zeros"), p.at("fraction")});
    if (j.contains("warnings")) r.warnings = j["warnings"].get<std::vector<std::string>>();
    if (j.contains("rewind_verified")) r.rewind_verified = j["rewind_verified"].get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("prune report: ") + e.what());
  }
  return r;
}

}  // namespace nilmprune
