#include "nilmprune/dependency_graph.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>
#include <numeric>

#include "nilmprune/errors.hpp"

namespace nilmprune {

namespace {

std::size_t units_of(const ActivationShape& a) { return a.is_sequence() ? a.channels : a.numel(); }

std::string node_label(const ModelGraph& model, const SchemeNode& n) {
  return to_string(model.layers[n.layer].spec.kind) + "#" + std::to_string(n.layer) +
         (n.side == Side::In ? ".in" : ".out");
}

void link(DependencyGraph& dg, std::size_t a, std::size_t b, std::size_t block) {
  dg.adjacency[a][b] = dg.adjacency[b][a] = 1;
  dg.index_maps.push_back({a, b, block});
}

}  // namespace

DependencyGraph build_dependency_graph(const ModelGraph& model) {
  model.validate();
  const auto shapes = model.input_shapes();
  const std::size_t n_layers = model.layers.size();
  DependencyGraph dg;
  dg.nodes.resize(2 * n_layers);
  dg.adjacency.assign(2 * n_layers, std::vector<std::uint8_t>(2 * n_layers, 0));

  for (std::size_t i = 0; i < n_layers; ++i) {
    const ActivationShape in = shapes[i];
    const ActivationShape out = i + 1 < n_layers ? shapes[i + 1] : model.output_shape();
    dg.nodes[DependencyGraph::node_id(i, Side::In)] = {i, Side::In, units_of(in)};
    dg.nodes[DependencyGraph::node_id(i, Side::Out)] = {i, Side::Out, units_of(out)};
  }

  for (std::size_t i = 0; i < n_layers; ++i) {
    const std::size_t fin = DependencyGraph::node_id(i, Side::In);
    const std::size_t fout = DependencyGraph::node_id(i, Side::Out);
    if (i > 0) link(dg, DependencyGraph::node_id(i - 1, Side::Out), fin, 1);
    switch (model.layers[i].spec.kind) {
      case LayerKind::ReLU:
      case LayerKind::Sigmoid:
        link(dg, fin, fout, 1);
        break;
      case LayerKind::Flatten:
        link(dg, fin, fout, shapes[i].is_sequence() ? shapes[i].length : 1);
        break;
      case LayerKind::Conv1D:
      case LayerKind::Linear:
        break;
      default:
        throw UnsupportedOpError("dependency graph: unsupported layer " + std::to_string(i) +
                                 " of kind " + to_string(model.layers[i].spec.kind));
    }
  }
  return dg;
}

std::vector<ParameterGroup> group_parameters(const ModelGraph& model, const DependencyGraph& dg) {
  const std::size_t n = dg.nodes.size();
  std::vector<bool> seen(n, false);
  std::vector<ParameterGroup> groups;
  const std::size_t final_layer = model.final_param_layer();

  for (std::size_t seed = 0; seed < n; ++seed) {
    if (seen[seed]) continue;
    ParameterGroup g;
    std::deque<std::size_t> frontier{seed};
    seen[seed] = true;
    while (!frontier.empty()) {
      const std::size_t k = frontier.front();
      frontier.pop_front();
      g.nodes.push_back(k);
      for (std::size_t j = 0; j < n; ++j) {
        if (dg.adjacency[k][j] && !seen[j]) {
          seen[j] = true;
          frontier.push_back(j);
        }
      }
    }
    std::sort(g.nodes.begin(), g.nodes.end());

    g.units = dg.nodes[g.nodes.front()].units;
    for (std::size_t id : g.nodes) g.units = std::min(g.units, dg.nodes[id].units);

    g.prunable = g.units > 0;
    for (std::size_t id : g.nodes) {
      const SchemeNode& node = dg.nodes[id];
      if (!g.label.empty()) g.label += ",";
      g.label += node_label(model, node);
      if (node.units % g.units != 0) {
        throw DependencyError("group {" + g.label + "}: unit counts are not block multiples");
      }
      if (node.layer == 0 && node.side == Side::In) g.prunable = false;
      if (node.layer >= final_layer && node.side == Side::Out) g.prunable = false;
      const LayerSpec& spec = model.layers[node.layer].spec;
      if (!spec.has_params()) continue;
      if (node.side == Side::Out && !spec.prunable) g.prunable = false;
      g.members.push_back({node.layer, node.side, node.units / g.units});
    }
    g.label = "{" + g.label + "}";
    groups.push_back(std::move(g));
  }
  return groups;
}

std::vector<ParameterGroup> group_parameters(const ModelGraph& model) {
  return group_parameters(model, build_dependency_graph(model));
}

std::vector<double> unit_importance(const ModelGraph& model, const ParameterGroup& g) {
  std::vector<double> sq(g.units, 0.0);
  for (std::size_t u = 0; u < g.units; ++u) {
    for_each_unit_coordinate(model, g, u, 1, [&](std::size_t layer, bool bias, std::size_t flat) {
      const Layer& l = model.layers[layer];
      const double v = bias ? l.bias.at(flat) : l.weight.at(flat);
      sq[u] += v * v;
    });
  }
  for (auto& v : sq) v = std::sqrt(v);
  return sq;
}

std::vector<double> normalized_importance(const std::vector<double>& importance,
                                          std::size_t top_p) {
  const std::size_t n = importance.size();
  if (n == 0) return {};
  const std::size_t p = (top_p == 0 || top_p > n) ? n : top_p;
  std::vector<double> sorted = importance;
  std::partial_sort(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(p), sorted.end(),
                    std::greater<>());
  const double denom = std::accumulate(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(p), 0.0);
  std::vector<double> out(n, 0.0);
  if (denom <= 0.0) return out;
  for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<double>(p) * importance[i] / denom;
  return out;
}

}  // namespace nilmprune
