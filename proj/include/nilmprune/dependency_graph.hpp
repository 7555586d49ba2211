#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "nilmprune/model.hpp"

namespace nilmprune {

enum class Side { In, Out };

/// One pruning scheme: the input (f-) or output (f+) unit axis of a layer.
struct SchemeNode {
  std::size_t layer = 0;
  Side side = Side::In;
  std::size_t units = 0;
};

/// Unit u of `from` is tied to units [u*block, (u+1)*block) of `to`.
struct IndexMap {
  std::size_t from = 0;
  std::size_t to = 0;
  std::size_t block = 1;
};

struct DependencyGraph {
  std::vector<SchemeNode> nodes;                   // node 2*i is layer i's f-, 2*i+1 its f+
  std::vector<std::vector<std::uint8_t>> adjacency;  // symmetric D over nodes
  std::vector<IndexMap> index_maps;

  static std::size_t node_id(std::size_t layer, Side side) {
    return 2 * layer + (side == Side::Out ? 1 : 0);
  }
  bool connected(std::size_t a, std::size_t b) const { return adjacency[a][b] != 0; }
};

/// Parameterized axis inside a group. `block` coordinates of this axis make
/// up one unit of the group (Flatten turns one channel into L features).
struct GroupMember {
  std::size_t layer = 0;
  Side side = Side::In;
  std::size_t block = 1;
};

struct ParameterGroup {
  std::vector<std::size_t> nodes;
  std::vector<GroupMember> members;
  std::size_t units = 0;
  bool prunable = false;  // false when tied to the model input or the final output
  std::string label;
};

DependencyGraph build_dependency_graph(const ModelGraph& model);
/// Breadth-first closure over D; groups come out ordered by their first node.
std::vector<ParameterGroup> group_parameters(const ModelGraph& model, const DependencyGraph& dg);
std::vector<ParameterGroup> group_parameters(const ModelGraph& model);

/// Visits every weight/bias coordinate belonging to units [first, first+count)
/// of `g`. fn(layer, is_bias, flat_index).
template <typename Fn>
void for_each_unit_coordinate(const ModelGraph& model, const ParameterGroup& g, std::size_t first,
                              std::size_t count, Fn&& fn);

/// I_c: L2 norm over every coordinate of unit c, all members together.
std::vector<double> unit_importance(const ModelGraph& model, const ParameterGroup& g);

/// P * I / (sum of the P largest I). top_p == 0 or above the group size uses the whole group.
std::vector<double> normalized_importance(const std::vector<double>& importance,
                                          std::size_t top_p = 0);

// ---------------------------------------------------------------------------

template <typename Fn>
void for_each_unit_coordinate(const ModelGraph& model, const ParameterGroup& g, std::size_t first,
                              std::size_t count, Fn&& fn) {
  for (const auto& m : g.members) {
    const LayerSpec& s = model.layers[m.layer].spec;
    const std::size_t k = s.kind == LayerKind::Conv1D ? s.kernel : 1;
    const std::size_t lo = first * m.block;
    const std::size_t hi = (first + count) * m.block;
    if (m.side == Side::Out) {
      for (std::size_t o = lo; o < hi; ++o) {
        for (std::size_t j = 0; j < s.in * k; ++j) fn(m.layer, false, o * s.in * k + j);
        fn(m.layer, true, o);
      }
    } else {
      for (std::size_t o = 0; o < s.out; ++o)
        for (std::size_t c = lo; c < hi; ++c)
          for (std::size_t j = 0; j < k; ++j) fn(m.layer, false, (o * s.in + c) * k + j);
    }
  }
}

}  // namespace nilmprune
