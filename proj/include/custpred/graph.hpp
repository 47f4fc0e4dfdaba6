#pragma once

// State-space graph over (primary, secondary) interface states, built from
// training trajectories, plus the per-window node indicators fed to the GNN.

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "custpred/common.hpp"
#include "custpred/trace.hpp"

namespace custpred {

class EmptyGraph : public DataError {
 public:
  using DataError::DataError;
};

struct GraphEdge {
  int src = 0;
  int dst = 0;
  std::string action;  // e.g. `login`, `enter-menu:settings`, `exit-menu:root-section`
  std::uint64_t count = 0;
  auto operator<=>(const GraphEdge&) const = default;
};

// Column order of the node indicator matrix.
enum NodeIndicator : int { kPastNodes = 0, kEgoNode = 1, kInfoGain = 2, kModification = 3 };
inline constexpr int kNodeFeatureDim = 4;
using NodeFeatures = Eigen::Matrix<double, Eigen::Dynamic, kNodeFeatureDim>;

class StateGraph {
 public:
  StateGraph() = default;
  // Nodes are sorted and re-indexed; edges must reference valid indices.
  StateGraph(std::vector<SessionState> nodes, std::vector<GraphEdge> edges);

  std::size_t node_count() const { return nodes_.size(); }
  std::size_t edge_count() const { return edges_.size(); }
  const std::vector<SessionState>& nodes() const { return nodes_; }
  const std::vector<GraphEdge>& edges() const { return edges_; }
  std::optional<int> find(const SessionState& s) const;
  // Distinct in- or out-neighbours of each node, self loops excluded.
  const std::vector<std::vector<int>>& neighbours() const { return neighbours_; }

  std::uint64_t hash() const;
  void write(std::ostream& out) const;
  static StateGraph read(std::istream& in);
  void save(const std::string& path) const;
  static StateGraph load(const std::string& path);

  bool operator==(const StateGraph& o) const { return nodes_ == o.nodes_ && edges_ == o.edges_; }

 private:
  std::vector<SessionState> nodes_;
  std::vector<GraphEdge> edges_;
  std::map<SessionState, int> index_;
  std::vector<std::vector<int>> neighbours_;
};

// Label used for a transition action on a graph edge.
std::string edge_action_label(const ActionKind& a);

// Keeps states seen more than `min_count` times and transition edges seen
// more than `min_count` times whose endpoints both survived. Throws EmptyGraph
// when nothing survives.
StateGraph build_state_graph(std::span<const std::vector<StateActionPair>> trajectories,
                             std::uint64_t min_count = 10);

// One row per graph node; states outside the graph are ignored.
NodeFeatures annotate(const StateGraph& g, std::span<const StateActionPair> history);

struct GraphStats {
  std::size_t nodes = 0;
  std::size_t edges = 0;
  std::map<std::size_t, std::size_t> degree_histogram;  // neighbour count -> nodes
  bool operator==(const GraphStats&) const = default;
};
GraphStats graph_stats(const StateGraph& g);

}  // namespace custpred
