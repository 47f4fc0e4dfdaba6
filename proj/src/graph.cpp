#include "custpred/graph.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

namespace custpred {

namespace {

bool node_less(const SessionState& a, const SessionState& b) {
  auto pa = to_string(a.primary), pb = to_string(b.primary);
  if (pa != pb) return pa < pb;
  return a.secondary < b.secondary;
}

}  // namespace

StateGraph::StateGraph(std::vector<SessionState> nodes, std::vector<GraphEdge> edges) {
  std::vector<int> order(nodes.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::sort(order.begin(), order.end(), [&](int a, int b) { return node_less(nodes[a], nodes[b]); });
  std::vector<int> remap(nodes.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    remap[order[i]] = static_cast<int>(i);
    nodes_.push_back(nodes[order[i]]);
  }
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (!index_.emplace(nodes_[i], static_cast<int>(i)).second) throw DataError("duplicate graph node");
  }
  for (auto e : edges) {
    if (e.src < 0 || e.dst < 0 || e.src >= static_cast<int>(nodes.size()) ||
        e.dst >= static_cast<int>(nodes.size())) {
      throw DataError("graph edge references a missing node");
    }
    e.src = remap[e.src];
    e.dst = remap[e.dst];
    edges_.push_back(std::move(e));
  }
  std::sort(edges_.begin(), edges_.end());
  std::vector<std::set<int>> nb(nodes_.size());
  for (const auto& e : edges_) {
    if (e.src == e.dst) continue;
    nb[e.src].insert(e.dst);
    nb[e.dst].insert(e.src);
  }
  for (auto& s : nb) neighbours_.emplace_back(s.begin(), s.end());
}

std::optional<int> StateGraph::find(const SessionState& s) const {
  auto it = index_.find(s);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

void StateGraph::write(std::ostream& out) const {
  out << "# nodes " << nodes_.size() << "\n";
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    out << i << ' ' << to_string(nodes_[i].primary) << ' ' << nodes_[i].secondary << "\n";
  }
  out << "# edges " << edges_.size() << "\n";
  for (const auto& e : edges_) out << e.src << ' ' << e.dst << ' ' << e.action << ' ' << e.count << "\n";
}

StateGraph StateGraph::read(std::istream& in) {
  auto fail = [](const std::string& why) { return DataError("graph file: " + why); };
  std::string hash_sign, word;
  std::size_t n = 0, m = 0;
  if (!(in >> hash_sign >> word >> n) || hash_sign != "#" || word != "nodes") throw fail("missing node header");
  std::vector<SessionState> nodes;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t idx;
    std::string primary, secondary;
    if (!(in >> idx >> primary >> secondary) || idx != i) throw fail("bad node line " + std::to_string(i));
    auto p = primary_from_string(primary);
    if (!p) throw fail("unknown primary location `" + primary + "`");
    nodes.push_back(SessionState{*p, secondary});
  }
  if (!(in >> hash_sign >> word >> m) || hash_sign != "#" || word != "edges") throw fail("missing edge header");
  std::vector<GraphEdge> edges;
  for (std::size_t i = 0; i < m; ++i) {
    GraphEdge e;
    if (!(in >> e.src >> e.dst >> e.action >> e.count)) throw fail("bad edge line " + std::to_string(i));
    edges.push_back(std::move(e));
  }
  StateGraph g(std::move(nodes), std::move(edges));
  return g;
}

void StateGraph::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write graph file `" + path + "`");
  write(out);
  if (!out) throw IoError("write failed for `" + path + "`");
}

StateGraph StateGraph::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open graph file `" + path + "`");
  return read(in);
}

std::uint64_t StateGraph::hash() const {
  std::ostringstream s;
  write(s);
  return Fnv1a().add(s.str()).value();
}

std::string edge_action_label(const ActionKind& a) {
  const auto& t = std::get<Transition>(a);
  std::string out(to_string(t.verb));
  if (!t.target.empty()) out += ":" + feature_target(a);
  return out;
}

StateGraph build_state_graph(std::span<const std::vector<StateActionPair>> trajectories,
                             std::uint64_t min_count) {
  std::map<SessionState, std::uint64_t> node_counts;
  std::map<std::tuple<SessionState, SessionState, std::string>, std::uint64_t> edge_counts;
  for (const auto& pairs : trajectories) {
    for (const auto& p : pairs) {
      ++node_counts[p.state];
      if (!std::holds_alternative<Transition>(p.action)) continue;
      SessionState next = fold_state(p.state, pair_event(p));
      ++edge_counts[{p.state, std::move(next), edge_action_label(p.action)}];
    }
  }
  std::vector<SessionState> nodes;
  std::map<SessionState, int> kept;
  for (const auto& [s, c] : node_counts) {
    if (c > min_count) {
      kept[s] = static_cast<int>(nodes.size());
      nodes.push_back(s);
    }
  }
  if (nodes.empty()) throw EmptyGraph("no state occurs more than " + std::to_string(min_count) + " times");
  std::vector<GraphEdge> edges;
  for (const auto& [key, c] : edge_counts) {
    if (c <= min_count) continue;
    const auto& [src, dst, action] = key;
    auto a = kept.find(src), b = kept.find(dst);
    if (a == kept.end() || b == kept.end()) continue;
    edges.push_back(GraphEdge{a->second, b->second, action, c});
  }
  return StateGraph(std::move(nodes), std::move(edges));
}

NodeFeatures annotate(const StateGraph& g, std::span<const StateActionPair> history) {
  NodeFeatures f = NodeFeatures::Zero(static_cast<Eigen::Index>(g.node_count()), kNodeFeatureDim);
  for (std::size_t i = 0; i < history.size(); ++i) {
    const auto& p = history[i];
    auto idx = g.find(p.state);
    if (!idx) continue;
    f(*idx, kPastNodes) = 1.0;
    if (i + 1 == history.size()) f(*idx, kEgoNode) = 1.0;
    if (std::holds_alternative<InfoGain>(p.action)) f(*idx, kInfoGain) = 1.0;
    if (std::holds_alternative<Modification>(p.action)) f(*idx, kModification) = 1.0;
  }
  return f;
}

GraphStats graph_stats(const StateGraph& g) {
  GraphStats s;
  s.nodes = g.node_count();
  s.edges = g.edge_count();
  for (const auto& nb : g.neighbours()) ++s.degree_histogram[nb.size()];
  return s;
}

}  // namespace custpred
