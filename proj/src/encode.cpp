#include "custpred/encode.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace custpred {

std::string pair_token(const StateActionPair& p) {
  std::string out(to_string(p.channel));
  out += ": ";
  ActionKind canonical = p.action;
  if (auto* g = std::get_if<InfoGain>(&canonical)) {
    g->spelling.clear();
    if (!is_info_target(g->target)) g->target = std::string(kOovTarget);
  } else if (auto* m = std::get_if<Modification>(&canonical)) {
    if (!is_modification_target(m->target)) m->target = std::string(kOovTarget);
  } else if (auto* o = std::get_if<Operation>(&canonical)) {
    if (!is_operation(o->name)) o->name = std::string(kOovTarget);
  } else if (auto* t = std::get_if<Transition>(&canonical)) {
    t->target = feature_target(p.action);
  }
  out += format_action(canonical);
  return out;
}

Vocab::Vocab() : Vocab(std::vector<std::string>{}) {}

Vocab::Vocab(std::vector<std::string> tokens) {
  tokens_.emplace_back(kOovToken);
  decoded_.emplace_back(std::nullopt);
  for (auto& t : tokens) {
    index_[t] = static_cast<int>(tokens_.size());
    try {
      decoded_.emplace_back(parse_event(0, t));
    } catch (const ParseError&) {
      decoded_.emplace_back(std::nullopt);
    }
    tokens_.push_back(std::move(t));
  }
}

Vocab Vocab::from_counts(const std::map<std::string, std::uint64_t>& counts, std::uint64_t min_count) {
  std::vector<std::string> kept;
  for (const auto& [tok, c] : counts) {
    if (c >= min_count) kept.push_back(tok);
  }
  if (kept.empty()) throw EmptyVocab("no token occurs at least " + std::to_string(min_count) + " times");
  return Vocab(std::move(kept));  // std::map iterates in lexicographic order
}

int Vocab::index(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kOov : it->second;
}

std::uint64_t Vocab::hash() const {
  Fnv1a h;
  for (const auto& t : tokens_) h.add(t).add("\n");
  return h.value();
}

void Vocab::write(std::ostream& out) const {
  out << "# vocab " << tokens_.size() << "\n";
  for (std::size_t i = 1; i < tokens_.size(); ++i) out << tokens_[i] << "\n";
}

Vocab Vocab::read(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line.rfind("# vocab ", 0) != 0) throw DataError("vocab file: missing header");
  std::size_t n = std::stoul(line.substr(8));
  if (n == 0) throw DataError("vocab file: bad size");
  std::vector<std::string> tokens;
  for (std::size_t i = 1; i < n; ++i) {
    if (!std::getline(in, line)) throw DataError("vocab file: truncated");
    if (!tokens.empty() && !(tokens.back() < line)) throw DataError("vocab file: tokens not sorted");
    tokens.push_back(line);
  }
  return Vocab(std::move(tokens));
}

void Vocab::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write vocab file `" + path + "`");
  write(out);
}

Vocab Vocab::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open vocab file `" + path + "`");
  return read(in);
}

Vocab build_vocab(std::span<const std::vector<StateActionPair>> train_pairs, std::uint64_t min_count) {
  std::map<std::string, std::uint64_t> counts;
  for (const auto& t : train_pairs) {
    for (const auto& p : t) ++counts[pair_token(p)];
  }
  if (counts.empty()) throw EmptyVocab("build_vocab: no training pairs");
  return Vocab::from_counts(counts, min_count);
}

Eigen::VectorXd one_hot(const StateActionPair& pair, const Vocab& v) {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(v.size()));
  out(v.index(pair)) = 1.0;
  return out;
}

Eigen::VectorXd bag_of_words(std::span<const StateActionPair> prefix, const Vocab& v) {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(v.size()));
  for (const auto& p : prefix) out(v.index(p)) += 1.0;
  return out;
}

std::string_view to_string(EncodingMode m) { return m == EncodingMode::bow ? "bow" : "graph"; }

std::optional<EncodingMode> encoding_mode_from_string(std::string_view s) {
  if (s == "bow") return EncodingMode::bow;
  if (s == "graph") return EncodingMode::graph;
  return std::nullopt;
}

Eigen::VectorXd EncodedWindow::one_hot(std::size_t t) const {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(vocab_size);
  out(tokens.at(t)) = 1.0;
  return out;
}

Eigen::VectorXd EncodedWindow::bow(std::size_t t) const {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(vocab_size);
  for (std::size_t s = 0; s <= t; ++s) out(tokens.at(s)) += 1.0;
  return out;
}

Eigen::VectorXd EncodedWindow::dense_step(std::size_t t) const {
  if (mode == EncodingMode::graph) return one_hot(t);
  Eigen::VectorXd out(2 * vocab_size);
  out << one_hot(t), bow(t);
  return out;
}

void EncodedWindow::advance_annotation(std::size_t t, NodeFeatures& out) const {
  if (t == 0) {
    out = carried.rows() == node_count ? carried : NodeFeatures::Zero(node_count, kNodeFeatureDim);
  } else {
    out.col(kEgoNode).setZero();
  }
  int v = state_nodes.at(t);
  if (v < 0) return;
  out(v, kPastNodes) = 1.0;
  out(v, kEgoNode) = 1.0;
  if (classes[t] == ActionClass::info_gain) out(v, kInfoGain) = 1.0;
  if (classes[t] == ActionClass::modification) out(v, kModification) = 1.0;
}

NodeFeatures EncodedWindow::annotation(std::size_t t) const {
  NodeFeatures out;
  for (std::size_t s = 0; s <= t; ++s) advance_annotation(s, out);
  return out;
}

EncodedWindow encode_window(std::span<const StateActionPair> window, const Vocab& v, const StateGraph* g,
                            EncodingMode mode, std::span<const StateActionPair> before) {
  if (mode == EncodingMode::graph && g == nullptr) throw DataError("encode_window: graph mode needs a state graph");
  EncodedWindow w;
  w.mode = mode;
  w.vocab_size = static_cast<int>(v.size());
  w.tokens.reserve(window.size());
  for (const auto& p : window) w.tokens.push_back(v.index(p));
  if (mode == EncodingMode::graph) {
    w.node_count = static_cast<int>(g->node_count());
    for (const auto& p : window) {
      auto idx = g->find(p.state);
      w.state_nodes.push_back(idx ? *idx : -1);
      w.classes.push_back(action_class(p.action));
    }
    if (!before.empty()) {
      w.carried = annotate(*g, before);
      w.carried.col(kEgoNode).setZero();
    }
  }
  return w;
}

}  // namespace custpred
