#pragma once

// Model-ready encodings of history windows: a token vocabulary, per-step
// one-hot vectors, prefix bag-of-words counts and per-step graph annotations.

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "custpred/graph.hpp"
#include "custpred/trace.hpp"

namespace custpred {

class EmptyVocab : public DataError {
 public:
  using DataError::DataError;
};

// Token of a pair: channel plus action phrase with canonical targets, e.g.
// `web: get information on credit-card-trans-history`.
std::string pair_token(const StateActionPair& p);

// Index 0 is reserved for out-of-vocabulary tokens.
class Vocab {
 public:
  static constexpr int kOov = 0;
  static constexpr std::string_view kOovToken = "<OOV>";

  Vocab();
  // Tokens with count >= min_count, sorted lexicographically, indexed from 1.
  static Vocab from_counts(const std::map<std::string, std::uint64_t>& counts, std::uint64_t min_count);

  std::size_t size() const { return tokens_.size(); }  // includes OOV
  int index(std::string_view token) const;
  int index(const StateActionPair& p) const { return index(pair_token(p)); }
  const std::string& token(int i) const { return tokens_.at(static_cast<std::size_t>(i)); }
  // The event a token stands for, or nullopt for OOV / unparsable tokens.
  const std::optional<Event>& decode(int i) const { return decoded_.at(static_cast<std::size_t>(i)); }
  std::uint64_t hash() const;

  void write(std::ostream& out) const;
  static Vocab read(std::istream& in);
  void save(const std::string& path) const;
  static Vocab load(const std::string& path);

  bool operator==(const Vocab& o) const { return tokens_ == o.tokens_; }

 private:
  explicit Vocab(std::vector<std::string> tokens);
  std::vector<std::string> tokens_;
  std::vector<std::optional<Event>> decoded_;
  std::unordered_map<std::string, int> index_;
};

Vocab build_vocab(std::span<const std::vector<StateActionPair>> train_pairs, std::uint64_t min_count = 1);

Eigen::VectorXd one_hot(const StateActionPair& pair, const Vocab& v);
Eigen::VectorXd bag_of_words(std::span<const StateActionPair> prefix, const Vocab& v);

enum class EncodingMode : std::uint8_t { bow, graph };
std::string_view to_string(EncodingMode m);
std::optional<EncodingMode> encoding_mode_from_string(std::string_view s);

// Compact window encoding. Dense step vectors and annotation matrices are
// materialized on demand from per-step token ids, graph node ids and action
// classes.
struct EncodedWindow {
  EncodingMode mode = EncodingMode::bow;
  int vocab_size = 0;
  int node_count = 0;                     // graph mode only
  std::vector<int> tokens;                // per step
  std::vector<int> state_nodes;           // graph node of each step's state, -1 if absent
  std::vector<ActionClass> classes;       // per step
  // Indicators accumulated before the window (full-history scope); empty
  // for window-local annotation.
  NodeFeatures carried;

  std::size_t steps() const { return tokens.size(); }
  // one-hot (+ prefix counts in bow mode); the graph input is annotation(t).
  int step_dim() const { return mode == EncodingMode::bow ? 2 * vocab_size : vocab_size; }
  Eigen::VectorXd one_hot(std::size_t t) const;
  Eigen::VectorXd bow(std::size_t t) const;
  Eigen::VectorXd dense_step(std::size_t t) const;
  // Node indicators for the prefix of steps 0..t.
  NodeFeatures annotation(std::size_t t) const;
  // Writes annotation(t) into `out` given annotation(t-1) already there.
  void advance_annotation(std::size_t t, NodeFeatures& out) const;
};

// `before` holds pairs preceding the window that should count towards the
// past/info/modification indicators (full-history scope); pass an empty span
// for window-local annotation.
EncodedWindow encode_window(std::span<const StateActionPair> window, const Vocab& v, const StateGraph* g,
                            EncodingMode mode, std::span<const StateActionPair> before = {});

}  // namespace custpred
