#pragma once

// From-scratch LSTM and mean-aggregation GNN with exact reverse-mode
// gradients, task heads, losses and Adam.
//
// All parameters live in one flat vector of doubles; matrices are row-major
// views into it. That keeps Adam, finite-difference checks and checkpoints
// simple loops over a single buffer.

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "custpred/encode.hpp"
#include "custpred/graph.hpp"

namespace custpred {

enum class Task : std::uint8_t { goal, type, trajectory };
std::string_view to_string(Task t);
std::optional<Task> task_from_string(std::string_view s);

struct TaskSpec {
  Task task = Task::goal;
  int n_h = 20;  // history length
  int n_f = 1;   // future horizon (trajectory)
  void validate() const;
};

// Where the GNN readout enters the network: `step` feeds each step's readout
// into the LSTM input and the final step's readout into the head; `final`
// runs the GNN once on the whole window and only feeds the head.
enum class GnnFusion : std::uint8_t { step, final };
std::string_view to_string(GnnFusion f);
std::optional<GnnFusion> gnn_fusion_from_string(std::string_view s);

// Sizes of the three type-prediction softmax groups: income, fail, digital.
inline constexpr std::array<int, 3> kTypeGroups = {4, 3, 3};

struct ModelDims {
  Task task = Task::goal;
  EncodingMode mode = EncodingMode::bow;
  int vocab = 0;  // including OOV
  int hidden = 64;
  int gnn_hidden = 16;
  int gnn_rounds = 2;
  GnnFusion fusion = GnnFusion::step;
  int nodes = 0;  // graph mode only

  bool graph() const { return mode == EncodingMode::graph; }
  int lstm_input() const;
  int head_input() const;
  int output() const;
  void validate() const;  // throws DimError
  bool operator==(const ModelDims&) const = default;
};

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixView = Eigen::Map<RowMatrix>;
using ConstMatrixView = Eigen::Map<const RowMatrix>;
using VectorView = Eigen::Map<Eigen::VectorXd>;
using ConstVectorView = Eigen::Map<const Eigen::VectorXd>;

// Parameter (or gradient) tensor tree over one flat buffer.
//   lstm.wx (4H x in)  gate rows ordered input, forget, cell, output
//   lstm.wh (4H x H), lstm.b (4H)
//   gnn.w[k], gnn.u[k] (G x in_k), gnn.b[k] (G)   for k < rounds, in_0 = 4
//   gnn.readout (G x G), gnn.readout_b (G)
//   head.w (out x head_in), head.b (out)
class ModelParams {
 public:
  ModelParams() = default;
  explicit ModelParams(const ModelDims& dims);  // zero-filled

  const ModelDims& dims() const { return dims_; }
  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  std::size_t size() const { return values_.size(); }
  void set_zero();

  MatrixView lstm_wx() { return mat(lstm_wx_); }
  MatrixView lstm_wh() { return mat(lstm_wh_); }
  VectorView lstm_b() { return vec(lstm_b_); }
  MatrixView gnn_w(int k) { return mat(gnn_w_.at(k)); }
  MatrixView gnn_u(int k) { return mat(gnn_u_.at(k)); }
  VectorView gnn_b(int k) { return vec(gnn_b_.at(k)); }
  MatrixView readout() { return mat(readout_); }
  VectorView readout_b() { return vec(readout_b_); }
  MatrixView head_w() { return mat(head_w_); }
  VectorView head_b() { return vec(head_b_); }

  ConstMatrixView lstm_wx() const { return mat(lstm_wx_); }
  ConstMatrixView lstm_wh() const { return mat(lstm_wh_); }
  ConstVectorView lstm_b() const { return vec(lstm_b_); }
  ConstMatrixView gnn_w(int k) const { return mat(gnn_w_.at(k)); }
  ConstMatrixView gnn_u(int k) const { return mat(gnn_u_.at(k)); }
  ConstVectorView gnn_b(int k) const { return vec(gnn_b_.at(k)); }
  ConstMatrixView readout() const { return mat(readout_); }
  ConstVectorView readout_b() const { return vec(readout_b_); }
  ConstMatrixView head_w() const { return mat(head_w_); }
  ConstVectorView head_b() const { return vec(head_b_); }

  bool same_shape(const ModelParams& o) const { return dims_ == o.dims_ && size() == o.size(); }
  bool operator==(const ModelParams& o) const { return dims_ == o.dims_ && values_ == o.values_; }

 private:
  struct Block {
    std::size_t offset = 0;
    int rows = 0;
    int cols = 1;
  };
  Block add(int rows, int cols);
  MatrixView mat(const Block& b) { return MatrixView(values_.data() + b.offset, b.rows, b.cols); }
  ConstMatrixView mat(const Block& b) const { return ConstMatrixView(values_.data() + b.offset, b.rows, b.cols); }
  VectorView vec(const Block& b) { return VectorView(values_.data() + b.offset, b.rows); }
  ConstVectorView vec(const Block& b) const { return ConstVectorView(values_.data() + b.offset, b.rows); }

  ModelDims dims_;
  std::vector<double> values_;
  std::size_t cursor_ = 0;
  Block lstm_wx_, lstm_wh_, lstm_b_, readout_, readout_b_, head_w_, head_b_;
  std::vector<Block> gnn_w_, gnn_u_, gnn_b_;
};

using Gradients = ModelParams;

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::int64_t t = 0;
};

struct AdamConfig {
  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Dense neighbour structure of a state graph, as seen by the GNN.
struct GraphContext {
  int nodes = 0;
  std::vector<std::vector<int>> neighbours;
  static GraphContext from(const StateGraph& g);
};

// Prediction targets for one window; only the task's field is used.
struct Target {
  std::array<double, 2> goal{};  // check_info, change_info as 0/1
  std::array<int, 3> type{};     // income, fail behavior, digital behavior
  int next_token = 0;
};

// Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)) with fan_in the column count;
// biases 0 except the forget gate bias, which is 1.
ModelParams init_params(std::uint64_t seed, const ModelDims& dims);

struct LstmState {
  Eigen::VectorXd h;
  Eigen::VectorXd c;
};
// One dense LSTM step; x has lstm_input() entries.
LstmState lstm_step(const ModelParams& p, const Eigen::VectorXd& x, const Eigen::VectorXd& h,
                    const Eigen::VectorXd& c);

// `rounds` message-passing rounds of
//   node <- tanh(W * own + U * mean(neighbour states) + b)
// followed by readout * mean(node states) + readout_b.
Eigen::VectorXd gnn_encode(const ModelParams& p, const GraphContext& g, const NodeFeatures& feats);

Eigen::VectorXd forward(const ModelParams& p, const EncodedWindow& w, const GraphContext* g = nullptr);

// Cross-entropy losses on logits clamped to [-30, 30]. When `dlogits` is
// given it receives the gradient with respect to the unclamped logits.
inline constexpr double kLogitClamp = 30.0;
double loss(const Eigen::VectorXd& logits, const Target& y, Task task, Eigen::VectorXd* dlogits = nullptr);

// Adds d(loss)/d(params) into `grads` and returns the loss; `logits`, when
// given, receives the forward output.
double backward_into(const ModelParams& p, const EncodedWindow& w, const Target& y, Gradients& grads,
                     const GraphContext* g = nullptr, Eigen::VectorXd* logits = nullptr);
std::pair<double, Gradients> backward(const ModelParams& p, const EncodedWindow& w, const Target& y,
                                      const GraphContext* g = nullptr);

AdamState make_adam_state(const ModelParams& p);
void adam_step(ModelParams& p, const Gradients& g, AdamState& s, const AdamConfig& cfg = {});

// Softmax over each type group / the token distribution.
Eigen::VectorXd softmax(const Eigen::VectorXd& logits);
// Lowest index among maxima.
int argmax(std::span<const double> v);
int argmax(const Eigen::VectorXd& v);
std::array<int, 3> predict_type(const Eigen::VectorXd& logits);

// The pair appended after `last` when the model predicts `token`: its state
// is `last` folded forward (unchanged if that move is illegal) and its action
// the token's decoded event; OOV becomes an operation on `<oov>`.
StateActionPair next_pair(const StateActionPair& last, int token, const Vocab& v);

// Greedy autoregressive decoding of k tokens. Each prediction is appended as a
// state-action pair (its state folded from the previous pair) and the window
// slides by one before the next prediction. With `full_history`, graph
// indicators also count `before` and every pair that slid out of the window.
std::vector<int> rollout(const ModelParams& p, std::span<const StateActionPair> history, int k, const Vocab& v,
                         const StateGraph* graph = nullptr, const GraphContext* ctx = nullptr,
                         bool full_history = false, std::span<const StateActionPair> before = {});

// Binary checkpoint, little-endian:
//   "CPMODEL1"                                  8 bytes
//   u32 version (=1)
//   u32 task, mode, fusion, vocab, hidden, gnn_hidden, gnn_rounds, nodes, n_h, n_f
//   u64 parameter count
//   f64 x count                                 flat buffer, row-major blocks
//   u64 FNV-1a of every preceding byte
void write_checkpoint(std::ostream& out, const ModelParams& p, const TaskSpec& spec);
std::pair<ModelParams, TaskSpec> read_checkpoint(std::istream& in);
void save_checkpoint(const std::string& path, const ModelParams& p, const TaskSpec& spec);
std::pair<ModelParams, TaskSpec> load_checkpoint(const std::string& path);

}  // namespace custpred
