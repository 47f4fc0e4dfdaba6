#include "custpred/nn.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "custpred/common.hpp"

namespace custpred {

std::string_view to_string(Task t) {
  switch (t) {
    case Task::goal: return "goal";
    case Task::type: return "type";
    case Task::trajectory: return "trajectory";
  }
  return "?";
}

std::optional<Task> task_from_string(std::string_view s) {
  if (s == "goal") return Task::goal;
  if (s == "type") return Task::type;
  if (s == "trajectory") return Task::trajectory;
  return std::nullopt;
}

std::string_view to_string(GnnFusion f) { return f == GnnFusion::step ? "step" : "final"; }

std::optional<GnnFusion> gnn_fusion_from_string(std::string_view s) {
  if (s == "step") return GnnFusion::step;
  if (s == "final") return GnnFusion::final;
  return std::nullopt;
}

void TaskSpec::validate() const {
  if (n_h < 1) throw DimError("task spec: n_h must be >= 1");
  if (n_f < 1) throw DimError("task spec: n_f must be >= 1");
}

int ModelDims::lstm_input() const {
  if (!graph()) return 2 * vocab;
  return fusion == GnnFusion::step ? vocab + gnn_hidden : vocab;
}

int ModelDims::head_input() const { return graph() ? hidden + gnn_hidden : hidden; }

int ModelDims::output() const {
  switch (task) {
    case Task::goal: return 2;
    case Task::type: return kTypeGroups[0] + kTypeGroups[1] + kTypeGroups[2];
    case Task::trajectory: return vocab;
  }
  return 0;
}

void ModelDims::validate() const {
  if (vocab < 1) throw DimError("model dims: vocab must be >= 1");
  if (hidden < 1) throw DimError("model dims: hidden must be >= 1");
  if (graph()) {
    if (gnn_hidden < 1) throw DimError("model dims: gnn_hidden must be >= 1");
    if (gnn_rounds < 1) throw DimError("model dims: gnn_rounds must be >= 1");
    if (nodes < 1) throw EmptyGraph("model dims: graph mode needs a non-empty state graph");
  }
}

ModelParams::Block ModelParams::add(int rows, int cols) {
  Block b{cursor_, rows, cols};
  cursor_ += static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols);
  return b;
}

ModelParams::ModelParams(const ModelDims& dims) : dims_(dims) {
  dims.validate();
  const int h4 = 4 * dims.hidden;
  lstm_wx_ = add(h4, dims.lstm_input());
  lstm_wh_ = add(h4, dims.hidden);
  lstm_b_ = add(h4, 1);
  if (dims.graph()) {
    for (int k = 0; k < dims.gnn_rounds; ++k) {
      int in = k == 0 ? kNodeFeatureDim : dims.gnn_hidden;
      gnn_w_.push_back(add(dims.gnn_hidden, in));
      gnn_u_.push_back(add(dims.gnn_hidden, in));
      gnn_b_.push_back(add(dims.gnn_hidden, 1));
    }
    readout_ = add(dims.gnn_hidden, dims.gnn_hidden);
    readout_b_ = add(dims.gnn_hidden, 1);
  }
  head_w_ = add(dims.output(), dims.head_input());
  head_b_ = add(dims.output(), 1);
  values_.assign(cursor_, 0.0);
}

void ModelParams::set_zero() { std::fill(values_.begin(), values_.end(), 0.0); }

GraphContext GraphContext::from(const StateGraph& g) {
  if (g.node_count() == 0) throw EmptyGraph("graph context: state graph has no nodes");
  return GraphContext{static_cast<int>(g.node_count()), g.neighbours()};
}

ModelParams init_params(std::uint64_t seed, const ModelDims& dims) {
  ModelParams p(dims);
  Rng rng(seed);
  auto fill = [&](auto m) {
    double a = 1.0 / std::sqrt(static_cast<double>(m.cols()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = (2.0 * rng.uniform() - 1.0) * a;
  };
  fill(p.lstm_wx());
  fill(p.lstm_wh());
  p.lstm_b().segment(dims.hidden, dims.hidden).setOnes();
  if (dims.graph()) {
    for (int k = 0; k < dims.gnn_rounds; ++k) {
      fill(p.gnn_w(k));
      fill(p.gnn_u(k));
    }
    fill(p.readout());
  }
  fill(p.head_w());
  return p;
}

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Eigen::VectorXd sigmoid(const Eigen::VectorXd& x) {
  return x.unaryExpr([](double v) { return sigmoid(v); });
}

// Mean of neighbour rows; rows of isolated nodes stay zero.
Eigen::MatrixXd neighbour_mean(const GraphContext& g, const Eigen::MatrixXd& x) {
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(x.rows(), x.cols());
  for (int v = 0; v < g.nodes; ++v) {
    const auto& nb = g.neighbours[static_cast<std::size_t>(v)];
    if (nb.empty()) continue;
    for (int u : nb) out.row(v) += x.row(u);
    out.row(v) /= static_cast<double>(nb.size());
  }
  return out;
}

// Transpose of neighbour_mean as a linear map.
void neighbour_mean_transpose_add(const GraphContext& g, const Eigen::MatrixXd& y, Eigen::MatrixXd& out) {
  for (int v = 0; v < g.nodes; ++v) {
    const auto& nb = g.neighbours[static_cast<std::size_t>(v)];
    if (nb.empty()) continue;
    double inv = 1.0 / static_cast<double>(nb.size());
    for (int u : nb) out.row(u) += inv * y.row(v);
  }
}

struct GnnCache {
  std::vector<Eigen::MatrixXd> in;   // input to each round
  std::vector<Eigen::MatrixXd> agg;  // neighbour means of in[k]
  Eigen::MatrixXd last;              // output of the last round
  Eigen::VectorXd mean;
};

Eigen::VectorXd gnn_forward(const ModelParams& p, const GraphContext& g, const Eigen::MatrixXd& feats,
                            GnnCache* cache) {
  const ModelDims& d = p.dims();
  if (feats.rows() != g.nodes || feats.cols() != kNodeFeatureDim || g.nodes != d.nodes)
    throw DimError("gnn: node feature matrix does not match the graph");
  Eigen::MatrixXd x = feats;
  for (int k = 0; k < d.gnn_rounds; ++k) {
    Eigen::MatrixXd m = neighbour_mean(g, x);
    Eigen::MatrixXd pre = x * p.gnn_w(k).transpose() + m * p.gnn_u(k).transpose();
    pre.rowwise() += p.gnn_b(k).transpose();
    if (cache) {
      cache->in.push_back(std::move(x));
      cache->agg.push_back(std::move(m));
    }
    x = pre.array().tanh().matrix();
  }
  Eigen::VectorXd mean = x.colwise().mean().transpose();
  Eigen::VectorXd out = p.readout() * mean + p.readout_b();
  if (cache) {
    cache->last = std::move(x);
    cache->mean = std::move(mean);
  }
  return out;
}

void gnn_backward(const ModelParams& p, const GraphContext& g, const GnnCache& c, const Eigen::VectorXd& dr,
                  Gradients& grads) {
  const ModelDims& d = p.dims();
  grads.readout().noalias() += dr * c.mean.transpose();
  grads.readout_b() += dr;
  Eigen::VectorXd dmean = p.readout().transpose() * dr;
  Eigen::MatrixXd dx = (dmean / static_cast<double>(g.nodes)).transpose().replicate(g.nodes, 1);
  for (int k = d.gnn_rounds - 1; k >= 0; --k) {
    const auto& out = k + 1 < d.gnn_rounds ? c.in[static_cast<std::size_t>(k) + 1] : c.last;
    Eigen::MatrixXd dpre = dx.array() * (1.0 - out.array().square());
    const auto& in = c.in[static_cast<std::size_t>(k)];
    const auto& agg = c.agg[static_cast<std::size_t>(k)];
    grads.gnn_w(k).noalias() += dpre.transpose() * in;
    grads.gnn_u(k).noalias() += dpre.transpose() * agg;
    grads.gnn_b(k) += dpre.colwise().sum().transpose();
    if (k > 0) {
      dx = dpre * p.gnn_w(k);
      neighbour_mean_transpose_add(g, dpre * p.gnn_u(k), dx);
    }
  }
}

struct StepCache {
  Eigen::VectorXd i, f, g, o, c, tanh_c, h;
  Eigen::VectorXd r;  // step-fusion readout
  GnnCache gnn;
};

struct ForwardCache {
  std::vector<StepCache> steps;
  Eigen::VectorXd u;  // head input
  GnnCache final_gnn;
  Eigen::VectorXd logits;
};

void check_window(const ModelParams& p, const EncodedWindow& w, const GraphContext* g) {
  const ModelDims& d = p.dims();
  if (w.steps() == 0) throw DimError("forward: empty window");
  if (w.vocab_size != d.vocab) throw DimError("forward: window vocabulary size does not match the model");
  if (w.mode != d.mode) throw DimError("forward: window encoding mode does not match the model");
  if (d.graph()) {
    if (g == nullptr) throw DimError("forward: graph mode needs a graph context");
    if (g->nodes != d.nodes || w.node_count != d.nodes)
      throw DimError("forward: graph size does not match the model");
    if (w.state_nodes.size() != w.steps() || w.classes.size() != w.steps())
      throw DimError("forward: window lacks graph annotation data");
  }
  for (int t : w.tokens)
    if (t < 0 || t >= d.vocab) throw DimError("forward: token index out of range");
}

void run_forward(const ModelParams& p, const EncodedWindow& w, const GraphContext* g, ForwardCache& fc) {
  check_window(p, w, g);
  const ModelDims& d = p.dims();
  const int H = d.hidden;
  const int V = d.vocab;
  const bool step_fusion = d.graph() && d.fusion == GnnFusion::step;
  auto wx = p.lstm_wx();
  auto wh = p.lstm_wh();
  Eigen::VectorXd h = Eigen::VectorXd::Zero(H);
  Eigen::VectorXd c = Eigen::VectorXd::Zero(H);
  Eigen::VectorXd prefix = Eigen::VectorXd::Zero(4 * H);
  NodeFeatures ann;
  Eigen::VectorXd r;
  fc.steps.resize(w.steps());
  for (std::size_t t = 0; t < w.steps(); ++t) {
    StepCache& sc = fc.steps[t];
    const int tok = w.tokens[t];
    Eigen::VectorXd z = p.lstm_b() + wx.col(tok);
    if (!d.graph()) {
      prefix += wx.col(V + tok);
      z += prefix;
    }
    if (d.graph()) w.advance_annotation(t, ann);
    if (step_fusion) {
      sc.gnn = GnnCache{};
      sc.r = gnn_forward(p, *g, ann, &sc.gnn);
      z.noalias() += wx.middleCols(V, d.gnn_hidden) * sc.r;
    }
    z.noalias() += wh * h;
    sc.i = sigmoid(z.segment(0, H));
    sc.f = sigmoid(z.segment(H, H));
    sc.g = z.segment(2 * H, H).array().tanh().matrix();
    sc.o = sigmoid(z.segment(3 * H, H));
    c = sc.f.cwiseProduct(c) + sc.i.cwiseProduct(sc.g);
    sc.c = c;
    sc.tanh_c = c.array().tanh().matrix();
    h = sc.o.cwiseProduct(sc.tanh_c);
    sc.h = h;
  }
  fc.u.resize(d.head_input());
  fc.u.head(H) = h;
  if (d.graph()) {
    if (step_fusion) {
      fc.u.tail(d.gnn_hidden) = fc.steps.back().r;
    } else {
      fc.final_gnn = GnnCache{};
      fc.u.tail(d.gnn_hidden) = gnn_forward(p, *g, ann, &fc.final_gnn);
    }
  }
  fc.logits = p.head_w() * fc.u + p.head_b();
}

double log_sum_exp(const Eigen::VectorXd& z) {
  double m = z.maxCoeff();
  return m + std::log((z.array() - m).exp().sum());
}

// Softmax cross-entropy of one group; writes d/dz into `dz`.
double softmax_xent(const Eigen::VectorXd& z, int label, Eigen::Ref<Eigen::VectorXd> dz) {
  if (label < 0 || label >= z.size()) throw DimError("loss: class label out of range");
  double lse = log_sum_exp(z);
  dz = (z.array() - lse).exp().matrix();
  dz(label) -= 1.0;
  return lse - z(label);
}

}  // namespace

LstmState lstm_step(const ModelParams& p, const Eigen::VectorXd& x, const Eigen::VectorXd& h,
                    const Eigen::VectorXd& c) {
  const int H = p.dims().hidden;
  if (x.size() != p.dims().lstm_input() || h.size() != H || c.size() != H)
    throw DimError("lstm_step: input or state size does not match the model");
  Eigen::VectorXd z = p.lstm_wx() * x + p.lstm_wh() * h + p.lstm_b();
  Eigen::VectorXd i = sigmoid(z.segment(0, H));
  Eigen::VectorXd f = sigmoid(z.segment(H, H));
  Eigen::VectorXd g = z.segment(2 * H, H).array().tanh().matrix();
  Eigen::VectorXd o = sigmoid(z.segment(3 * H, H));
  LstmState s;
  s.c = f.cwiseProduct(c) + i.cwiseProduct(g);
  s.h = o.cwiseProduct(s.c.array().tanh().matrix());
  return s;
}

Eigen::VectorXd gnn_encode(const ModelParams& p, const GraphContext& g, const NodeFeatures& feats) {
  if (!p.dims().graph()) throw DimError("gnn_encode: model has no graph component");
  if (g.nodes == 0) throw EmptyGraph("gnn_encode: empty graph");
  return gnn_forward(p, g, feats, nullptr);
}

Eigen::VectorXd forward(const ModelParams& p, const EncodedWindow& w, const GraphContext* g) {
  ForwardCache fc;
  run_forward(p, w, g, fc);
  return fc.logits;
}

double loss(const Eigen::VectorXd& logits, const Target& y, Task task, Eigen::VectorXd* dlogits) {
  Eigen::VectorXd z = logits.cwiseMax(-kLogitClamp).cwiseMin(kLogitClamp);
  Eigen::VectorXd dz = Eigen::VectorXd::Zero(z.size());
  double total = 0.0;
  switch (task) {
    case Task::goal: {
      if (z.size() != 2) throw DimError("loss: goal head needs 2 logits");
      for (int j = 0; j < 2; ++j) {
        // softplus(z) - y z, computed stably
        double v = z(j);
        total += std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))) - y.goal[static_cast<std::size_t>(j)] * v;
        dz(j) = sigmoid(v) - y.goal[static_cast<std::size_t>(j)];
      }
      break;
    }
    case Task::type: {
      int n = kTypeGroups[0] + kTypeGroups[1] + kTypeGroups[2];
      if (z.size() != n) throw DimError("loss: type head needs 10 logits");
      int off = 0;
      for (std::size_t k = 0; k < 3; ++k) {
        int len = kTypeGroups[k];
        total += softmax_xent(z.segment(off, len), y.type[k], dz.segment(off, len));
        off += len;
      }
      break;
    }
    case Task::trajectory:
      total = softmax_xent(z, y.next_token, dz);
      break;
  }
  if (dlogits) {
    for (Eigen::Index j = 0; j < z.size(); ++j)
      if (std::abs(logits(j)) > kLogitClamp) dz(j) = 0.0;
    *dlogits = std::move(dz);
  }
  return total;
}

double backward_into(const ModelParams& p, const EncodedWindow& w, const Target& y, Gradients& grads,
                     const GraphContext* g, Eigen::VectorXd* logits) {
  if (!grads.same_shape(p)) throw DimError("backward: gradient buffer shape does not match the parameters");
  ForwardCache fc;
  run_forward(p, w, g, fc);
  const ModelDims& d = p.dims();
  const int H = d.hidden;
  const int V = d.vocab;
  const bool step_fusion = d.graph() && d.fusion == GnnFusion::step;
  Eigen::VectorXd dl;
  double value = loss(fc.logits, y, d.task, &dl);
  if (logits) *logits = fc.logits;

  grads.head_w().noalias() += dl * fc.u.transpose();
  grads.head_b() += dl;
  Eigen::VectorXd du = p.head_w().transpose() * dl;
  Eigen::VectorXd dh = du.head(H);
  Eigen::VectorXd dr_head;
  if (d.graph()) {
    dr_head = du.tail(d.gnn_hidden);
    if (!step_fusion) gnn_backward(p, *g, fc.final_gnn, dr_head, grads);
  }

  auto wx = p.lstm_wx();
  auto wh = p.lstm_wh();
  auto gwx = grads.lstm_wx();
  auto gwh = grads.lstm_wh();
  auto gb = grads.lstm_b();
  Eigen::VectorXd dc = Eigen::VectorXd::Zero(H);
  Eigen::VectorXd suffix = Eigen::VectorXd::Zero(4 * H);
  Eigen::VectorXd dz(4 * H);
  const Eigen::VectorXd zeros = Eigen::VectorXd::Zero(H);
  for (std::size_t t = w.steps(); t-- > 0;) {
    const StepCache& sc = fc.steps[t];
    const Eigen::VectorXd& c_prev = t > 0 ? fc.steps[t - 1].c : zeros;
    const Eigen::VectorXd& h_prev = t > 0 ? fc.steps[t - 1].h : zeros;
    Eigen::ArrayXd dout = dh.array() * sc.tanh_c.array();
    dc.array() += dh.array() * sc.o.array() * (1.0 - sc.tanh_c.array().square());
    Eigen::ArrayXd di = dc.array() * sc.g.array();
    Eigen::ArrayXd dg = dc.array() * sc.i.array();
    Eigen::ArrayXd df = dc.array() * c_prev.array();
    dz.segment(0, H) = (di * sc.i.array() * (1.0 - sc.i.array())).matrix();
    dz.segment(H, H) = (df * sc.f.array() * (1.0 - sc.f.array())).matrix();
    dz.segment(2 * H, H) = (dg * (1.0 - sc.g.array().square())).matrix();
    dz.segment(3 * H, H) = (dout * sc.o.array() * (1.0 - sc.o.array())).matrix();
    dc = dc.cwiseProduct(sc.f);

    const int tok = w.tokens[t];
    gb += dz;
    gwx.col(tok) += dz;
    if (!d.graph()) {
      suffix += dz;
      gwx.col(V + tok) += suffix;
    }
    if (step_fusion) {
      gwx.middleCols(V, d.gnn_hidden).noalias() += dz * sc.r.transpose();
      Eigen::VectorXd dr = wx.middleCols(V, d.gnn_hidden).transpose() * dz;
      if (t + 1 == w.steps()) dr += dr_head;
      gnn_backward(p, *g, sc.gnn, dr, grads);
    }
    if (t > 0) gwh.noalias() += dz * h_prev.transpose();
    dh = wh.transpose() * dz;
  }
  return value;
}

std::pair<double, Gradients> backward(const ModelParams& p, const EncodedWindow& w, const Target& y,
                                      const GraphContext* g) {
  Gradients grads(p.dims());
  double l = backward_into(p, w, y, grads, g);
  return {l, std::move(grads)};
}

AdamState make_adam_state(const ModelParams& p) {
  AdamState s;
  s.m.assign(p.size(), 0.0);
  s.v.assign(p.size(), 0.0);
  return s;
}

void adam_step(ModelParams& p, const Gradients& g, AdamState& s, const AdamConfig& cfg) {
  if (!g.same_shape(p)) throw DimError("adam: gradient shape does not match the parameters");
  if (s.m.empty() && s.v.empty() && s.t == 0) s = make_adam_state(p);
  if (s.m.size() != p.size() || s.v.size() != p.size()) throw DimError("adam: state shape does not match the parameters");
  ++s.t;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(s.t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(s.t));
  auto pv = p.values();
  auto gv = g.values();
  for (std::size_t j = 0; j < pv.size(); ++j) {
    s.m[j] = cfg.beta1 * s.m[j] + (1.0 - cfg.beta1) * gv[j];
    s.v[j] = cfg.beta2 * s.v[j] + (1.0 - cfg.beta2) * gv[j] * gv[j];
    double mhat = s.m[j] / c1;
    double vhat = s.v[j] / c2;
    pv[j] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
  }
}

Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
  Eigen::VectorXd e = (logits.array() - logits.maxCoeff()).exp().matrix();
  return e / e.sum();
}

int argmax(std::span<const double> v) {
  if (v.empty()) throw DimError("argmax: empty vector");
  int best = 0;
  for (std::size_t j = 1; j < v.size(); ++j)
    if (v[j] > v[static_cast<std::size_t>(best)]) best = static_cast<int>(j);
  return best;
}

int argmax(const Eigen::VectorXd& v) { return argmax(std::span<const double>(v.data(), static_cast<std::size_t>(v.size()))); }

std::array<int, 3> predict_type(const Eigen::VectorXd& logits) {
  std::array<int, 3> out{};
  std::size_t off = 0;
  for (std::size_t k = 0; k < 3; ++k) {
    out[k] = argmax(std::span<const double>(logits.data() + off, static_cast<std::size_t>(kTypeGroups[k])));
    off += static_cast<std::size_t>(kTypeGroups[k]);
  }
  return out;
}

StateActionPair next_pair(const StateActionPair& last, int token, const Vocab& v) {
  SessionState state = last.state;
  try {
    state = fold_state(last.state, pair_event(last));
  } catch (const IllegalTransition&) {
  }
  StateActionPair next{state, last.channel, Operation{std::string(kOovTarget)}};
  if (const auto& ev = v.decode(token)) {
    next.channel = ev->channel;
    next.action = ev->kind;
  }
  return next;
}

std::vector<int> rollout(const ModelParams& p, std::span<const StateActionPair> history, int k, const Vocab& v,
                         const StateGraph* graph, const GraphContext* ctx, bool full_history,
                         std::span<const StateActionPair> before) {
  const ModelDims& d = p.dims();
  if (d.task != Task::trajectory) throw DimError("rollout: model is not a trajectory model");
  if (k < 1) throw DimError("rollout: k must be >= 1");
  if (history.empty()) throw DimError("rollout: empty history");
  if (d.graph() && (graph == nullptr || ctx == nullptr)) throw DimError("rollout: graph mode needs the state graph");
  std::vector<StateActionPair> seq;
  if (full_history) seq.assign(before.begin(), before.end());
  seq.insert(seq.end(), history.begin(), history.end());
  const std::size_t n = history.size();
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(k));
  for (int step = 0; step < k; ++step) {
    std::span<const StateActionPair> all(seq);
    std::size_t b = all.size() - n;
    std::span<const StateActionPair> prior = full_history ? all.first(b) : std::span<const StateActionPair>{};
    EncodedWindow w = encode_window(all.subspan(b), v, graph, d.mode, prior);
    int tok = argmax(forward(p, w, ctx));
    out.push_back(tok);
    if (step + 1 == k) break;
    seq.push_back(next_pair(seq.back(), tok, v));
  }
  return out;
}

namespace {

constexpr char kMagic[8] = {'C', 'P', 'M', 'O', 'D', 'E', 'L', '1'};
constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}
  void bytes(const void* data, std::size_t n) {
    out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
    hash_.add_bytes(data, n);
  }
  template <class T>
  void le(T v) {
    unsigned char buf[sizeof(T)];
    std::uint64_t bits;
    if constexpr (std::is_same_v<T, double>) {
      bits = std::bit_cast<std::uint64_t>(v);
    } else {
      bits = static_cast<std::uint64_t>(v);
    }
    for (std::size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<unsigned char>(bits >> (8 * i));
    bytes(buf, sizeof(T));
  }
  std::uint64_t hash() const { return hash_.value(); }

 private:
  std::ostream& out_;
  Fnv1a hash_;
};

class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}
  void bytes(void* data, std::size_t n) {
    in_.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) throw DataError("checkpoint: truncated file");
    hash_.add_bytes(data, n);
  }
  template <class T>
  T le() {
    unsigned char buf[sizeof(T)];
    bytes(buf, sizeof(T));
    std::uint64_t bits = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) bits |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    if constexpr (std::is_same_v<T, double>) {
      return std::bit_cast<double>(bits);
    } else {
      return static_cast<T>(bits);
    }
  }
  std::uint64_t hash() const { return hash_.value(); }

 private:
  std::istream& in_;
  Fnv1a hash_;
};

}  // namespace

void write_checkpoint(std::ostream& out, const ModelParams& p, const TaskSpec& spec) {
  const ModelDims& d = p.dims();
  Writer w(out);
  w.bytes(kMagic, sizeof kMagic);
  w.le<std::uint32_t>(kVersion);
  for (std::uint32_t v : {static_cast<std::uint32_t>(d.task), static_cast<std::uint32_t>(d.mode),
                          static_cast<std::uint32_t>(d.fusion), static_cast<std::uint32_t>(d.vocab),
                          static_cast<std::uint32_t>(d.hidden), static_cast<std::uint32_t>(d.gnn_hidden),
                          static_cast<std::uint32_t>(d.gnn_rounds), static_cast<std::uint32_t>(d.nodes),
                          static_cast<std::uint32_t>(spec.n_h), static_cast<std::uint32_t>(spec.n_f)})
    w.le<std::uint32_t>(v);
  w.le<std::uint64_t>(p.size());
  for (double x : p.values()) w.le<double>(x);
  std::uint64_t h = w.hash();
  w.le<std::uint64_t>(h);
}

std::pair<ModelParams, TaskSpec> read_checkpoint(std::istream& in) {
  Reader r(in);
  char magic[8];
  r.bytes(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof magic) != 0) throw DataError("checkpoint: bad magic");
  if (r.le<std::uint32_t>() != kVersion) throw DataError("checkpoint: unsupported version");
  std::uint32_t f[10];
  for (auto& x : f) x = r.le<std::uint32_t>();
  if (f[0] > 2 || f[1] > 1 || f[2] > 1) throw DataError("checkpoint: bad header");
  ModelDims d;
  d.task = static_cast<Task>(f[0]);
  d.mode = static_cast<EncodingMode>(f[1]);
  d.fusion = static_cast<GnnFusion>(f[2]);
  d.vocab = static_cast<int>(f[3]);
  d.hidden = static_cast<int>(f[4]);
  d.gnn_hidden = static_cast<int>(f[5]);
  d.gnn_rounds = static_cast<int>(f[6]);
  d.nodes = static_cast<int>(f[7]);
  TaskSpec spec{d.task, static_cast<int>(f[8]), static_cast<int>(f[9])};
  ModelParams p;
  try {
    p = ModelParams(d);
    spec.validate();
  } catch (const DimError& e) {
    throw DataError(std::string("checkpoint: ") + e.what());
  }
  if (r.le<std::uint64_t>() != p.size()) throw DataError("checkpoint: parameter count does not match the header");
  for (double& x : p.values()) {
    x = r.le<double>();
    if (!std::isfinite(x)) throw DataError("checkpoint: non-finite parameter");
  }
  std::uint64_t expected = r.hash();
  if (r.le<std::uint64_t>() != expected) throw DataError("checkpoint: checksum mismatch");
  return {std::move(p), spec};
}

void save_checkpoint(const std::string& path, const ModelParams& p, const TaskSpec& spec) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  write_checkpoint(out, p, spec);
  if (!out) throw IoError("error writing " + path);
}

std::pair<ModelParams, TaskSpec> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path);
  return read_checkpoint(in);
}

}  // namespace custpred
