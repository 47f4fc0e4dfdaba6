#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "custpred/nn.hpp"
#include "gradcheck.hpp"

using namespace custpred;
using namespace custpred::gradcheck;

namespace {

double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Plain elementwise LSTM step reading weights one scalar at a time.
void oracle_lstm(const ModelParams& p, const std::vector<double>& x, const std::vector<double>& h,
                 const std::vector<double>& c, std::vector<double>& h_out, std::vector<double>& c_out) {
  const int H = p.dims().hidden;
  auto gate = [&](int block, int j) {
    int row = block * H + j;
    double z = p.lstm_b()(row);
    for (std::size_t k = 0; k < x.size(); ++k) z += p.lstm_wx()(row, static_cast<Eigen::Index>(k)) * x[k];
    for (int k = 0; k < H; ++k) z += p.lstm_wh()(row, k) * h[static_cast<std::size_t>(k)];
    return z;
  };
  h_out.assign(static_cast<std::size_t>(H), 0.0);
  c_out.assign(static_cast<std::size_t>(H), 0.0);
  for (int j = 0; j < H; ++j) {
    double i = sig(gate(0, j));
    double f = sig(gate(1, j));
    double g = std::tanh(gate(2, j));
    double o = sig(gate(3, j));
    auto u = static_cast<std::size_t>(j);
    c_out[u] = f * c[u] + i * g;
    h_out[u] = o * std::tanh(c_out[u]);
  }
}

}  // namespace

TEST(Dims, HeadSizes) {
  EXPECT_EQ(small_dims(Task::goal, EncodingMode::bow).output(), 2);
  EXPECT_EQ(small_dims(Task::type, EncodingMode::bow).output(), 10);
  EXPECT_EQ(kTypeGroups, (std::array<int, 3>{4, 3, 3}));
  EXPECT_EQ(small_dims(Task::trajectory, EncodingMode::bow).output(), 6);
  EXPECT_EQ(small_dims(Task::goal, EncodingMode::bow).lstm_input(), 12);
  EXPECT_EQ(small_dims(Task::goal, EncodingMode::graph).lstm_input(), 10);
  EXPECT_EQ(small_dims(Task::goal, EncodingMode::graph, GnnFusion::final).lstm_input(), 6);
  EXPECT_EQ(small_dims(Task::goal, EncodingMode::graph).head_input(), 8);
}

TEST(Dims, InconsistentDimsRejected) {
  ModelDims d = small_dims(Task::goal, EncodingMode::bow);
  d.hidden = 0;
  EXPECT_THROW(ModelParams{d}, DimError);
  d = small_dims(Task::goal, EncodingMode::graph);
  d.nodes = 0;
  EXPECT_THROW(ModelParams{d}, EmptyGraph);
  EXPECT_THROW((TaskSpec{Task::goal, 0, 1}.validate()), DimError);
  EXPECT_THROW((TaskSpec{Task::trajectory, 20, 0}.validate()), DimError);
}

TEST(Init, DeterministicAndForgetBias) {
  ModelDims d = small_dims(Task::goal, EncodingMode::graph);
  ModelParams a = init_params(5, d);
  ModelParams b = init_params(5, d);
  EXPECT_EQ(a, b);
  EXPECT_FALSE(a == init_params(6, d));
  for (int j = 0; j < d.hidden; ++j) {
    EXPECT_EQ(a.lstm_b()(j), 0.0);
    EXPECT_EQ(a.lstm_b()(d.hidden + j), 1.0);
    EXPECT_EQ(a.lstm_b()(2 * d.hidden + j), 0.0);
    EXPECT_EQ(a.lstm_b()(3 * d.hidden + j), 0.0);
  }
  double bound = 1.0 / std::sqrt(static_cast<double>(d.lstm_input()));
  EXPECT_LE(a.lstm_wx().cwiseAbs().maxCoeff(), bound);
}

TEST(Init, WeightMeanNearZero) {
  ModelDims d;
  d.vocab = 600;
  d.hidden = 40;  // wx alone is 160 x 1200 = 192000 entries
  ModelParams p = init_params(11, d);
  auto wx = p.lstm_wx();
  double a = 1.0 / std::sqrt(static_cast<double>(wx.cols()));
  double n = static_cast<double>(wx.size());
  double sigma = a / std::sqrt(3.0) / std::sqrt(n);  // sd of the sample mean of U(-a, a)
  EXPECT_GT(n, 1e5);
  EXPECT_LT(std::abs(wx.mean()), 3 * sigma);
}

TEST(Lstm, ZeroWeights) {
  ModelDims d = small_dims(Task::goal, EncodingMode::bow);
  ModelParams p(d);
  Eigen::VectorXd x = Eigen::VectorXd::Ones(d.lstm_input());
  Eigen::VectorXd z = Eigen::VectorXd::Zero(4);
  auto s = lstm_step(p, x, z, z);
  EXPECT_EQ(s.h, z);
  EXPECT_EQ(s.c, z);
  Eigen::VectorXd c0(4);
  c0 << 1.0, -2.0, 0.5, 4.0;
  s = lstm_step(p, x, z, c0);
  for (int j = 0; j < 4; ++j) EXPECT_DOUBLE_EQ(s.c(j), 0.5 * c0(j));
}

TEST(Lstm, MatchesScalarOracle) {
  ModelDims d = small_dims(Task::goal, EncodingMode::bow);
  Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    ModelParams p(d);
    randomize(p, rng, 0.8);
    std::vector<double> x(static_cast<std::size_t>(d.lstm_input())), h(4), c(4);
    for (auto* v : {&x, &h, &c})
      for (double& e : *v) e = 2.0 * rng.uniform() - 1.0;
    std::vector<double> ho, co;
    oracle_lstm(p, x, h, c, ho, co);
    auto s = lstm_step(p, Eigen::Map<Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size())),
                       Eigen::Map<Eigen::VectorXd>(h.data(), 4), Eigen::Map<Eigen::VectorXd>(c.data(), 4));
    for (int j = 0; j < 4; ++j) {
      EXPECT_NEAR(s.h(j), ho[static_cast<std::size_t>(j)], 1e-12);
      EXPECT_NEAR(s.c(j), co[static_cast<std::size_t>(j)], 1e-12);
    }
  }
}

TEST(Lstm, DimMismatch) {
  ModelParams p(small_dims(Task::goal, EncodingMode::bow));
  Eigen::VectorXd z = Eigen::VectorXd::Zero(4);
  EXPECT_THROW(lstm_step(p, Eigen::VectorXd::Zero(3), z, z), DimError);
}

TEST(Gnn, ZeroFeaturesZeroBiases) {
  ModelDims d = small_dims(Task::goal, EncodingMode::graph);
  ModelParams p = init_params(1, d);
  auto r = gnn_encode(p, small_graph(), NodeFeatures::Zero(4, 4));
  EXPECT_EQ(r, Eigen::VectorXd::Zero(4));
}

TEST(Gnn, SingleIsolatedNode) {
  ModelDims d = small_dims(Task::goal, EncodingMode::graph);
  d.nodes = 1;
  d.gnn_rounds = 1;
  ModelParams p(d);
  Rng rng(9);
  randomize(p, rng, 0.7);
  NodeFeatures f(1, 4);
  f << 1, 1, 0, 1;
  Eigen::VectorXd hid = (p.gnn_w(0) * f.row(0).transpose() + p.gnn_b(0)).array().tanh().matrix();
  Eigen::VectorXd expect = p.readout() * hid + p.readout_b();
  auto r = gnn_encode(p, GraphContext{1, {{}}}, f);
  EXPECT_LT((r - expect).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Gnn, TwoNodeTwoRoundOracle) {
  ModelDims d = small_dims(Task::goal, EncodingMode::graph);
  d.nodes = 2;
  d.gnn_hidden = 2;
  ModelParams p(d);
  Rng rng(21);
  randomize(p, rng, 0.9);
  double f[2][4] = {{1, 1, 0, 0}, {1, 0, 1, 1}};
  NodeFeatures feats(2, 4);
  for (int v = 0; v < 2; ++v)
    for (int k = 0; k < 4; ++k) feats(v, k) = f[v][k];
  // With two connected nodes each node's neighbour mean is the other node.
  double x0[2][4], x1[2][2], x2[2][2];
  for (int v = 0; v < 2; ++v)
    for (int k = 0; k < 4; ++k) x0[v][k] = f[v][k];
  for (int v = 0; v < 2; ++v)
    for (int j = 0; j < 2; ++j) {
      double s = p.gnn_b(0)(j);
      for (int k = 0; k < 4; ++k) s += p.gnn_w(0)(j, k) * x0[v][k] + p.gnn_u(0)(j, k) * x0[1 - v][k];
      x1[v][j] = std::tanh(s);
    }
  for (int v = 0; v < 2; ++v)
    for (int j = 0; j < 2; ++j) {
      double s = p.gnn_b(1)(j);
      for (int k = 0; k < 2; ++k) s += p.gnn_w(1)(j, k) * x1[v][k] + p.gnn_u(1)(j, k) * x1[1 - v][k];
      x2[v][j] = std::tanh(s);
    }
  auto r = gnn_encode(p, GraphContext{2, {{1}, {0}}}, feats);
  for (int j = 0; j < 2; ++j) {
    double s = p.readout_b()(j);
    for (int k = 0; k < 2; ++k) s += p.readout()(j, k) * 0.5 * (x2[0][k] + x2[1][k]);
    EXPECT_NEAR(r(j), s, 1e-14);
  }
}

TEST(Gnn, FeatureShapeChecked) {
  ModelParams p = init_params(1, small_dims(Task::goal, EncodingMode::graph));
  EXPECT_THROW(gnn_encode(p, small_graph(), NodeFeatures::Zero(3, 4)), DimError);
  ModelParams bow = init_params(1, small_dims(Task::goal, EncodingMode::bow));
  EXPECT_THROW(gnn_encode(bow, small_graph(), NodeFeatures::Zero(4, 4)), DimError);
}

TEST(Forward, OutputSizesAndFinite) {
  Rng rng(4);
  GraphContext g = small_graph();
  for (Task task : {Task::goal, Task::type, Task::trajectory})
    for (EncodingMode mode : {EncodingMode::bow, EncodingMode::graph}) {
      ModelDims d = small_dims(task, mode);
      ModelParams p = init_params(2, d);
      auto w = random_window(rng, 5, d);
      auto z = forward(p, w, mode == EncodingMode::graph ? &g : nullptr);
      EXPECT_EQ(z.size(), d.output());
      EXPECT_TRUE(z.allFinite());
    }
}

TEST(Forward, BowMatchesDenseStepRecurrence) {
  Rng rng(8);
  ModelDims d = small_dims(Task::goal, EncodingMode::bow);
  ModelParams p = init_params(3, d);
  auto w = random_window(rng, 7, d);
  Eigen::VectorXd h = Eigen::VectorXd::Zero(4), c = h;
  for (std::size_t t = 0; t < w.steps(); ++t) {
    auto s = lstm_step(p, w.dense_step(t), h, c);
    h = s.h;
    c = s.c;
  }
  Eigen::VectorXd expect = p.head_w() * h + p.head_b();
  EXPECT_LT((forward(p, w) - expect).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Forward, GraphStepInputIsOneHotPlusReadout) {
  Rng rng(10);
  ModelDims d = small_dims(Task::trajectory, EncodingMode::graph);
  ModelParams p = init_params(3, d);
  GraphContext g = small_graph();
  auto w = random_window(rng, 6, d);
  Eigen::VectorXd h = Eigen::VectorXd::Zero(4), c = h, r;
  for (std::size_t t = 0; t < w.steps(); ++t) {
    r = gnn_encode(p, g, w.annotation(t));
    Eigen::VectorXd x(d.lstm_input());
    x << w.one_hot(t), r;
    auto s = lstm_step(p, x, h, c);
    h = s.h;
    c = s.c;
  }
  Eigen::VectorXd u(8);
  u << h, r;
  Eigen::VectorXd expect = p.head_w() * u + p.head_b();
  EXPECT_LT((forward(p, w, &g) - expect).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Forward, ModeAndSizeMismatchRejected) {
  Rng rng(1);
  ModelDims d = small_dims(Task::goal, EncodingMode::graph);
  ModelParams p = init_params(3, d);
  auto w = random_window(rng, 3, d);
  EXPECT_THROW(forward(p, w, nullptr), DimError);
  ModelParams bow = init_params(3, small_dims(Task::goal, EncodingMode::bow));
  EXPECT_THROW(forward(bow, w), DimError);
  EncodedWindow empty;
  empty.vocab_size = 6;
  EXPECT_THROW(forward(bow, empty), DimError);
}

TEST(Loss, ReferenceValues) {
  Target y;
  y.goal = {1, 1};
  EXPECT_NEAR(loss(Eigen::VectorXd::Zero(2), y, Task::goal), 2 * std::log(2.0), 1e-15);
  for (int label = 0; label < 6; ++label) {
    y.next_token = label;
    EXPECT_NEAR(loss(Eigen::VectorXd::Constant(6, 1.7), y, Task::trajectory), std::log(6.0), 1e-14);
  }
  y.type = {3, 0, 2};
  EXPECT_NEAR(loss(Eigen::VectorXd::Zero(10), y, Task::type), std::log(4.0) + 2 * std::log(3.0), 1e-14);
}

TEST(Loss, MatchesDirectFormula) {
  Rng rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    Eigen::VectorXd z(10);
    for (int j = 0; j < 10; ++j) z(j) = 6 * rng.uniform() - 3;
    Target y = random_target(rng, small_dims(Task::trajectory, EncodingMode::bow));
    double goal = 0;
    for (int j = 0; j < 2; ++j) {
      double p = 1 / (1 + std::exp(-z(j)));
      goal -= y.goal[static_cast<std::size_t>(j)] * std::log(p) + (1 - y.goal[static_cast<std::size_t>(j)]) * std::log(1 - p);
    }
    EXPECT_NEAR(loss(z.head(2), y, Task::goal), goal, 1e-12);
    double type = 0;
    int off = 0;
    for (int k = 0; k < 3; ++k) {
      int n = kTypeGroups[static_cast<std::size_t>(k)];
      double denom = 0;
      for (int j = 0; j < n; ++j) denom += std::exp(z(off + j));
      type -= std::log(std::exp(z(off + y.type[static_cast<std::size_t>(k)])) / denom);
      off += n;
    }
    EXPECT_NEAR(loss(z, y, Task::type), type, 1e-12);
    double denom = 0;
    for (int j = 0; j < 6; ++j) denom += std::exp(z(j));
    EXPECT_NEAR(loss(z.head(6), y, Task::trajectory), -std::log(std::exp(z(y.next_token)) / denom), 1e-12);
  }
}

TEST(Loss, ClampedLogitsStayFinite) {
  Target y;
  y.goal = {0, 1};
  Eigen::VectorXd z(2);
  z << 1e6, -1e6;
  double l = loss(z, y, Task::goal);
  EXPECT_TRUE(std::isfinite(l));
  EXPECT_NEAR(l, 2 * (30 + std::log1p(std::exp(-30.0))), 1e-9);
  y.next_token = 0;
  Eigen::VectorXd t(3);
  t << -1e300, 1e300, 0;
  Eigen::VectorXd dz;
  l = loss(t, y, Task::trajectory, &dz);
  EXPECT_TRUE(std::isfinite(l));
  EXPECT_NEAR(l, 60.0, 1e-9);
  EXPECT_TRUE(dz.allFinite());
  EXPECT_THROW(loss(Eigen::VectorXd::Zero(3), y, Task::goal), DimError);
}

TEST(Backward, MatchesFiniteDifferencesForEveryHeadAndMode) {
  GraphContext g = small_graph();
  struct Variant {
    EncodingMode mode;
    GnnFusion fusion;
  };
  for (Variant v : {Variant{EncodingMode::bow, GnnFusion::step}, Variant{EncodingMode::graph, GnnFusion::step},
                    Variant{EncodingMode::graph, GnnFusion::final}})
    for (Task task : {Task::goal, Task::type, Task::trajectory}) {
      Rng rng(1000 + static_cast<int>(task) * 10 + static_cast<int>(v.mode) * 3 + static_cast<int>(v.fusion));
      ModelDims d = small_dims(task, v.mode, v.fusion);
      for (int instance = 0; instance < 10; ++instance) {
        ModelParams p(d);
        randomize(p, rng, 0.6);
        auto w = random_window(rng, 3, d);
        Target y = random_target(rng, d);
        double err = max_rel_error_vs_fd(p, w, y, v.mode == EncodingMode::graph ? &g : nullptr);
        EXPECT_LT(err, 1e-4) << to_string(task) << " " << to_string(v.mode) << " " << to_string(v.fusion)
                             << " instance " << instance;
      }
    }
}

TEST(Backward, ShapeAndAccumulation) {
  Rng rng(2);
  ModelDims d = small_dims(Task::type, EncodingMode::graph);
  GraphContext g = small_graph();
  ModelParams p = init_params(1, d);
  auto w = random_window(rng, 4, d);
  Target y = random_target(rng, d);
  auto [l, grads] = backward(p, w, y, &g);
  EXPECT_TRUE(grads.same_shape(p));
  EXPECT_DOUBLE_EQ(l, loss(forward(p, w, &g), y, d.task));
  Gradients twice(d);
  backward_into(p, w, y, twice, &g);
  backward_into(p, w, y, twice, &g);
  for (std::size_t j = 0; j < p.size(); ++j) EXPECT_NEAR(twice.values()[j], 2 * grads.values()[j], 1e-14);
  Gradients wrong(small_dims(Task::goal, EncodingMode::graph));
  EXPECT_THROW(backward_into(p, w, y, wrong, &g), DimError);
}

TEST(Backward, SaturatedPredictionHasNearZeroGradient) {
  ModelDims d = small_dims(Task::trajectory, EncodingMode::bow);
  ModelParams p(d);
  p.head_b()(2) = 60;  // clamped to 30: softmax error ~ e^-30
  Target y;
  y.next_token = 2;
  Rng rng(3);
  auto w = random_window(rng, 3, d);
  auto [l, grads] = backward(p, w, y);
  EXPECT_LT(l, 1e-12);
  double norm = 0;
  for (double x : grads.values()) norm += x * x;
  EXPECT_LT(std::sqrt(norm), 1e-6);
}

TEST(Adam, ZeroGradientLeavesParamsAndCountsStep) {
  ModelParams p = init_params(1, small_dims(Task::goal, EncodingMode::bow));
  ModelParams before = p;
  AdamState s = make_adam_state(p);
  EXPECT_EQ(s.t, 0);
  Gradients g(p.dims());
  adam_step(p, g, s);
  EXPECT_EQ(p, before);
  EXPECT_EQ(s.t, 1);
}

TEST(Adam, FirstStepIsSignedLearningRate) {
  ModelParams p(small_dims(Task::goal, EncodingMode::bow));
  Gradients g(p.dims());
  for (std::size_t j = 0; j < g.size(); ++j) g.values()[j] = (j % 2 ? -1.0 : 1.0) * (0.001 + static_cast<double>(j));
  AdamState s = make_adam_state(p);
  adam_step(p, g, s);
  for (std::size_t j = 0; j < p.size(); ++j) EXPECT_NEAR(p.values()[j], j % 2 ? 0.01 : -0.01, 1e-7);
}

TEST(Adam, ThreeStepScalarOracle) {
  ModelParams p(small_dims(Task::goal, EncodingMode::bow));
  p.values()[0] = 0.5;
  AdamState s = make_adam_state(p);
  const double gs[3] = {0.2, -0.1, 0.4};
  double x = 0.5, m = 0, v = 0;
  for (int t = 1; t <= 3; ++t) {
    Gradients g(p.dims());
    g.values()[0] = gs[t - 1];
    adam_step(p, g, s);
    m = 0.9 * m + 0.1 * gs[t - 1];
    v = 0.999 * v + 0.001 * gs[t - 1] * gs[t - 1];
    x -= 0.01 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
    EXPECT_NEAR(p.values()[0], x, 1e-15);
  }
  // Worked by hand: updates 0.0100000, 0.0026634, 0.0065811
  EXPECT_NEAR(p.values()[0], 0.4807555, 1e-7);
}

TEST(Adam, ShapeMismatch) {
  ModelParams p(small_dims(Task::goal, EncodingMode::bow));
  AdamState s = make_adam_state(p);
  Gradients g(small_dims(Task::type, EncodingMode::bow));
  EXPECT_THROW(adam_step(p, g, s), DimError);
}

TEST(Softmax, SumsToOne) {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    Eigen::VectorXd z(1 + rng.below(50));
    for (Eigen::Index j = 0; j < z.size(); ++j) z(j) = 80 * rng.uniform() - 40;
    EXPECT_NEAR(softmax(z).sum(), 1.0, 1e-9);
  }
}

TEST(Argmax, TiesGoToLowestIndex) {
  Eigen::VectorXd z(5);
  z << 0.1, 0.7, 0.3, 0.7, 0.7;
  EXPECT_EQ(argmax(z), 1);
  EXPECT_EQ(argmax(Eigen::VectorXd::Zero(4)), 0);
  Eigen::VectorXd t(10);
  t << 1, 1, 0, 0, 0, 2, 2, 5, 5, 5;
  EXPECT_EQ(predict_type(t), (std::array<int, 3>{0, 1, 0}));
}

TEST(Checkpoint, RoundTripIsBitIdentical) {
  GraphContext g = small_graph();
  Rng rng(6);
  for (EncodingMode mode : {EncodingMode::bow, EncodingMode::graph}) {
    ModelDims d = small_dims(Task::trajectory, mode, GnnFusion::final);
    ModelParams p = init_params(9, d);
    TaskSpec spec{Task::trajectory, 3, 5};
    std::stringstream buf;
    write_checkpoint(buf, p, spec);
    auto [q, spec2] = read_checkpoint(buf);
    EXPECT_EQ(q, p);
    EXPECT_EQ(q.dims(), d);
    EXPECT_EQ(spec2.n_h, 3);
    EXPECT_EQ(spec2.n_f, 5);
    auto w = random_window(rng, 3, d);
    const GraphContext* gp = mode == EncodingMode::graph ? &g : nullptr;
    auto a = forward(p, w, gp);
    auto b = forward(q, w, gp);
    EXPECT_EQ(std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())), 0);
  }
}

TEST(Checkpoint, LayoutAndCorruption) {
  ModelDims d = small_dims(Task::goal, EncodingMode::bow);
  ModelParams p = init_params(9, d);
  std::stringstream buf;
  write_checkpoint(buf, p, TaskSpec{});
  std::string bytes = buf.str();
  EXPECT_EQ(bytes.substr(0, 8), "CPMODEL1");
  EXPECT_EQ(bytes.size(), 8 + 4 + 40 + 8 + 8 * p.size() + 8);
  std::string flipped = bytes;
  flipped[100] ^= 1;
  std::stringstream bad(flipped);
  EXPECT_THROW(read_checkpoint(bad), DataError);
  std::stringstream truncated(bytes.substr(0, bytes.size() - 3));
  EXPECT_THROW(read_checkpoint(truncated), DataError);
  std::stringstream magic("XXXXXXXX" + bytes.substr(8));
  EXPECT_THROW(read_checkpoint(magic), DataError);
  EXPECT_THROW(load_checkpoint("/nonexistent/model.bin"), IoError);
}

TEST(Overfit, FiftySamplesEveryTaskAndMode) {
  GraphContext g = small_graph();
  for (EncodingMode mode : {EncodingMode::bow, EncodingMode::graph})
    for (Task task : {Task::goal, Task::type, Task::trajectory}) {
      ModelDims d = small_dims(task, mode);
      d.hidden = 16;
      d.gnn_hidden = 8;
      d.vocab = 12;
      ModelParams p = init_params(17, d);
      Rng rng(70 + static_cast<int>(task));
      std::vector<EncodedWindow> xs;
      std::vector<Target> ys;
      for (int i = 0; i < 50; ++i) {
        xs.push_back(random_window(rng, 6, d));
        ys.push_back(random_target(rng, d));
      }
      const GraphContext* gp = mode == EncodingMode::graph ? &g : nullptr;
      auto total = [&] {
        double s = 0;
        for (int i = 0; i < 50; ++i) s += loss(forward(p, xs[static_cast<std::size_t>(i)], gp), ys[static_cast<std::size_t>(i)], task);
        return s;
      };
      double initial = total();
      AdamState s = make_adam_state(p);
      Gradients grads(d);
      for (int epoch = 0; epoch < 200; ++epoch)
        for (int b = 0; b < 50; b += 10) {
          grads.set_zero();
          for (int i = b; i < b + 10; ++i)
            backward_into(p, xs[static_cast<std::size_t>(i)], ys[static_cast<std::size_t>(i)], grads, gp);
          for (double& x : grads.values()) x /= 10;
          adam_step(p, grads, s);
        }
      EXPECT_LT(total(), 0.1 * initial) << to_string(task) << " " << to_string(mode);
    }
}

TEST(Rollout, RepeatingTokenCorpus) {
  // Vocabulary with a single real token; train the model to always predict it.
  std::map<std::string, std::uint64_t> counts{{"atm: withdrawal", 5}, {"atm: login", 5}};
  Vocab v = Vocab::from_counts(counts, 1);
  int tok = v.index("atm: withdrawal");
  ModelDims d;
  d.task = Task::trajectory;
  d.vocab = static_cast<int>(v.size());
  d.hidden = 8;
  ModelParams p = init_params(4, d);
  SessionState in{Primary::atm, std::string(kRoot)};
  std::vector<StateActionPair> hist(4, StateActionPair{in, Channel::atm, Operation{"withdrawal"}});
  EncodedWindow w = encode_window(hist, v, nullptr, EncodingMode::bow);
  Target y;
  y.next_token = tok;
  AdamState s = make_adam_state(p);
  for (int i = 0; i < 100; ++i) {
    auto [l, g] = backward(p, w, y);
    adam_step(p, g, s);
  }
  auto out = rollout(p, hist, 5, v);
  EXPECT_EQ(out, std::vector<int>(5, tok));
  EXPECT_EQ(rollout(p, hist, 1, v), std::vector<int>{argmax(forward(p, w))});
  EXPECT_THROW(rollout(p, hist, 0, v), DimError);
}

TEST(Rollout, GraphModeReannotatesPredictions) {
  std::vector<SessionState> nodes{{Primary::logged_out, std::string(kRoot)}, {Primary::web, std::string(kRoot)},
                                  {Primary::web, "settings"}};
  StateGraph graph(nodes, {});
  GraphContext ctx = GraphContext::from(graph);
  std::map<std::string, std::uint64_t> counts{{"web: login", 1}, {"web: enter menu settings", 1}, {"web: log off", 1}};
  Vocab v = Vocab::from_counts(counts, 1);
  int login = v.index("web: login");
  int settings = v.index("web: enter menu settings");

  StateActionPair first{nodes[0], Channel::web, Transition{Verb::login, ""}};
  StateActionPair second = next_pair(first, settings, v);
  EXPECT_EQ(second.state, nodes[1]);
  EXPECT_EQ(pair_token(second), "web: enter menu settings");
  StateActionPair third = next_pair(second, login, v);
  EXPECT_EQ(third.state, nodes[2]);
  StateActionPair oov = next_pair(third, Vocab::kOov, v);
  EXPECT_EQ(oov.state, nodes[2]);  // login while logged in is illegal, so the state is kept
  EXPECT_EQ(action_class(oov.action), ActionClass::operation);

  // The ego indicator follows the appended pairs.
  std::vector<StateActionPair> seq{first, second, third};
  EncodedWindow w = encode_window(seq, v, &graph, EncodingMode::graph);
  for (std::size_t t = 0; t < 3; ++t) {
    auto ann = w.annotation(t);
    EXPECT_EQ(ann(static_cast<Eigen::Index>(t), kEgoNode), 1.0);
    EXPECT_EQ(ann.col(kEgoNode).sum(), 1.0);
    EXPECT_EQ(ann.col(kPastNodes).sum(), static_cast<double>(t + 1));
  }

  // rollout equals a manual loop over next_pair with a sliding window.
  ModelDims d;
  d.task = Task::trajectory;
  d.mode = EncodingMode::graph;
  d.vocab = static_cast<int>(v.size());
  d.hidden = 4;
  d.gnn_hidden = 4;
  d.nodes = 3;
  ModelParams p = init_params(13, d);
  std::vector<StateActionPair> window{first, second};
  std::vector<int> manual;
  for (int k = 0; k < 4; ++k) {
    int tok = argmax(forward(p, encode_window(window, v, &graph, EncodingMode::graph), &ctx));
    manual.push_back(tok);
    window.push_back(next_pair(window.back(), tok, v));
    window.erase(window.begin());
  }
  EXPECT_EQ(rollout(p, std::vector<StateActionPair>{first, second}, 4, v, &graph, &ctx), manual);
}
