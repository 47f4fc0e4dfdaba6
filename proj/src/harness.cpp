#include "custpred/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <thread>

namespace custpred {

namespace {

// Runs fn(i) for i in [0, n) on up to `jobs` threads. Each index is owned by
// exactly one thread, so callers writing result[i] stay deterministic.
template <class Fn>
void parallel_for(std::size_t n, unsigned jobs, Fn fn) {
  jobs = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(std::max<std::size_t>(n, 1))));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(jobs);
  for (unsigned j = 0; j < jobs; ++j) {
    pool.emplace_back([&, j] {
      try {
        for (std::size_t i = j; i < n; i += jobs) fn(i);
      } catch (...) {
        errors[j] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt_fixed(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::vector<int> head_hits(const Eigen::VectorXd& z, const Target& y, Task task) {
  switch (task) {
    case Task::goal:
      return {(z(0) > 0) == (y.goal[0] > 0.5), (z(1) > 0) == (y.goal[1] > 0.5)};
    case Task::type: {
      auto t = predict_type(z);
      return {t[0] == y.type[0], t[1] == y.type[1], t[2] == y.type[2]};
    }
    case Task::trajectory:
      return {argmax(z) == y.next_token};
  }
  return {};
}

}  // namespace

std::string_view to_string(Part p) {
  switch (p) {
    case Part::train: return "train";
    case Part::validation: return "validation";
    case Part::test: return "test";
  }
  return "?";
}

std::optional<Part> part_from_string(std::string_view s) {
  if (s == "train") return Part::train;
  if (s == "validation") return Part::validation;
  if (s == "test") return Part::test;
  return std::nullopt;
}

const std::vector<std::size_t>& Split::part(Part p) const {
  switch (p) {
    case Part::train: return train;
    case Part::validation: return validation;
    case Part::test: return test;
  }
  return test;
}

Split split_dataset(std::size_t n_customers, const SplitFractions& f, std::uint64_t seed) {
  for (double x : {f.train, f.validation, f.test})
    if (!(x >= 0.0 && x <= 1.0)) throw BadFractions("split fractions must lie in [0, 1]");
  if (std::abs(f.train + f.validation + f.test - 1.0) > 1e-9) throw BadFractions("split fractions must sum to 1");
  std::vector<std::size_t> perm(n_customers);
  for (std::size_t i = 0; i < n_customers; ++i) perm[i] = i;
  Rng rng(seed);
  rng.shuffle(perm);
  auto n = static_cast<double>(n_customers);
  auto n_train = static_cast<std::size_t>(std::llround(n * f.train));
  auto n_val = static_cast<std::size_t>(std::llround(n * f.validation));
  if (n_train + n_val > n_customers) n_val = n_customers - n_train;
  Split s;
  s.fractions = f;
  s.seed = seed;
  s.train.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.validation.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_train),
                      perm.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  s.test.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), perm.end());
  for (auto* v : {&s.train, &s.validation, &s.test}) std::sort(v->begin(), v->end());
  return s;
}

void write_split(std::ostream& out, const Split& s, const Dataset& d) {
  out << "# split seed=" << s.seed << " train=" << fmt_double(s.fractions.train)
      << " validation=" << fmt_double(s.fractions.validation) << " test=" << fmt_double(s.fractions.test) << "\n";
  std::vector<Part> part(d.profiles.size(), Part::test);
  for (Part p : {Part::train, Part::validation, Part::test})
    for (std::size_t i : s.part(p)) part.at(i) = p;
  for (std::size_t i = 0; i < d.profiles.size(); ++i)
    out << d.profiles[i].customer_id << '\t' << to_string(part[i]) << '\n';
}

Split read_split(std::istream& in, const Dataset& d) {
  std::string line;
  if (!std::getline(in, line) || line.rfind("# split ", 0) != 0) throw DataError("split file: missing header");
  Split s;
  for (const auto& field : split(std::string_view(line).substr(8), ' ')) {
    auto eq = field.find('=');
    if (eq == std::string::npos) throw DataError("split file: bad header field '" + field + "'");
    std::string key = field.substr(0, eq);
    std::string value = field.substr(eq + 1);
    try {
      if (key == "seed") s.seed = std::stoull(value);
      else if (key == "train") s.fractions.train = std::stod(value);
      else if (key == "validation") s.fractions.validation = std::stod(value);
      else if (key == "test") s.fractions.test = std::stod(value);
      else throw DataError("split file: unknown header field '" + key + "'");
    } catch (const std::logic_error&) {
      throw DataError("split file: bad header value '" + field + "'");
    }
  }
  std::map<std::uint64_t, std::size_t> index;
  for (std::size_t i = 0; i < d.profiles.size(); ++i) index[d.profiles[i].customer_id] = i;
  std::vector<bool> seen(d.profiles.size(), false);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto cols = split(line, '\t');
    if (cols.size() != 2) throw DataError("split file: expected 'customer_id<TAB>part': " + line);
    auto part = part_from_string(cols[1]);
    if (!part) throw DataError("split file: unknown partition '" + cols[1] + "'");
    std::uint64_t id = 0;
    try {
      id = std::stoull(cols[0]);
    } catch (const std::logic_error&) {
      throw DataError("split file: bad customer id '" + cols[0] + "'");
    }
    auto it = index.find(id);
    if (it == index.end()) throw DataError("split file: customer " + cols[0] + " not in dataset");
    if (seen[it->second]) throw DataError("split file: customer " + cols[0] + " listed twice");
    seen[it->second] = true;
    std::vector<std::size_t>& dst = *part == Part::train ? s.train : *part == Part::validation ? s.validation : s.test;
    dst.push_back(it->second);
  }
  if (std::find(seen.begin(), seen.end(), false) != seen.end())
    throw DataError("split file: some dataset customers are not assigned");
  for (auto* v : {&s.train, &s.validation, &s.test}) std::sort(v->begin(), v->end());
  return s;
}

void save_split(const std::string& path, const Split& s, const Dataset& d) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  write_split(out, s, d);
  if (!out) throw IoError("error writing " + path);
}

Split load_split(const std::string& path, const Dataset& d) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path);
  return read_split(in, d);
}

std::vector<CustomerPairs> featurize(const Dataset& d) {
  std::vector<CustomerPairs> out;
  out.reserve(d.trajectories.size());
  for (std::size_t i = 0; i < d.trajectories.size(); ++i) {
    const Trajectory& t = d.trajectories[i];
    CustomerPairs c;
    c.profile = i < d.profiles.size() ? d.profiles[i] : CustomerProfile{t.customer_id};
    c.pairs = trajectory_to_pairs(t.events);
    c.pair_goals.reserve(c.pairs.size());
    for (std::size_t e = 0; e < c.pairs.size(); ++e) {
      std::uint32_t s = e < t.session_of_event.size() ? t.session_of_event[e] : 0;
      c.pair_goals.push_back(s < t.session_goals.size() ? t.session_goals[s] : GoalLabel{});
    }
    out.push_back(std::move(c));
  }
  return out;
}

std::vector<std::vector<StateActionPair>> pair_corpus(std::span<const CustomerPairs> customers,
                                                      std::span<const std::size_t> indices) {
  std::vector<std::vector<StateActionPair>> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(customers[i].pairs);
  return out;
}

std::vector<Sample> build_samples(std::span<const CustomerPairs> customers, std::span<const std::size_t> indices,
                                  const Vocab& v, const StateGraph* g, const SampleOptions& opt) {
  opt.spec.validate();
  if (opt.mode == EncodingMode::graph && g == nullptr) throw DataError("build_samples: graph mode needs a state graph");
  std::vector<Sample> out;
  const auto n_h = static_cast<std::size_t>(opt.spec.n_h);
  for (std::size_t ci : indices) {
    const CustomerPairs& c = customers[ci];
    for (const WindowView& w : windows(c.pairs, n_h, opt.stride)) {
      if (opt.spec.task == Task::trajectory && w.continuation.empty()) continue;
      Sample s;
      s.customer = ci;
      s.history = w.history;
      s.before = std::span<const StateActionPair>(c.pairs).first(w.begin);
      s.full_history = opt.full_history;
      s.x = encode_window(w.history, v, g, opt.mode, opt.full_history ? s.before : std::span<const StateActionPair>{});
      const GoalLabel& goal = c.pair_goals[w.begin + n_h - 1];
      s.y.goal = {goal.check_info ? 1.0 : 0.0, goal.change_info ? 1.0 : 0.0};
      s.y.type = {static_cast<int>(c.profile.income), static_cast<int>(c.profile.fail_behavior),
                  static_cast<int>(c.profile.digital_behavior)};
      std::size_t nf = std::min(opt.max_future, w.continuation.size());
      for (std::size_t k = 0; k < nf; ++k) s.future.push_back(v.index(w.continuation[k]));
      s.y.next_token = s.future.empty() ? Vocab::kOov : s.future.front();
      out.push_back(std::move(s));
    }
  }
  return out;
}

void TrainConfig::validate() const {
  if (task.n_h < 1) throw ConfigError("train config: n_h must be >= 1");
  if (task.n_f < 1) throw ConfigError("train config: n_f must be >= 1");
  if (!(lr > 0)) throw ConfigError("train config: lr must be > 0");
  if (max_epochs < 1) throw ConfigError("train config: max_epochs must be >= 1");
  if (patience < 1) throw ConfigError("train config: patience must be >= 1");
  if (batch_size < 1) throw ConfigError("train config: batch_size must be >= 1");
  if (hidden < 1 || gnn_hidden < 1 || gnn_rounds < 1) throw ConfigError("train config: model sizes must be >= 1");
}

std::string TrainConfig::to_text() const {
  std::ostringstream o;
  o << "task = " << to_string(task.task) << "\n";
  o << "n_h = " << task.n_h << "\n";
  o << "n_f = " << task.n_f << "\n";
  o << "mode = " << to_string(mode) << "\n";
  o << "lr = " << fmt_double(lr) << "\n";
  o << "max_epochs = " << max_epochs << "\n";
  o << "patience = " << patience << "\n";
  o << "batch_size = " << batch_size << "\n";
  o << "seed = " << seed << "\n";
  o << "hidden = " << hidden << "\n";
  o << "gnn_hidden = " << gnn_hidden << "\n";
  o << "gnn_rounds = " << gnn_rounds << "\n";
  o << "fusion = " << to_string(fusion) << "\n";
  o << "epoch_size = " << epoch_size << "\n";
  o << "validation_limit = " << validation_limit << "\n";
  return o.str();
}

std::uint64_t TrainConfig::fingerprint() const { return Fnv1a().add(to_text()).value(); }

TrainConfig TrainConfig::from_config(KeyValueConfig& kv, const std::string& prefix, bool strict) {
  TrainConfig c;
  auto task = task_from_string(kv.take_string(prefix + "task", std::string(to_string(c.task.task))));
  if (!task) throw ConfigError("train config: unknown task");
  c.task.task = *task;
  c.task.n_h = static_cast<int>(kv.take_int(prefix + "n_h", c.task.n_h));
  c.task.n_f = static_cast<int>(kv.take_int(prefix + "n_f", c.task.n_f));
  auto mode = encoding_mode_from_string(kv.take_string(prefix + "mode", std::string(to_string(c.mode))));
  if (!mode) throw ConfigError("train config: unknown mode");
  c.mode = *mode;
  c.lr = kv.take_double(prefix + "lr", c.lr);
  c.max_epochs = static_cast<int>(kv.take_int(prefix + "max_epochs", c.max_epochs));
  c.patience = static_cast<int>(kv.take_int(prefix + "patience", c.patience));
  c.batch_size = static_cast<int>(kv.take_int(prefix + "batch_size", c.batch_size));
  auto seed = kv.take_int(prefix + "seed", static_cast<std::int64_t>(c.seed));
  if (seed < 0) throw ConfigError("train config: seed must be >= 0");
  c.seed = static_cast<std::uint64_t>(seed);
  c.hidden = static_cast<int>(kv.take_int(prefix + "hidden", c.hidden));
  c.gnn_hidden = static_cast<int>(kv.take_int(prefix + "gnn_hidden", c.gnn_hidden));
  c.gnn_rounds = static_cast<int>(kv.take_int(prefix + "gnn_rounds", c.gnn_rounds));
  auto fusion = gnn_fusion_from_string(kv.take_string(prefix + "fusion", std::string(to_string(c.fusion))));
  if (!fusion) throw ConfigError("train config: unknown fusion (expected step or final)");
  c.fusion = *fusion;
  auto es = kv.take_int(prefix + "epoch_size", static_cast<std::int64_t>(c.epoch_size));
  auto vl = kv.take_int(prefix + "validation_limit", static_cast<std::int64_t>(c.validation_limit));
  if (es < 0 || vl < 0) throw ConfigError("train config: epoch_size and validation_limit must be >= 0");
  c.epoch_size = static_cast<std::size_t>(es);
  c.validation_limit = static_cast<std::size_t>(vl);
  if (strict) kv.reject_unknown(prefix);
  c.validate();
  return c;
}

ModelDims model_dims(const TrainConfig& cfg, int vocab_size, int nodes) {
  ModelDims d;
  d.task = cfg.task.task;
  d.mode = cfg.mode;
  d.vocab = vocab_size;
  d.hidden = cfg.hidden;
  d.gnn_hidden = cfg.gnn_hidden;
  d.gnn_rounds = cfg.gnn_rounds;
  d.fusion = cfg.fusion;
  d.nodes = cfg.mode == EncodingMode::graph ? nodes : 0;
  return d;
}

std::vector<std::string> head_names(Task t) {
  switch (t) {
    case Task::goal: return {"check_info", "change_info"};
    case Task::type: return {"income", "fail_behavior", "digital_behavior"};
    case Task::trajectory: return {"next_token"};
  }
  return {};
}

LossAndAccuracy score(const ModelParams& p, std::span<const Sample> samples, const GraphContext* g, unsigned jobs) {
  if (samples.empty()) throw EmptyData("score: no samples");
  const Task task = p.dims().task;
  std::vector<double> losses(samples.size());
  std::vector<std::vector<int>> hits(samples.size());
  parallel_for(samples.size(), jobs, [&](std::size_t i) {
    Eigen::VectorXd z = forward(p, samples[i].x, g);
    losses[i] = loss(z, samples[i].y, task);
    hits[i] = head_hits(z, samples[i].y, task);
  });
  LossAndAccuracy out;
  out.accuracy.assign(head_names(task).size(), 0.0);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    out.loss += losses[i];
    for (std::size_t h = 0; h < out.accuracy.size(); ++h) out.accuracy[h] += hits[i][h];
  }
  auto n = static_cast<double>(samples.size());
  out.loss /= n;
  for (double& a : out.accuracy) a /= n;
  return out;
}

TrainResult train(std::span<const Sample> train_set, std::span<const Sample> validation_set, const TrainConfig& cfg,
                  const GraphContext* g) {
  cfg.validate();
  if (train_set.empty()) throw EmptyData("train: empty training set");
  if (validation_set.empty()) throw EmptyData("train: empty validation set");
  const Task task = cfg.task.task;
  ModelDims dims = model_dims(cfg, train_set.front().x.vocab_size, train_set.front().x.node_count);
  ModelParams params = init_params(cfg.seed, dims);
  AdamState adam = make_adam_state(params);
  AdamConfig adam_cfg;
  adam_cfg.lr = cfg.lr;
  Gradients grads(dims);

  std::vector<Sample> val_subset;
  std::span<const Sample> val = validation_set;
  if (cfg.validation_limit > 0 && cfg.validation_limit < validation_set.size()) {
    for (std::size_t k = 0; k < cfg.validation_limit; ++k)
      val_subset.push_back(validation_set[k * validation_set.size() / cfg.validation_limit]);
    val = val_subset;
  }

  Rng rng(splitmix64(cfg.seed ^ 0x747261696e6c6f6full));
  std::vector<std::size_t> order(train_set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::size_t cursor = order.size();
  auto next_index = [&] {
    if (cursor == order.size()) {
      rng.shuffle(order);
      cursor = 0;
    }
    return order[cursor++];
  };

  const std::size_t heads = head_names(task).size();
  const std::size_t per_epoch = cfg.epoch_size > 0 ? cfg.epoch_size : train_set.size();
  TrainResult result;
  result.params = params;
  double best = std::numeric_limits<double>::infinity();
  int since_best = 0;
  Eigen::VectorXd logits;
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_accuracy.assign(heads, 0.0);
    double total = 0.0;
    for (std::size_t done = 0; done < per_epoch;) {
      std::size_t b = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), per_epoch - done);
      grads.set_zero();
      for (std::size_t k = 0; k < b; ++k) {
        const Sample& s = train_set[next_index()];
        total += backward_into(params, s.x, s.y, grads, g, &logits);
        auto hit = head_hits(logits, s.y, task);
        for (std::size_t h = 0; h < heads; ++h) rec.train_accuracy[h] += hit[h];
      }
      double inv = 1.0 / static_cast<double>(b);
      for (double& x : grads.values()) x *= inv;
      adam_step(params, grads, adam, adam_cfg);
      done += b;
    }
    rec.train_loss = total / static_cast<double>(per_epoch);
    for (double& a : rec.train_accuracy) a /= static_cast<double>(per_epoch);
    LossAndAccuracy v = score(params, val, g);
    rec.validation_loss = v.loss;
    rec.validation_accuracy = v.accuracy;
    result.records.push_back(rec);
    if (v.loss < best) {
      best = v.loss;
      result.params = params;
      result.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  return result;
}

const HeadMetric& MetricsReport::head(std::string_view name) const {
  for (const auto& h : heads)
    if (h.name == name) return h;
  throw Error("metrics report has no head '" + std::string(name) + "'");
}

namespace {

MetricsReport base_report(const ModelParams& p, std::size_t n) {
  MetricsReport r;
  r.task = p.dims().task;
  r.mode = p.dims().mode;
  r.test_samples = n;
  return r;
}

}  // namespace

MetricsReport evaluate_goal(const ModelParams& p, std::span<const Sample> test, const GraphContext* g, unsigned jobs) {
  if (p.dims().task != Task::goal) throw DimError("evaluate_goal: model is not a goal model");
  LossAndAccuracy s = score(p, test, g, jobs);
  MetricsReport r = base_report(p, test.size());
  auto names = head_names(Task::goal);
  for (std::size_t h = 0; h < names.size(); ++h) r.heads.push_back({names[h], s.accuracy[h], test.size()});
  return r;
}

MetricsReport evaluate_type(const ModelParams& p, std::span<const Sample> test, const GraphContext* g, unsigned jobs,
                            bool per_customer) {
  if (p.dims().task != Task::type) throw DimError("evaluate_type: model is not a type model");
  if (test.empty()) throw EmptyData("evaluate_type: no samples");
  MetricsReport r = base_report(p, test.size());
  auto names = head_names(Task::type);
  if (!per_customer) {
    LossAndAccuracy s = score(p, test, g, jobs);
    for (std::size_t h = 0; h < names.size(); ++h) r.heads.push_back({names[h], s.accuracy[h], test.size()});
    return r;
  }
  std::vector<std::array<int, 3>> pred(test.size());
  parallel_for(test.size(), jobs, [&](std::size_t i) { pred[i] = predict_type(forward(p, test[i].x, g)); });
  struct Votes {
    std::array<std::array<int, 4>, 3> counts{};
    std::array<int, 3> truth{};
  };
  std::map<std::size_t, Votes> by_customer;
  for (std::size_t i = 0; i < test.size(); ++i) {
    Votes& v = by_customer[test[i].customer];
    v.truth = test[i].y.type;
    for (std::size_t h = 0; h < 3; ++h) ++v.counts[h][static_cast<std::size_t>(pred[i][h])];
  }
  std::array<double, 3> correct{};
  for (const auto& [c, v] : by_customer) {
    for (std::size_t h = 0; h < 3; ++h) {
      int best = 0;
      for (int k = 1; k < kTypeGroups[h]; ++k)
        if (v.counts[h][static_cast<std::size_t>(k)] > v.counts[h][static_cast<std::size_t>(best)]) best = k;
      correct[h] += best == v.truth[h];
    }
  }
  for (std::size_t h = 0; h < 3; ++h)
    r.heads.push_back({names[h], correct[h] / static_cast<double>(by_customer.size()), by_customer.size()});
  return r;
}

MetricsReport evaluate_trajectory(const ModelParams& p, std::span<const Sample> test, const Vocab& v,
                                  const StateGraph* graph, const GraphContext* g, std::span<const int> horizons,
                                  unsigned jobs) {
  if (p.dims().task != Task::trajectory) throw DimError("evaluate_trajectory: model is not a trajectory model");
  if (test.empty()) throw EmptyData("evaluate_trajectory: no samples");
  if (horizons.empty()) throw DimError("evaluate_trajectory: no horizons");
  int max_k = 0;
  for (int k : horizons) {
    if (k < 1) throw DimError("evaluate_trajectory: horizons must be >= 1");
    max_k = std::max(max_k, k);
  }
  // A greedy rollout of length K starts with the rollout of every shorter
  // length, so one rollout per window serves all horizons.
  std::vector<std::vector<int>> pred(test.size());
  parallel_for(test.size(), jobs, [&](std::size_t i) {
    const Sample& s = test[i];
    int k = std::min<int>(max_k, static_cast<int>(s.future.size()));
    if (k == 0) return;
    pred[i] = rollout(p, s.history, k, v, graph, g, s.full_history, s.before);
  });
  MetricsReport r = base_report(p, test.size());
  for (int k : horizons) {
    double sum = 0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < test.size(); ++i) {
      if (test[i].future.size() < static_cast<std::size_t>(k)) continue;
      int match = 0;
      for (int j = 0; j < k; ++j) match += pred[i][static_cast<std::size_t>(j)] == test[i].future[static_cast<std::size_t>(j)];
      sum += static_cast<double>(match) / k;
      ++n;
    }
    if (n == 0) throw EmptyData("evaluate_trajectory: no window has " + std::to_string(k) + " continuation tokens");
    r.heads.push_back({"next_" + std::to_string(k), sum / static_cast<double>(n), n});
  }
  return r;
}

std::uint64_t dataset_hash(const Dataset& d) {
  std::ostringstream o;
  write_traces(o, d);
  write_profiles(o, d);
  return Fnv1a().add(o.str()).value();
}

std::string report_fingerprint(const TrainConfig& cfg, std::uint64_t data_hash) {
  return hex64(Fnv1a().add(cfg.to_text()).add(hex64(data_hash)).value());
}

void write_report(std::ostream& out, const MetricsReport& r) {
  out << "# metrics report\n";
  out << "task = " << to_string(r.task) << "\n";
  out << "mode = " << to_string(r.mode) << "\n";
  out << "fingerprint = " << r.fingerprint << "\n";
  out << "customers.train = " << r.train_customers << "\n";
  out << "customers.validation = " << r.validation_customers << "\n";
  out << "customers.test = " << r.test_customers << "\n";
  out << "samples.train = " << r.train_samples << "\n";
  out << "samples.validation = " << r.validation_samples << "\n";
  out << "samples.test = " << r.test_samples << "\n";
  out << "epochs_run = " << r.epochs_run << "\n";
  out << "best_epoch = " << r.best_epoch << "\n";
  out << "heads = ";
  for (std::size_t h = 0; h < r.heads.size(); ++h) out << (h ? "," : "") << r.heads[h].name;
  out << "\n";
  for (const auto& h : r.heads) {
    out << "accuracy." << h.name << " = " << fmt_fixed(h.accuracy) << "\n";
    out << "count." << h.name << " = " << h.count << "\n";
  }
}

MetricsReport read_report(std::istream& in) {
  std::stringstream buf;
  buf << in.rdbuf();
  KeyValueConfig kv = KeyValueConfig::parse(buf.str(), "metrics report");
  MetricsReport r;
  auto task = task_from_string(kv.take_string("task", ""));
  auto mode = encoding_mode_from_string(kv.take_string("mode", ""));
  if (!task || !mode) throw DataError("metrics report: missing or bad task/mode");
  r.task = *task;
  r.mode = *mode;
  r.fingerprint = kv.take_string("fingerprint", "");
  auto count = [&](const std::string& key) {
    auto v = kv.take_int(key, 0);
    if (v < 0) throw DataError("metrics report: negative " + key);
    return static_cast<std::size_t>(v);
  };
  r.train_customers = count("customers.train");
  r.validation_customers = count("customers.validation");
  r.test_customers = count("customers.test");
  r.train_samples = count("samples.train");
  r.validation_samples = count("samples.validation");
  r.test_samples = count("samples.test");
  r.epochs_run = static_cast<int>(kv.take_int("epochs_run", 0));
  r.best_epoch = static_cast<int>(kv.take_int("best_epoch", 0));
  for (const auto& name : split(kv.take_string("heads", ""), ',')) {
    if (name.empty()) continue;
    HeadMetric h;
    h.name = name;
    h.accuracy = kv.take_double("accuracy." + name, 0.0);
    h.count = count("count." + name);
    if (h.accuracy < 0 || h.accuracy > 1) throw DataError("metrics report: accuracy out of [0, 1] for " + name);
    r.heads.push_back(h);
  }
  kv.reject_unknown();
  return r;
}

void write_loss_csv(std::ostream& out, Task task, std::span<const EpochRecord> records) {
  out << "epoch,split,loss";
  for (const auto& name : head_names(task)) out << ",acc_" << name;
  out << "\n";
  for (const auto& r : records) {
    out << r.epoch << ",train," << fmt_double(r.train_loss);
    for (double a : r.train_accuracy) out << "," << fmt_double(a);
    out << "\n" << r.epoch << ",validation," << fmt_double(r.validation_loss);
    for (double a : r.validation_accuracy) out << "," << fmt_double(a);
    out << "\n";
  }
}

void write_outputs(const MetricsReport& r, std::span<const EpochRecord> records, const std::string& report_path,
                   const std::string& loss_csv_path) {
  std::ofstream rep(report_path);
  if (!rep) throw IoError("cannot write " + report_path);
  write_report(rep, r);
  if (!rep) throw IoError("error writing " + report_path);
  std::ofstream csv(loss_csv_path);
  if (!csv) throw IoError("cannot write " + loss_csv_path);
  write_loss_csv(csv, r.task, records);
  if (!csv) throw IoError("error writing " + loss_csv_path);
}

void save_sidecar(const std::string& path, const TrainSidecar& s) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << s.cfg.to_text();
  out << "samples.stride = " << s.stride << "\n";
  out << "samples.full_history = " << (s.full_history ? "true" : "false") << "\n";
  out << "result.epochs_run = " << s.epochs_run << "\n";
  out << "result.best_epoch = " << s.best_epoch << "\n";
  if (!out) throw IoError("error writing " + path);
}

TrainSidecar load_sidecar(const std::string& path) {
  KeyValueConfig kv = KeyValueConfig::load(path);
  TrainSidecar s;
  auto stride = kv.take_int("samples.stride", 20);
  if (stride < 1) throw ConfigError(path + ": samples.stride must be >= 1");
  s.stride = static_cast<std::size_t>(stride);
  s.full_history = kv.take_string("samples.full_history", "false") == "true";
  s.epochs_run = static_cast<int>(kv.take_int("result.epochs_run", 0));
  s.best_epoch = static_cast<int>(kv.take_int("result.best_epoch", 0));
  s.cfg = TrainConfig::from_config(kv, "", true);
  return s;
}

}  // namespace custpred
