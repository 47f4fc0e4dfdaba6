#include "custpred/pipeline.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>

namespace custpred {

namespace {

template <class T, class F>
std::string join(const std::vector<T>& v, F f) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += f(v[i]);
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

template <class F>
auto stage(const std::string& name, std::ostream* log, F f) {
  if (log) *log << "stage " << name << "\n" << std::flush;
  try {
    return f();
  } catch (const DataError& e) {
    throw DataError("stage " + name + ": " + e.what());
  } catch (const Error& e) {
    throw Error("stage " + name + ": " + e.what());
  }
}

std::string run_name(Task t, EncodingMode m, std::uint64_t seed) {
  return std::string(to_string(t)) + "-" + std::string(to_string(m)) + "-s" + std::to_string(seed);
}

}  // namespace

void PipelineConfig::validate() const {
  if (customers == 0) throw ConfigError("pipeline: customers must be >= 1");
  sim.validate();
  train.validate();
  if (stride == 0) throw ConfigError("pipeline: samples.stride must be >= 1");
  if (seeds.empty() || tasks.empty() || modes.empty()) throw ConfigError("pipeline: seeds, tasks and modes must be non-empty");
  if (horizons.empty()) throw ConfigError("pipeline: horizons must be non-empty");
  for (int h : horizons)
    if (h < 1) throw ConfigError("pipeline: horizons must be >= 1");
}

std::string PipelineConfig::to_text() const {
  std::ostringstream o;
  o << "customers = " << customers << "\n";
  o << "seeds = " << join(seeds, [](std::uint64_t s) { return std::to_string(s); }) << "\n";
  o << "tasks = " << join(tasks, [](Task t) { return std::string(to_string(t)); }) << "\n";
  o << "modes = " << join(modes, [](EncodingMode m) { return std::string(to_string(m)); }) << "\n";
  o << "horizons = " << join(horizons, [](int h) { return std::to_string(h); }) << "\n";
  o << "split.seed = " << split_seed << "\n";
  o << "split.fractions = " << fmt("%.17g", fractions.train) << "," << fmt("%.17g", fractions.validation) << ","
    << fmt("%.17g", fractions.test) << "\n";
  o << "graph.min_count = " << graph_min_count << "\n";
  o << "vocab.min_count = " << vocab_min_count << "\n";
  o << "samples.stride = " << stride << "\n";
  o << "samples.full_history = " << (full_history ? "true" : "false") << "\n";
  o << "eval.per_customer = " << (per_customer_type ? "true" : "false") << "\n";
  std::istringstream sim_text(sim.to_text());
  for (std::string line; std::getline(sim_text, line);) o << "sim." << line << "\n";
  std::istringstream train_text(train.to_text());
  for (std::string line; std::getline(train_text, line);) {
    if (line.rfind("task ", 0) == 0 || line.rfind("mode ", 0) == 0 || line.rfind("seed ", 0) == 0) continue;
    o << "train." << line << "\n";
  }
  return o.str();
}

std::uint64_t PipelineConfig::fingerprint() const { return Fnv1a().add(to_text()).value(); }

PipelineConfig PipelineConfig::from_config(KeyValueConfig& kv) {
  PipelineConfig c;
  auto customers = kv.take_int("customers", static_cast<std::int64_t>(c.customers));
  if (customers < 1) throw ConfigError("pipeline: customers must be >= 1");
  c.customers = static_cast<std::size_t>(customers);
  c.seeds.clear();
  for (auto s : kv.take_ints("seeds", {0})) {
    if (s < 0) throw ConfigError("pipeline: seeds must be >= 0");
    c.seeds.push_back(static_cast<std::uint64_t>(s));
  }
  std::vector<Task> tasks;
  for (const auto& t : split(kv.take_string("tasks", "goal,type,trajectory"), ',')) {
    auto v = task_from_string(trim(t));
    if (!v) throw ConfigError("pipeline: unknown task '" + t + "'");
    tasks.push_back(*v);
  }
  c.tasks = tasks;
  std::vector<EncodingMode> modes;
  for (const auto& m : split(kv.take_string("modes", "bow,graph"), ',')) {
    auto v = encoding_mode_from_string(trim(m));
    if (!v) throw ConfigError("pipeline: unknown mode '" + m + "'");
    modes.push_back(*v);
  }
  c.modes = modes;
  c.horizons.clear();
  for (auto h : kv.take_ints("horizons", {1, 5, 15})) c.horizons.push_back(static_cast<int>(h));
  auto split_seed = kv.take_int("split.seed", 0);
  if (split_seed < 0) throw ConfigError("pipeline: split.seed must be >= 0");
  c.split_seed = static_cast<std::uint64_t>(split_seed);
  auto fr = kv.take_doubles("split.fractions", {0.70, 0.15, 0.15});
  if (fr.size() != 3) throw ConfigError("pipeline: split.fractions needs three values");
  c.fractions = {fr[0], fr[1], fr[2]};
  auto gmc = kv.take_int("graph.min_count", 10);
  auto vmc = kv.take_int("vocab.min_count", 1);
  auto stride = kv.take_int("samples.stride", 20);
  if (gmc < 0 || vmc < 0 || stride < 1) throw ConfigError("pipeline: min counts must be >= 0 and stride >= 1");
  c.graph_min_count = static_cast<std::uint64_t>(gmc);
  c.vocab_min_count = static_cast<std::uint64_t>(vmc);
  c.stride = static_cast<std::size_t>(stride);
  c.full_history = parse_bool("samples.full_history", kv.take_string("samples.full_history", "false"));
  c.per_customer_type = parse_bool("eval.per_customer", kv.take_string("eval.per_customer", "false"));
  for (const char* k : {"train.task", "train.mode", "train.seed"})
    if (kv.has(k)) throw ConfigError(std::string("pipeline: ") + k + " is set per run; use tasks, modes and seeds");
  c.sim = SimConfig::from_config(kv, "sim.", true);
  c.train = TrainConfig::from_config(kv, "train.", true);
  kv.reject_unknown();
  c.validate();
  return c;
}

PipelineConfig PipelineConfig::load(const std::string& path) {
  KeyValueConfig kv = KeyValueConfig::load(path);
  return from_config(kv);
}

double PipelineResult::mean_accuracy(Task task, EncodingMode mode, std::string_view head) const {
  double sum = 0;
  int n = 0;
  for (const auto& r : runs)
    if (r.task == task && r.mode == mode) {
      sum += r.report.head(head).accuracy;
      ++n;
    }
  if (n == 0) throw Error("pipeline result: no runs for " + std::string(to_string(task)) + "/" + std::string(to_string(mode)));
  return sum / n;
}

SampleOptions sample_options(const PipelineConfig& cfg, Task task, EncodingMode mode) {
  SampleOptions o;
  o.spec = cfg.train.task;
  o.spec.task = task;
  if (task == Task::trajectory) o.spec.n_f = *std::max_element(cfg.horizons.begin(), cfg.horizons.end());
  o.mode = mode;
  o.stride = cfg.stride;
  o.max_future = static_cast<std::size_t>(*std::max_element(cfg.horizons.begin(), cfg.horizons.end()));
  o.full_history = cfg.full_history;
  return o;
}

PipelineResult pipeline_all(const PipelineConfig& cfg, const std::string& out_dir, unsigned jobs, std::ostream* log) {
  cfg.validate();
  namespace fs = std::filesystem;
  PipelineResult res;
  std::error_code ec;
  fs::create_directories(fs::path(out_dir) / "models", ec);
  if (ec) throw IoError("cannot create " + out_dir + ": " + ec.message());
  auto path = [&](const std::string& name) { return (fs::path(out_dir) / name).string(); };
  res.trace_path = path("traces.jsonl");
  res.profile_path = path("traces.profiles.jsonl");
  res.split_path = path("split.tsv");
  res.featurized_path = path("featurized.tsv");
  res.vocab_path = path("vocab.txt");
  res.graph_path = path("graph.txt");
  res.report_path = path("report.txt");

  Dataset data = stage("simulate", log, [&] {
    Dataset d = simulate_dataset(cfg.customers, cfg.sim, jobs);
    write_dataset(d, res.trace_path, res.profile_path);
    // Continue from the files so the run matches a stage-by-stage CLI run.
    return read_dataset(res.trace_path, res.profile_path);
  });
  res.dataset_hash = dataset_hash(data);
  res.events = data.event_count();

  Split sp = stage("split", log, [&] {
    Split s = split_dataset(data.profiles.size(), cfg.fractions, cfg.split_seed);
    save_split(res.split_path, s, data);
    return s;
  });

  std::vector<CustomerPairs> customers;
  Vocab vocab;
  stage("featurize", log, [&] {
    customers = featurize(data);
    std::ofstream out(res.featurized_path);
    if (!out) throw IoError("cannot write " + res.featurized_path);
    write_featurized_header(out);
    for (const auto& c : customers) write_featurized(out, c.profile.customer_id, c.pairs);
    if (!out) throw IoError("error writing " + res.featurized_path);
    vocab = build_vocab(pair_corpus(customers, sp.train), cfg.vocab_min_count);
    vocab.save(res.vocab_path);
    return 0;
  });
  res.vocab_size = vocab.size();

  bool need_graph = std::find(cfg.modes.begin(), cfg.modes.end(), EncodingMode::graph) != cfg.modes.end();
  StateGraph graph;
  GraphContext ctx;
  if (need_graph) {
    stage("graph", log, [&] {
      graph = build_state_graph(pair_corpus(customers, sp.train), cfg.graph_min_count);
      graph.save(res.graph_path);
      ctx = GraphContext::from(graph);
      return 0;
    });
    res.graph = graph_stats(graph);
  }

  for (Task task : cfg.tasks)
    for (EncodingMode mode : cfg.modes) {
      const StateGraph* g = mode == EncodingMode::graph ? &graph : nullptr;
      const GraphContext* gc = mode == EncodingMode::graph ? &ctx : nullptr;
      SampleOptions so = sample_options(cfg, task, mode);
      std::string tm = std::string(to_string(task)) + "-" + std::string(to_string(mode));
      std::vector<Sample> tr, va, te;
      stage("samples " + tm, log, [&] {
        tr = build_samples(customers, sp.train, vocab, &graph, so);
        va = build_samples(customers, sp.validation, vocab, &graph, so);
        te = build_samples(customers, sp.test, vocab, &graph, so);
        if (tr.empty() || va.empty() || te.empty()) throw EmptyData("a partition produced no windows");
        return 0;
      });
      for (std::uint64_t seed : cfg.seeds) {
        RunResult run;
        run.task = task;
        run.mode = mode;
        run.seed = seed;
        std::string name = run_name(task, mode, seed);
        run.checkpoint_path = path("models/" + name + ".bin");
        run.loss_csv_path = path("models/" + name + ".loss.csv");
        run.report_path = path("models/" + name + ".report.txt");
        TrainConfig tc = cfg.train;
        tc.task = so.spec;
        tc.mode = mode;
        tc.seed = seed;
        TrainResult trained = stage("train " + name, log, [&] {
          TrainResult t = train(tr, va, tc, gc);
          save_checkpoint(run.checkpoint_path, t.params, tc.task);
          save_sidecar(run.checkpoint_path + ".config", TrainSidecar{tc, cfg.stride, cfg.full_history,
                                                                   static_cast<int>(t.records.size()), t.best_epoch});
          return t;
        });
        run.records = trained.records;
        run.report = stage("eval " + name, log, [&] {
          MetricsReport r;
          switch (task) {
            case Task::goal: r = evaluate_goal(trained.params, te, gc, jobs); break;
            case Task::type: r = evaluate_type(trained.params, te, gc, jobs, cfg.per_customer_type); break;
            case Task::trajectory:
              r = evaluate_trajectory(trained.params, te, vocab, g, gc, cfg.horizons, jobs);
              break;
          }
          r.fingerprint = report_fingerprint(tc, res.dataset_hash);
          r.train_customers = sp.train.size();
          r.validation_customers = sp.validation.size();
          r.test_customers = sp.test.size();
          r.train_samples = tr.size();
          r.validation_samples = va.size();
          r.epochs_run = static_cast<int>(trained.records.size());
          r.best_epoch = trained.best_epoch;
          write_outputs(r, trained.records, run.report_path, run.loss_csv_path);
          return r;
        });
        if (log) {
          *log << "  " << name << ":";
          for (const auto& h : run.report.heads) *log << " " << h.name << "=" << fmt("%.4f", h.accuracy);
          *log << " (epochs " << run.report.epochs_run << ", best " << run.report.best_epoch << ")\n" << std::flush;
        }
        res.runs.push_back(std::move(run));
      }
    }

  stage("report", log, [&] {
    std::ofstream out(res.report_path);
    if (!out) throw IoError("cannot write " + res.report_path);
    out << consolidated_report(cfg, res);
    if (!out) throw IoError("error writing " + res.report_path);
    return 0;
  });
  return res;
}

std::string consolidated_report(const PipelineConfig& cfg, const PipelineResult& r) {
  namespace fs = std::filesystem;
  std::ostringstream o;
  o << "# consolidated report\n";
  o << "config_fingerprint = " << hex64(cfg.fingerprint()) << "\n";
  o << "dataset_hash = " << hex64(r.dataset_hash) << "\n";
  o << "customers = " << cfg.customers << "\n";
  o << "events = " << r.events << "\n";
  o << "vocab_size = " << r.vocab_size << "\n";
  o << "graph_nodes = " << r.graph.nodes << "\n";
  o << "graph_edges = " << r.graph.edges << "\n";
  o << "seeds = " << join(cfg.seeds, [](std::uint64_t s) { return std::to_string(s); }) << "\n";
  auto has = [&](Task t, EncodingMode m) {
    return std::any_of(r.runs.begin(), r.runs.end(), [&](const RunResult& x) { return x.task == t && x.mode == m; });
  };
  for (Task task : cfg.tasks) {
    o << "\n[" << to_string(task) << "]\n";
    bool both = has(task, EncodingMode::bow) && has(task, EncodingMode::graph);
    std::vector<std::string> heads;
    for (const auto& run : r.runs)
      if (run.task == task) {
        for (const auto& h : run.report.heads) heads.push_back(h.name);
        break;
      }
    char line[160];
    std::snprintf(line, sizeof line, "%-18s %10s %10s %10s\n", "head", "bow", "graph", both ? "graph-bow" : "");
    o << line;
    for (const auto& h : heads) {
      std::string b = has(task, EncodingMode::bow) ? fmt("%.6f", r.mean_accuracy(task, EncodingMode::bow, h)) : "-";
      std::string g = has(task, EncodingMode::graph) ? fmt("%.6f", r.mean_accuracy(task, EncodingMode::graph, h)) : "-";
      std::string d = both ? fmt("%+.6f", r.mean_accuracy(task, EncodingMode::graph, h) -
                                              r.mean_accuracy(task, EncodingMode::bow, h))
                           : "";
      std::snprintf(line, sizeof line, "%-18s %10s %10s %10s\n", h.c_str(), b.c_str(), g.c_str(), d.c_str());
      o << line;
    }
    o << "runs:\n";
    for (const auto& run : r.runs) {
      if (run.task != task) continue;
      o << "  " << run_name(run.task, run.mode, run.seed) << ":";
      for (const auto& h : run.report.heads) o << " " << h.name << "=" << fmt("%.6f", h.accuracy);
      o << " epochs=" << run.report.epochs_run << " best=" << run.report.best_epoch;
      o << " loss_curve=" << fs::path(run.loss_csv_path).lexically_relative(fs::path(r.report_path).parent_path()).string()
        << "\n";
    }
  }
  return o.str();
}

}  // namespace custpred
