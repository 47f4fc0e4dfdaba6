#include "custpred/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "custpred/pipeline.hpp"

namespace custpred {

namespace {

namespace fs = std::filesystem;

constexpr const char* kTraceFormat = R"(
Files:
  traces     JSON lines: customer_id, ts ("YYYY-MM-DD HH:MM:SS" UTC), event
             ("channel: phrase"), session_id, goal_check, goal_change, goal_ops
  profiles   JSON lines: customer_id, income, fail_behavior, digital_behavior)";

constexpr const char* kSplitFormat = R"(
  split      "# split seed=S train=F validation=F test=F" then
             "customer_id<TAB>train|validation|test" per customer
  vocab      "# vocab N" then one token per line, index = line number (0 = <OOV>)
  featurized TSV: customer_id index primary secondary channel action_class action_target)";

constexpr const char* kGraphFormat = R"(
  graph      "# nodes N", N lines "index primary secondary",
             "# edges E", E lines "src dst action count")";

constexpr const char* kModelFormat = R"(
  checkpoint binary: "CPMODEL1", u32 version, u32 task mode fusion vocab hidden
             gnn_hidden gnn_rounds nodes n_h n_f, u64 count, count f64 values,
             u64 FNV-1a checksum (all little-endian)
  .config    sidecar next to the checkpoint: training config as key = value
  loss CSV   epoch,split,loss,acc_<head>... (one train and one validation row per epoch)
  report     key = value lines: task, mode, fingerprint, sample counts,
             accuracy.<head>, count.<head>)";

std::string out_dir() {
  const char* v = std::getenv(kOutDirEnv);
  return v && *v ? std::string(v) : std::string(".");
}

std::string in_out_dir(const std::string& name) { return (fs::path(out_dir()) / name).string(); }

std::string profiles_for(const std::string& traces) {
  fs::path p(traces);
  std::string stem = p.extension() == ".jsonl" ? p.replace_extension().string() : p.string();
  return stem + ".profiles.jsonl";
}

std::string with_suffix(const std::string& path, const std::string& suffix) {
  fs::path p(path);
  return p.replace_extension().string() + suffix;
}

// Loads traces; profiles come from `profiles` or, when empty, from the
// default sibling file if it exists.
Dataset load_data(const std::string& traces, const std::string& profiles, bool need_profiles) {
  std::optional<std::string> prof;
  if (!profiles.empty()) {
    prof = profiles;
  } else if (fs::exists(profiles_for(traces))) {
    prof = profiles_for(traces);
  } else if (need_profiles) {
    throw IoError("no profile file given and `" + profiles_for(traces) + "` does not exist");
  }
  return read_dataset(traces, prof);
}

void apply_sets(KeyValueConfig& kv, const std::vector<std::string>& sets) {
  for (const auto& s : sets) {
    auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
    kv.set(std::string(trim(std::string_view(s).substr(0, eq))), std::string(trim(std::string_view(s).substr(eq + 1))));
  }
}

KeyValueConfig base_config(const std::string& path, const std::vector<std::string>& sets) {
  KeyValueConfig kv = path.empty() ? KeyValueConfig::parse("") : KeyValueConfig::load(path);
  apply_sets(kv, sets);
  return kv;
}

void print_fingerprint(std::ostream& out, const std::string& fp) { out << "fingerprint " << fp << "\n"; }

struct Common {
  std::string traces;
  std::string profiles;
  std::string split;
  std::string vocab;
  std::string graph;
  unsigned jobs = 1;
};

void add_inputs(CLI::App* app, Common& c, bool split, bool vocab_graph) {
  app->add_option("--traces", c.traces, "Trace file (default $" + std::string(kOutDirEnv) + "/traces.jsonl)");
  app->add_option("--profiles", c.profiles, "Profile file (default <traces stem>.profiles.jsonl)");
  if (split) app->add_option("--split", c.split, "Split file (default $" + std::string(kOutDirEnv) + "/split.tsv)");
  if (vocab_graph) {
    app->add_option("--vocab", c.vocab, "Vocabulary file (default $" + std::string(kOutDirEnv) + "/vocab.txt)");
    app->add_option("--graph", c.graph, "State graph file, graph mode (default $" + std::string(kOutDirEnv) + "/graph.txt)");
  }
}

void fill_defaults(Common& c) {
  if (c.traces.empty()) c.traces = in_out_dir("traces.jsonl");
  if (c.split.empty()) c.split = in_out_dir("split.tsv");
  if (c.vocab.empty()) c.vocab = in_out_dir("vocab.txt");
  if (c.graph.empty()) c.graph = in_out_dir("graph.txt");
}

// Flags of `train` that map onto TrainConfig keys.
struct TrainFlags {
  std::map<std::string, std::string> values;
  std::vector<std::pair<std::string, CLI::Option*>> options;
  void add(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help) {
    options.emplace_back(key, app->add_option(flag, values[key], help));
  }
  void apply(KeyValueConfig& kv) const {
    for (const auto& [key, opt] : options)
      if (opt->count() > 0) kv.set(key, values.at(key));
  }
};

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Customer trace simulation, state graphs and goal / type / trajectory prediction.", "custpred"};
  app.require_subcommand(1);
  app.footer(std::string("Exit codes: 0 ok, 1 usage, 2 data/config error, 3 internal error.\n"
                         "Default input/output directory: $") + kOutDirEnv + " (else the working directory).");

  // simulate
  auto* sim = app.add_subcommand("simulate", "Generate customer traces and profiles");
  std::size_t customers = 0;
  std::uint64_t sim_seed = 0;
  std::string sim_config, sim_out, sim_profiles;
  std::vector<std::string> sim_sets;
  unsigned sim_jobs = 1;
  sim->add_option("--customers", customers, "Number of customers")->required()->check(CLI::PositiveNumber);
  auto* sim_seed_opt = sim->add_option("--seed", sim_seed, "Random seed (overrides the config's seed)");
  sim->add_option("--config", sim_config, "Simulator config file (key = value)");
  sim->add_option("--set", sim_sets, "Override a simulator config key, key=value (repeatable)");
  sim->add_option("--out", sim_out, "Trace file (default $" + std::string(kOutDirEnv) + "/traces.jsonl)");
  sim->add_option("--profiles", sim_profiles, "Profile file (default <out stem>.profiles.jsonl)");
  sim->add_option("--jobs", sim_jobs, "Worker threads")->check(CLI::PositiveNumber);
  sim->footer(kTraceFormat);

  // featurize
  auto* feat = app.add_subcommand("featurize", "Split customers, write featurized pairs and the train vocabulary");
  Common fc;
  std::uint64_t split_seed = 0;
  std::vector<double> fractions{0.70, 0.15, 0.15};
  std::uint64_t vocab_min = 1;
  std::string feat_dir;
  add_inputs(feat, fc, false, false);
  feat->add_option("--split-seed", split_seed, "Seed of the customer permutation");
  feat->add_option("--fractions", fractions, "train,validation,test fractions")->delimiter(',')->expected(3);
  feat->add_option("--vocab-min-count", vocab_min, "Minimum train count for a vocabulary token");
  feat->add_option("--out-dir", feat_dir, "Output directory for split.tsv, featurized.tsv, vocab.txt");
  feat->footer(std::string(kTraceFormat) + kSplitFormat);

  // graph
  auto* gr = app.add_subcommand("graph", "Build the state graph from the train partition");
  Common gc;
  std::uint64_t min_count = 10;
  std::string graph_out;
  add_inputs(gr, gc, true, false);
  gr->add_option("--min-count", min_count, "Keep nodes and edges seen more than this many times");
  gr->add_option("--out", graph_out, "Graph file (default $" + std::string(kOutDirEnv) + "/graph.txt)");
  gr->footer(std::string(kSplitFormat) + kGraphFormat);

  // train
  auto* tr = app.add_subcommand("train", "Train a model on the train partition with early stopping");
  Common tc;
  std::string train_config, train_out, loss_csv;
  std::vector<std::string> train_sets;
  std::size_t stride = 20;
  bool full_history = false;
  add_inputs(tr, tc, true, true);
  TrainFlags tf;
  tf.add(tr, "--task", "task", "goal | type | trajectory");
  tf.add(tr, "--mode", "mode", "bow | graph");
  tf.add(tr, "--nh", "n_h", "History window length");
  tf.add(tr, "--nf", "n_f", "Future horizon (trajectory)");
  tf.add(tr, "--seed", "seed", "Initialization / shuffling seed");
  tf.add(tr, "--lr", "lr", "Adam learning rate");
  tf.add(tr, "--epochs", "max_epochs", "Maximum epochs");
  tf.add(tr, "--patience", "patience", "Early-stopping patience in epochs");
  tf.add(tr, "--batch-size", "batch_size", "Mini-batch size");
  tf.add(tr, "--hidden", "hidden", "LSTM hidden size");
  tf.add(tr, "--gnn-hidden", "gnn_hidden", "GNN hidden size");
  tf.add(tr, "--gnn-rounds", "gnn_rounds", "Message-passing rounds");
  tf.add(tr, "--fusion", "fusion", "step | final: where the graph readout enters");
  tf.add(tr, "--epoch-size", "epoch_size", "Training windows per epoch (0 = full pass)");
  tf.add(tr, "--validation-limit", "validation_limit", "Validation windows scored per epoch (0 = all)");
  tf.options[0].second->check(CLI::IsMember({"goal", "type", "trajectory"}));
  tf.options[1].second->check(CLI::IsMember({"bow", "graph"}));
  tf.options[12].second->check(CLI::IsMember({"step", "final"}));
  tr->add_option("--config", train_config, "Training config file (key = value, same keys as the .config sidecar)");
  tr->add_option("--set", train_sets, "Override a training config key, key=value (repeatable)");
  tr->add_option("--stride", stride, "Window stride")->check(CLI::PositiveNumber);
  tr->add_flag("--full-history", full_history, "Graph indicators accumulate over the customer's whole past");
  tr->add_option("--out", train_out, "Checkpoint (default $" + std::string(kOutDirEnv) + "/model.bin)");
  tr->add_option("--loss-csv", loss_csv, "Loss curve file (default <checkpoint stem>.loss.csv)");
  tr->footer(std::string(kSplitFormat) + kGraphFormat + kModelFormat);

  // eval
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a partition");
  Common ec;
  std::string checkpoint, report_out, part_name = "test";
  std::vector<int> horizons{1, 5, 15};
  bool per_customer = false;
  add_inputs(ev, ec, true, true);
  ev->add_option("--checkpoint", checkpoint, "Checkpoint (default $" + std::string(kOutDirEnv) + "/model.bin)");
  ev->add_option("--part", part_name, "Partition to score")->check(CLI::IsMember({"train", "validation", "test"}));
  ev->add_option("--horizons", horizons, "Trajectory horizons")->delimiter(',');
  ev->add_flag("--per-customer", per_customer, "Type task: majority vote over each customer's windows");
  ev->add_option("--report", report_out, "Metrics report (default <checkpoint stem>.report.txt)");
  ev->add_option("--jobs", ec.jobs, "Worker threads")->check(CLI::PositiveNumber);
  ev->footer(std::string(kModelFormat));

  // report
  auto* rep = app.add_subcommand("report", "Consolidate metrics reports into a bow vs graph table");
  std::vector<std::string> report_files;
  std::string report_table;
  rep->add_option("reports", report_files, "Metrics report files")->required();
  rep->add_option("--out", report_table, "Write the table here instead of standard output");

  // pipeline
  auto* pipe = app.add_subcommand("pipeline", "Run every stage end to end from one config");
  pipe->alias("all");
  std::string pipe_config, pipe_dir;
  unsigned pipe_jobs = 1;
  pipe->add_option("--config", pipe_config, "Pipeline config file")->required();
  pipe->add_option("--out-dir", pipe_dir, "Output directory (default $" + std::string(kOutDirEnv) + ")");
  pipe->add_option("--jobs", pipe_jobs, "Worker threads for simulation and evaluation")->check(CLI::PositiveNumber);
  pipe->footer(R"(
Config keys (key = value):
  customers, seeds (comma list), tasks, modes, horizons, split.seed,
  split.fractions, graph.min_count, vocab.min_count, samples.stride,
  samples.full_history, eval.per_customer,
  sim.<simulator key>, train.<training key except task, mode, seed>
Outputs: traces, split, featurized pairs, vocab, graph, models/<task>-<mode>-s<seed>.{bin,config,loss.csv,report.txt}, report.txt)");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << (app.get_subcommands().empty() ? app.help() : app.get_subcommands().front()->help());
    return 0;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    err << "run with --help for usage\n";
    return 1;
  }

  try {
    if (*sim) {
      KeyValueConfig kv = base_config(sim_config, sim_sets);
      if (sim_seed_opt->count() > 0) kv.set("seed", std::to_string(sim_seed));
      SimConfig cfg = SimConfig::from_config(kv, "", true);
      if (sim_out.empty()) sim_out = in_out_dir("traces.jsonl");
      if (sim_profiles.empty()) sim_profiles = profiles_for(sim_out);
      Dataset d = simulate_dataset(customers, cfg, sim_jobs);
      write_dataset(d, sim_out, sim_profiles);
      print_fingerprint(out, hex64(Fnv1a().add(cfg.to_text()).add(std::to_string(customers)).value()));
      out << "customers " << d.profiles.size() << " sessions " << d.session_count() << " events " << d.event_count()
          << "\n";
      out << "wrote " << sim_out << " " << sim_profiles << "\n";
    } else if (*feat) {
      fill_defaults(fc);
      if (feat_dir.empty()) feat_dir = out_dir();
      Dataset d = load_data(fc.traces, fc.profiles, false);
      Split s = split_dataset(d.profiles.size(), {fractions[0], fractions[1], fractions[2]}, split_seed);
      auto customers_pairs = featurize(d);
      std::error_code ecode;
      fs::create_directories(feat_dir, ecode);
      std::string split_path = (fs::path(feat_dir) / "split.tsv").string();
      std::string feat_path = (fs::path(feat_dir) / "featurized.tsv").string();
      std::string vocab_path = (fs::path(feat_dir) / "vocab.txt").string();
      save_split(split_path, s, d);
      {
        std::ofstream o(feat_path);
        if (!o) throw IoError("cannot write " + feat_path);
        write_featurized_header(o);
        for (const auto& c : customers_pairs) write_featurized(o, c.profile.customer_id, c.pairs);
      }
      Vocab v = build_vocab(pair_corpus(customers_pairs, s.train), vocab_min);
      v.save(vocab_path);
      print_fingerprint(out, hex64(Fnv1a()
                                       .add(hex64(dataset_hash(d)))
                                       .add(std::to_string(split_seed))
                                       .add(std::to_string(fractions[0]) + "," + std::to_string(fractions[1]) + "," +
                                            std::to_string(fractions[2]))
                                       .add(std::to_string(vocab_min))
                                       .value()));
      out << "train " << s.train.size() << " validation " << s.validation.size() << " test " << s.test.size()
          << " customers; vocab " << v.size() << " tokens (hash " << hex64(v.hash()) << ")\n";
      out << "wrote " << split_path << " " << feat_path << " " << vocab_path << "\n";
    } else if (*gr) {
      fill_defaults(gc);
      if (graph_out.empty()) graph_out = in_out_dir("graph.txt");
      Dataset d = load_data(gc.traces, gc.profiles, false);
      Split s = load_split(gc.split, d);
      auto cs = featurize(d);
      StateGraph g = build_state_graph(pair_corpus(cs, s.train), min_count);
      g.save(graph_out);
      GraphStats st = graph_stats(g);
      print_fingerprint(out, hex64(g.hash()));
      out << "nodes " << st.nodes << " edges " << st.edges << "\n";
      out << "degree histogram:";
      for (auto [deg, n] : st.degree_histogram) out << " " << deg << ":" << n;
      out << "\nwrote " << graph_out << "\n";
    } else if (*tr) {
      fill_defaults(tc);
      KeyValueConfig kv = base_config(train_config, train_sets);
      tf.apply(kv);
      TrainConfig cfg = TrainConfig::from_config(kv, "", true);
      if (train_out.empty()) train_out = in_out_dir("model.bin");
      if (loss_csv.empty()) loss_csv = with_suffix(train_out, ".loss.csv");
      Dataset d = load_data(tc.traces, tc.profiles, cfg.task.task == Task::type);
      Split s = load_split(tc.split, d);
      auto cs = featurize(d);
      Vocab v = Vocab::load(tc.vocab);
      StateGraph g;
      std::optional<GraphContext> ctx;
      if (cfg.mode == EncodingMode::graph) {
        g = StateGraph::load(tc.graph);
        ctx = GraphContext::from(g);
      }
      SampleOptions so;
      so.spec = cfg.task;
      so.mode = cfg.mode;
      so.stride = stride;
      so.full_history = full_history;
      auto train_set = build_samples(cs, s.train, v, &g, so);
      auto val_set = build_samples(cs, s.validation, v, &g, so);
      std::string fp = report_fingerprint(cfg, dataset_hash(d));
      print_fingerprint(out, fp);
      TrainResult r = train(train_set, val_set, cfg, ctx ? &*ctx : nullptr);
      save_checkpoint(train_out, r.params, cfg.task);
      save_sidecar(train_out + ".config",
                   TrainSidecar{cfg, stride, full_history, static_cast<int>(r.records.size()), r.best_epoch});
      std::ofstream csv(loss_csv);
      if (!csv) throw IoError("cannot write " + loss_csv);
      write_loss_csv(csv, cfg.task.task, r.records);
      const EpochRecord& best = r.records[static_cast<std::size_t>(r.best_epoch - 1)];
      out << "epochs " << r.records.size() << " best " << r.best_epoch << " train_loss " << best.train_loss
          << " validation_loss " << best.validation_loss << "\n";
      out << "wrote " << train_out << " " << train_out << ".config " << loss_csv << "\n";
    } else if (*ev) {
      fill_defaults(ec);
      if (checkpoint.empty()) checkpoint = in_out_dir("model.bin");
      if (report_out.empty()) report_out = with_suffix(checkpoint, ".report.txt");
      auto [params, spec] = load_checkpoint(checkpoint);
      TrainSidecar side = load_sidecar(checkpoint + ".config");
      const ModelDims& dims = params.dims();
      Dataset d = load_data(ec.traces, ec.profiles, dims.task == Task::type);
      Split s = load_split(ec.split, d);
      auto cs = featurize(d);
      Vocab v = Vocab::load(ec.vocab);
      if (static_cast<int>(v.size()) != dims.vocab)
        throw DataError("vocabulary has " + std::to_string(v.size()) + " tokens but the checkpoint expects " +
                        std::to_string(dims.vocab));
      StateGraph g;
      std::optional<GraphContext> ctx;
      if (dims.graph()) {
        g = StateGraph::load(ec.graph);
        if (static_cast<int>(g.node_count()) != dims.nodes)
          throw DataError("state graph has " + std::to_string(g.node_count()) + " nodes but the checkpoint expects " +
                          std::to_string(dims.nodes));
        ctx = GraphContext::from(g);
      }
      SampleOptions so;
      so.spec = spec;
      so.mode = dims.mode;
      so.stride = side.stride;
      so.full_history = side.full_history;
      if (dims.task == Task::trajectory)
        so.max_future = static_cast<std::size_t>(*std::max_element(horizons.begin(), horizons.end()));
      Part part = *part_from_string(part_name);
      auto samples = build_samples(cs, s.part(part), v, &g, so);
      const GraphContext* gp = ctx ? &*ctx : nullptr;
      MetricsReport r;
      switch (dims.task) {
        case Task::goal: r = evaluate_goal(params, samples, gp, ec.jobs); break;
        case Task::type: r = evaluate_type(params, samples, gp, ec.jobs, per_customer); break;
        case Task::trajectory: r = evaluate_trajectory(params, samples, v, &g, gp, horizons, ec.jobs); break;
      }
      r.fingerprint = report_fingerprint(side.cfg, dataset_hash(d));
      r.train_customers = s.train.size();
      r.validation_customers = s.validation.size();
      r.test_customers = s.test.size();
      r.epochs_run = side.epochs_run;
      r.best_epoch = side.best_epoch;
      std::ofstream o(report_out);
      if (!o) throw IoError("cannot write " + report_out);
      write_report(o, r);
      if (!o) throw IoError("error writing " + report_out);
      print_fingerprint(out, r.fingerprint);
      for (const auto& h : r.heads) out << h.name << " " << h.accuracy << " (" << h.count << ")\n";
      out << "wrote " << report_out << "\n";
    } else if (*rep) {
      std::vector<MetricsReport> reports;
      Fnv1a fp;
      for (const auto& f : report_files) {
        std::ifstream in(f);
        if (!in) throw IoError("cannot read " + f);
        reports.push_back(read_report(in));
        fp.add(reports.back().fingerprint);
      }
      std::ostringstream table;
      for (Task task : {Task::goal, Task::type, Task::trajectory}) {
        std::map<std::string, std::map<EncodingMode, std::pair<double, int>>> acc;
        std::vector<std::string> order;
        for (const auto& r : reports) {
          if (r.task != task) continue;
          for (const auto& h : r.heads) {
            if (!acc.count(h.name)) order.push_back(h.name);
            auto& cell = acc[h.name][r.mode];
            cell.first += h.accuracy;
            cell.second += 1;
          }
        }
        if (order.empty()) continue;
        table << "[" << to_string(task) << "]\n";
        char line[160];
        std::snprintf(line, sizeof line, "%-18s %10s %10s %10s\n", "head", "bow", "graph", "graph-bow");
        table << line;
        for (const auto& name : order) {
          auto cell = [&](EncodingMode m) -> std::optional<double> {
            auto it = acc[name].find(m);
            if (it == acc[name].end()) return std::nullopt;
            return it->second.first / it->second.second;
          };
          auto b = cell(EncodingMode::bow);
          auto g = cell(EncodingMode::graph);
          char bs[32] = "-", gs[32] = "-", ds[32] = "";
          if (b) std::snprintf(bs, sizeof bs, "%.6f", *b);
          if (g) std::snprintf(gs, sizeof gs, "%.6f", *g);
          if (b && g) std::snprintf(ds, sizeof ds, "%+.6f", *g - *b);
          std::snprintf(line, sizeof line, "%-18s %10s %10s %10s\n", name.c_str(), bs, gs, ds);
          table << line;
        }
      }
      print_fingerprint(out, hex64(fp.value()));
      if (report_table.empty()) {
        out << table.str();
      } else {
        std::ofstream o(report_table);
        if (!o) throw IoError("cannot write " + report_table);
        o << table.str();
        out << "wrote " << report_table << "\n";
      }
    } else if (*pipe) {
      PipelineConfig cfg = PipelineConfig::load(pipe_config);
      if (pipe_dir.empty()) pipe_dir = out_dir();
      print_fingerprint(out, hex64(cfg.fingerprint()));
      PipelineResult r = pipeline_all(cfg, pipe_dir, pipe_jobs, &err);
      out << consolidated_report(cfg, r);
      out << "wrote " << r.report_path << "\n";
    }
  } catch (const DataError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}

}  // namespace custpred
