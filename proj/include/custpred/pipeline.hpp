#pragma once

// End-to-end run: simulate, split, featurize, build the state graph, train
// both encodings on every task and seed, evaluate, and consolidate.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "custpred/harness.hpp"

namespace custpred {

// Pipeline config file: `key = value` lines.
//   customers, seeds, tasks, modes, horizons, split.seed, split.fractions,
//   graph.min_count, vocab.min_count, samples.stride, samples.full_history,
//   eval.per_customer, sim.<SimConfig key>, train.<TrainConfig key>
// train.task, train.mode and train.seed are set per run.
struct PipelineConfig {
  std::size_t customers = 2000;
  SimConfig sim;
  SplitFractions fractions;
  std::uint64_t split_seed = 0;
  std::uint64_t graph_min_count = 10;
  std::uint64_t vocab_min_count = 1;
  std::size_t stride = 20;
  bool full_history = false;
  bool per_customer_type = false;
  TrainConfig train;
  std::vector<std::uint64_t> seeds{0};
  std::vector<Task> tasks{Task::goal, Task::type, Task::trajectory};
  std::vector<EncodingMode> modes{EncodingMode::bow, EncodingMode::graph};
  std::vector<int> horizons{1, 5, 15};

  void validate() const;
  std::string to_text() const;
  std::uint64_t fingerprint() const;
  static PipelineConfig from_config(KeyValueConfig& kv);
  static PipelineConfig load(const std::string& path);
};

struct RunResult {
  Task task = Task::goal;
  EncodingMode mode = EncodingMode::bow;
  std::uint64_t seed = 0;
  MetricsReport report;
  std::vector<EpochRecord> records;
  std::string checkpoint_path;
  std::string loss_csv_path;
  std::string report_path;
};

struct PipelineResult {
  std::string trace_path;
  std::string profile_path;
  std::string split_path;
  std::string featurized_path;
  std::string vocab_path;
  std::string graph_path;
  std::string report_path;
  std::uint64_t dataset_hash = 0;
  std::size_t events = 0;
  std::size_t vocab_size = 0;
  GraphStats graph;
  std::vector<RunResult> runs;

  // Mean test accuracy of a head over seeds.
  double mean_accuracy(Task task, EncodingMode mode, std::string_view head) const;
};

// Writes every artifact under `out_dir` (created if missing). Progress goes
// to `log` when given. A failing stage is rethrown with its name prefixed.
PipelineResult pipeline_all(const PipelineConfig& cfg, const std::string& out_dir, unsigned jobs = 1,
                            std::ostream* log = nullptr);

// Side-by-side bow / graph table per task (means over seeds, then per seed).
std::string consolidated_report(const PipelineConfig& cfg, const PipelineResult& r);

// Shared by the CLI stages and the pipeline: sample options for a task.
SampleOptions sample_options(const PipelineConfig& cfg, Task task, EncodingMode mode);

}  // namespace custpred
