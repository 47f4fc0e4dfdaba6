#pragma once

// Customer-level splits, sample construction, the training loop with early
// stopping, evaluation of the three tasks and report / loss-curve output.

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "custpred/encode.hpp"
#include "custpred/graph.hpp"
#include "custpred/nn.hpp"
#include "custpred/sim.hpp"

namespace custpred {

class BadFractions : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

struct SplitFractions {
  double train = 0.70;
  double validation = 0.15;
  double test = 0.15;
};

enum class Part : std::uint8_t { train, validation, test };
std::string_view to_string(Part p);
std::optional<Part> part_from_string(std::string_view s);

// Customer indices (positions in the dataset) per partition, each sorted.
struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
  std::vector<std::size_t> test;
  SplitFractions fractions;
  std::uint64_t seed = 0;

  const std::vector<std::size_t>& part(Part p) const;
};

// Seeded permutation, then the first round(n * train) customers go to train,
// the next round(n * validation) to validation and the rest to test.
Split split_dataset(std::size_t n_customers, const SplitFractions& f, std::uint64_t seed);

// Split file: `# split seed=S train=F validation=F test=F` then one
// `customer_id<TAB>part` line per customer in dataset order.
void write_split(std::ostream& out, const Split& s, const Dataset& d);
Split read_split(std::istream& in, const Dataset& d);
void save_split(const std::string& path, const Split& s, const Dataset& d);
Split load_split(const std::string& path, const Dataset& d);

// A customer's trajectory as state-action pairs with per-pair session goals.
struct CustomerPairs {
  CustomerProfile profile;
  std::vector<StateActionPair> pairs;
  std::vector<GoalLabel> pair_goals;  // goal of the session each pair belongs to
};
std::vector<CustomerPairs> featurize(const Dataset& d);

// Pair sequences of the given customers, for vocabulary and graph building.
std::vector<std::vector<StateActionPair>> pair_corpus(std::span<const CustomerPairs> customers,
                                                      std::span<const std::size_t> indices);

struct SampleOptions {
  TaskSpec spec;
  EncodingMode mode = EncodingMode::bow;
  std::size_t stride = 20;
  std::size_t max_future = 15;  // continuation tokens kept for rollout scoring
  bool full_history = false;    // graph indicators accumulate over the whole trajectory
};

struct Sample {
  EncodedWindow x;
  Target y;
  std::size_t customer = 0;                     // index into the featurized dataset
  std::span<const StateActionPair> history;     // views into CustomerPairs::pairs
  std::span<const StateActionPair> before;      // pairs preceding the window
  std::vector<int> future;                      // continuation tokens, at most max_future
  bool full_history = false;
};

// Windows of the listed customers. Goal label: goals of the session holding
// the window's final pair. Type label: the profile. Trajectory label: the
// next token; windows without a continuation are dropped for that task.
std::vector<Sample> build_samples(std::span<const CustomerPairs> customers, std::span<const std::size_t> indices,
                                  const Vocab& v, const StateGraph* g, const SampleOptions& opt);

struct TrainConfig {
  TaskSpec task;
  EncodingMode mode = EncodingMode::bow;
  double lr = 0.01;
  int max_epochs = 5000;
  int patience = 50;
  int batch_size = 32;
  std::uint64_t seed = 0;
  int hidden = 64;
  int gnn_hidden = 16;
  int gnn_rounds = 2;
  GnnFusion fusion = GnnFusion::step;
  // Training windows per epoch drawn from a reshuffled stream; 0 = one full
  // pass over the training set.
  std::size_t epoch_size = 0;
  // Validation windows scored per epoch (evenly spaced subset); 0 = all.
  std::size_t validation_limit = 0;

  void validate() const;
  std::string to_text() const;
  std::uint64_t fingerprint() const;
  // Reads keys under `prefix`; unknown keys under the prefix are an error when strict.
  static TrainConfig from_config(KeyValueConfig& kv, const std::string& prefix = "", bool strict = true);
};

ModelDims model_dims(const TrainConfig& cfg, int vocab_size, int nodes);

// Head names for a task, in logit / report order.
std::vector<std::string> head_names(Task t);

struct EpochRecord {
  int epoch = 0;  // 1-based
  double train_loss = 0;
  double validation_loss = 0;
  std::vector<double> train_accuracy;       // per head
  std::vector<double> validation_accuracy;  // per head
};

struct TrainResult {
  ModelParams params;  // from the best validation epoch
  std::vector<EpochRecord> records;
  int best_epoch = 0;
};

TrainResult train(std::span<const Sample> train_set, std::span<const Sample> validation_set, const TrainConfig& cfg,
                  const GraphContext* g = nullptr);

// Mean loss and per-head accuracy; trajectory accuracy is next-token (teacher forced).
struct LossAndAccuracy {
  double loss = 0;
  std::vector<double> accuracy;
};
LossAndAccuracy score(const ModelParams& p, std::span<const Sample> samples, const GraphContext* g = nullptr,
                      unsigned jobs = 1);

struct HeadMetric {
  std::string name;
  double accuracy = 0;
  std::size_t count = 0;
};

struct MetricsReport {
  Task task = Task::goal;
  EncodingMode mode = EncodingMode::bow;
  std::vector<HeadMetric> heads;
  std::size_t train_samples = 0;
  std::size_t validation_samples = 0;
  std::size_t test_samples = 0;
  std::size_t train_customers = 0;
  std::size_t validation_customers = 0;
  std::size_t test_customers = 0;
  int epochs_run = 0;
  int best_epoch = 0;
  std::string fingerprint;

  const HeadMetric& head(std::string_view name) const;
};

MetricsReport evaluate_goal(const ModelParams& p, std::span<const Sample> test, const GraphContext* g = nullptr,
                            unsigned jobs = 1);
// With `per_customer`, each customer's windows vote (ties to the lowest
// class) and the majority is scored once per customer.
MetricsReport evaluate_type(const ModelParams& p, std::span<const Sample> test, const GraphContext* g = nullptr,
                            unsigned jobs = 1, bool per_customer = false);
inline constexpr std::array<int, 3> kDefaultHorizons = {1, 5, 15};

// Greedy rollouts scored per position and averaged over windows; windows with
// fewer than k continuation tokens are skipped for horizon k.
MetricsReport evaluate_trajectory(const ModelParams& p, std::span<const Sample> test, const Vocab& v,
                                  const StateGraph* graph = nullptr, const GraphContext* g = nullptr,
                                  std::span<const int> horizons = kDefaultHorizons, unsigned jobs = 1);

// Hash of the dataset's serialized traces and profiles.
std::uint64_t dataset_hash(const Dataset& d);
std::string report_fingerprint(const TrainConfig& cfg, std::uint64_t dataset_hash);

// Report: `key = value` lines. Loss CSV: `epoch,split,loss,acc_<head>...`
// with one train and one validation row per epoch.
void write_report(std::ostream& out, const MetricsReport& r);
MetricsReport read_report(std::istream& in);
void write_loss_csv(std::ostream& out, Task task, std::span<const EpochRecord> records);
void write_outputs(const MetricsReport& r, std::span<const EpochRecord> records, const std::string& report_path,
                   const std::string& loss_csv_path);

// Written next to a checkpoint as `<checkpoint>.config`: what `eval` needs to
// rebuild the windows the model was trained on.
struct TrainSidecar {
  TrainConfig cfg;
  std::size_t stride = 20;
  bool full_history = false;
  int epochs_run = 0;
  int best_epoch = 0;
};

void save_sidecar(const std::string& path, const TrainSidecar& s);
TrainSidecar load_sidecar(const std::string& path);

}  // namespace custpred
