#pragma once

// Semi-synthetic customer trace generator.
//
// A customer is a typed profile (income, fail behavior, digital behavior).
// Each session picks a channel from the digital-behavior channel mix, draws
// goals conditioned on income, and walks the interface state machine until
// every active goal is satisfied. In-person channels (teller, banker, atm)
// are flat and only offer operations.

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "custpred/common.hpp"
#include "custpred/trace.hpp"

namespace custpred {

enum class Income : std::uint8_t { high, medium, low, standard };
enum class FailBehavior : std::uint8_t { rarely, often, no_failure };
enum class DigitalBehavior : std::uint8_t { traditional, digital, mixed };

inline constexpr std::size_t kIncomeCount = 4;
inline constexpr std::size_t kFailCount = 3;
inline constexpr std::size_t kDigitalCount = 3;

std::string_view to_string(Income v);
std::string_view to_string(FailBehavior v);
std::string_view to_string(DigitalBehavior v);
std::optional<Income> income_from_string(std::string_view s);
std::optional<FailBehavior> fail_behavior_from_string(std::string_view s);
std::optional<DigitalBehavior> digital_behavior_from_string(std::string_view s);

struct CustomerProfile {
  std::uint64_t customer_id = 0;
  Income income = Income::standard;
  FailBehavior fail_behavior = FailBehavior::rarely;
  DigitalBehavior digital_behavior = DigitalBehavior::mixed;
  bool operator==(const CustomerProfile&) const = default;
};

// e.g. "low-rarely-digital"
std::string type_name(const CustomerProfile& p);

struct GoalLabel {
  bool check_info = false;
  bool change_info = false;
  std::vector<std::string> operational;  // sorted, unique operation names
  bool operator==(const GoalLabel&) const = default;
  bool empty() const { return !check_info && !change_info && operational.empty(); }
};

enum class GoalCategory : std::uint8_t { check_info, change_info, operational };
inline constexpr std::size_t kGoalCategoryCount = 3;

using ChannelProbs = std::array<double, 5>;  // web, mobile, teller, banker, atm

struct SimConfig {
  // Profile attribute distributions.
  std::array<double, kIncomeCount> income_probs{0.25, 0.25, 0.25, 0.25};
  std::array<double, kFailCount> fail_behavior_probs{1.0 / 3, 1.0 / 3, 1.0 / 3};
  std::array<double, kDigitalCount> digital_behavior_probs{1.0 / 3, 1.0 / 3, 1.0 / 3};

  // Indexed by DigitalBehavior.
  std::array<ChannelProbs, kDigitalCount> channel_probs{{
      {0.02, 0.02, 0.45, 0.30, 0.21},  // traditional
      {0.70, 0.26, 0.01, 0.01, 0.02},  // digital
      {0.10, 0.45, 0.10, 0.05, 0.30},  // mixed
  }};
  // Probability that a goal-directed step is preceded by a failed detour,
  // indexed by FailBehavior.
  std::array<double, kFailCount> failure_probs{0.30, 0.85, 0.0};
  // Distribution of a session's primary goal category, indexed by Income.
  std::array<std::array<double, kGoalCategoryCount>, kIncomeCount> goal_probs{{
      {0.30, 0.45, 0.25},  // high
      {0.35, 0.40, 0.25},  // medium
      {0.40, 0.15, 0.45},  // low
      {0.45, 0.20, 0.35},  // standard
  }};
  // Chance that a session pursues a second goal category.
  double multi_goal_prob = 0.2;
  // Weight multiplier for income-preferred targets and operations (1 = none).
  double income_affinity = 5.0;

  std::int64_t session_count_min = 1;
  std::int64_t session_count_max = 1000;
  std::int64_t events_per_customer_target = 300;
  std::int64_t base_tick_seconds = 256;
  std::int64_t start_time = 1640995200;  // 2022-01-01 00:00:00 UTC
  std::uint64_t seed = 0;

  void validate() const;
  // Canonical `key = value` text; parse(to_text()) reproduces the config.
  std::string to_text() const;
  std::uint64_t fingerprint() const;

  // Reads keys under `prefix` (e.g. "sim."); unknown keys under the prefix are
  // rejected when `strict` is set.
  static SimConfig from_config(KeyValueConfig& kv, const std::string& prefix = "", bool strict = true);
  static SimConfig load(const std::string& path);
};

struct Trajectory {
  std::uint64_t customer_id = 0;
  std::vector<Event> events;
  std::vector<std::uint32_t> session_of_event;  // parallel to events
  std::vector<GoalLabel> session_goals;         // indexed by session id
};

struct Dataset {
  std::vector<CustomerProfile> profiles;  // ordered by customer_id
  std::vector<Trajectory> trajectories;   // parallel to profiles
  std::size_t event_count() const;
  std::size_t session_count() const;
};

CustomerProfile sample_profile(Rng& rng, const SimConfig& config, std::uint64_t customer_id = 0);

// When `channel` is an in-person channel only operational goals are
// available, so the category draw is restricted to them.
GoalLabel sample_goals(const CustomerProfile& profile, Rng& rng, const SimConfig& config,
                       std::optional<Channel> channel = std::nullopt);

// Channel is drawn from the profile's channel mix among the channels on which
// every goal is reachable. Throws ConfigError when the goal label is empty or
// no channel with positive probability can satisfy it.
std::vector<Event> simulate_session(const CustomerProfile& profile, const GoalLabel& goals, Rng& rng,
                                    const SimConfig& config, std::int64_t start_time);
std::vector<Event> simulate_session(const CustomerProfile& profile, const GoalLabel& goals, Rng& rng,
                                    const SimConfig& config, std::int64_t start_time, Channel channel);

Trajectory simulate_customer(const CustomerProfile& profile, Rng& rng, const SimConfig& config);

// Per-customer streams depend only on (config.seed, customer_id).
Dataset simulate_dataset(std::size_t n_customers, const SimConfig& config, unsigned jobs = 1);

// Goals a session provably pursued, recovered from its events.
GoalLabel observed_goals(std::span<const Event> session);

// --- Files -------------------------------------------------------------------
// Trace file: JSON lines with fields customer_id, ts ("YYYY-MM-DD HH:MM:SS"),
// event, session_id, goal_check, goal_change, goal_ops (comma separated).
// Profile file: JSON lines with customer_id, income, fail_behavior,
// digital_behavior.
std::string format_timestamp(std::int64_t ts);
std::int64_t parse_timestamp(std::string_view s);

void write_traces(std::ostream& out, const Dataset& d);
void write_profiles(std::ostream& out, const Dataset& d);
void write_dataset(const Dataset& d, const std::string& trace_path, const std::string& profile_path);
// Profiles are optional; when absent, profiles hold only customer ids.
Dataset read_dataset(const std::string& trace_path, const std::optional<std::string>& profile_path);
Dataset read_traces(std::istream& in);
std::vector<CustomerProfile> read_profiles(std::istream& in);

}  // namespace custpred
