#include "custpred/sim.hpp"

#include <algorithm>
#include <cmath>
#include <ctime>
#include <fstream>
#include <map>
#include <sstream>
#include <thread>

#include "json.hpp"

namespace custpred {

namespace {

constexpr std::array<std::string_view, kIncomeCount> kIncomeNames = {"high", "medium", "low", "standard"};
constexpr std::array<std::string_view, kFailCount> kFailNames = {"rarely", "often", "no-failure"};
constexpr std::array<std::string_view, kDigitalCount> kDigitalNames = {"traditional", "digital", "mixed"};

template <std::size_t N>
std::optional<std::size_t> lookup(const std::array<std::string_view, N>& names, std::string_view s) {
  for (std::size_t i = 0; i < N; ++i) {
    if (names[i] == s) return i;
  }
  return std::nullopt;
}

// ---- Interface model --------------------------------------------------------

struct MenuSpec {
  std::string_view name;
  std::string_view parent;  // empty: entered from root
  std::vector<std::string_view> info;
  std::vector<std::string_view> modify;
  std::vector<std::string_view> ops;
};

// Web and mobile share one menu tree. "root" is the landing page.
const std::vector<MenuSpec>& digital_menus() {
  static const std::vector<MenuSpec> menus = {
      {"root", "", {"balance", "messages"}, {}, {}},
      {"credit-card", "", {"credit-card-trans-history", "credit-card-trans-summary", "limit-credit-card"},
       {"limit-credit-card"}, {"make-payment"}},
      {"credit-score", "", {"credit-score-history", "credit-score-summary"}, {}, {}},
      {"offers", "", {"offers", "benefits"}, {}, {}},
      {"rewards", "", {"rewards-activity", "rewards-use-points"}, {}, {}},
      {"operations", "", {"trans-history", "trans-summary"}, {}, {"pay-bill", "make-payment", "exchange"}},
      {"settings", "", {}, {"password", "user-id"}, {}},
      {"alerts-maintenance", "settings", {"alerts-definition", "alerts-history"}, {"alerts-definition"}, {}},
      {"profile-maintenance", "settings", {"demographic"}, {"demographic"}, {}},
      {"contact-us", "", {"faq", "help-call", "help-email", "atm-branches"}, {}, {}},
      {"account-documents", "", {"documents"}, {}, {}},
  };
  return menus;
}

const MenuSpec& menu_spec(std::string_view name) {
  for (const auto& m : digital_menus()) {
    if (m.name == name) return m;
  }
  throw Error("unknown menu " + std::string(name));
}

std::vector<std::string_view> channel_operations(Channel c) {
  switch (c) {
    case Channel::web:
    case Channel::mobile: return {"pay-bill", "make-payment", "exchange"};
    case Channel::teller: return {"deposit-cash", "withdrawal", "exchange", "deposit-check", "pay-bill"};
    case Channel::banker: return {"make-payment", "exchange", "deposit-check", "withdrawal"};
    case Channel::atm: return {"deposit-cash", "withdrawal", "deposit-check"};
  }
  return {};
}

bool channel_offers(Channel c, std::string_view op) {
  auto ops = channel_operations(c);
  return std::find(ops.begin(), ops.end(), op) != ops.end();
}

// Targets each income group gravitates to; weighted by income_affinity.
struct Affinity {
  std::vector<std::string_view> info;
  std::vector<std::string_view> modify;
  std::vector<std::string_view> ops;
};

const Affinity& income_affinity(Income inc) {
  static const std::array<Affinity, kIncomeCount> table = {{
      {{"credit-card-trans-history", "credit-card-trans-summary", "limit-credit-card", "rewards-activity",
        "rewards-use-points", "offers", "benefits"},
       {"limit-credit-card", "alerts-definition"},
       {"exchange", "make-payment"}},
      {{"credit-card-trans-history", "credit-card-trans-summary", "alerts-definition", "alerts-history",
        "documents", "demographic"},
       {"alerts-definition", "demographic"},
       {"make-payment", "pay-bill", "deposit-check"}},
      {{"credit-score-history", "credit-score-summary", "balance", "trans-history", "help-call",
        "help-email"},
       {"password", "user-id"},
       {"withdrawal", "deposit-cash"}},
      {{"balance", "trans-summary", "messages", "faq", "atm-branches"},
       {"demographic", "password"},
       {"pay-bill", "deposit-cash", "withdrawal"}},
  }};
  return table[static_cast<std::size_t>(inc)];
}

double affinity_weight(const std::vector<std::string_view>& preferred, std::string_view item, double factor) {
  return std::find(preferred.begin(), preferred.end(), item) != preferred.end() ? factor : 1.0;
}

template <class T>
const T& pick_weighted(Rng& rng, const std::vector<T>& items, const std::vector<double>& weights) {
  return items[rng.categorical(weights)];
}

// ---- Session walker ---------------------------------------------------------

class SessionWriter {
 public:
  SessionWriter(std::int64_t start, Channel channel, std::int64_t tick, Rng& rng)
      : ts_(start), channel_(channel), tick_(tick), rng_(rng) {}

  void emit(ActionKind kind) {
    if (!events_.empty()) ts_ += tick_ * gap_ticks();
    events_.push_back(Event{ts_, channel_, std::move(kind)});
  }
  std::vector<Event> take() { return std::move(events_); }

  // Moves from the current menu to `target`, going through root.
  void navigate(std::string_view target) {
    if (current_ == target) return;
    const MenuSpec& spec = menu_spec(target);
    if (target == kRoot) {
      emit(Transition{Verb::exit_menu, std::string(kRootSection)});
      current_ = std::string(kRoot);
      return;
    }
    if (!spec.parent.empty() && current_ == spec.parent) {
      enter(target);
      return;
    }
    if (current_ != kRoot) emit(Transition{Verb::exit_menu, std::string(kRootSection)});
    current_ = std::string(kRoot);
    if (!spec.parent.empty()) enter(spec.parent);
    enter(target);
  }

  const std::string& current() const { return current_; }

 private:
  void enter(std::string_view menu) {
    emit(Transition{Verb::enter_menu, std::string(menu)});
    current_ = std::string(menu);
  }
  std::int64_t gap_ticks() {
    const double u = rng_.uniform();
    return u < 0.7 ? 1 : (u < 0.9 ? 2 : 3);
  }

  std::int64_t ts_;
  Channel channel_;
  std::int64_t tick_;
  Rng& rng_;
  std::string current_{kRoot};
  std::vector<Event> events_;
};

std::int64_t days(std::int64_t n) { return n * 86400; }

std::string menu_with_info(std::string_view target) {
  for (const auto& m : digital_menus()) {
    if (std::find(m.info.begin(), m.info.end(), target) != m.info.end()) return std::string(m.name);
  }
  throw Error("no menu offers " + std::string(target));
}

std::string menu_with_modification(std::string_view target) {
  for (const auto& m : digital_menus()) {
    if (std::find(m.modify.begin(), m.modify.end(), target) != m.modify.end()) return std::string(m.name);
  }
  throw Error("no menu offers " + std::string(target));
}

std::string menu_with_operation(std::string_view op) {
  for (const auto& m : digital_menus()) {
    if (std::find(m.ops.begin(), m.ops.end(), op) != m.ops.end()) return std::string(m.name);
  }
  throw Error("no menu offers " + std::string(op));
}

bool channel_reaches(Channel c, const GoalLabel& goals) {
  if (!has_menus(c) && (goals.check_info || goals.change_info)) return false;
  for (const auto& op : goals.operational) {
    if (!channel_offers(c, op)) return false;
  }
  return true;
}

void check_distribution(std::span<const double> p, const std::string& what) {
  double sum = 0.0;
  for (double x : p) {
    if (!(x >= 0.0 && x <= 1.0)) throw ConfigError(what + ": probability outside [0,1]");
    sum += x;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ConfigError(what + ": probabilities must sum to 1");
}

std::string join_doubles(std::span<const double> v) {
  std::string out;
  char buf[32];
  for (std::size_t i = 0; i < v.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g", v[i]);
    if (i) out += ",";
    out += buf;
  }
  return out;
}

template <std::size_t N>
void take_array(KeyValueConfig& kv, const std::string& key, std::array<double, N>& out) {
  auto v = kv.take_doubles(key, std::vector<double>(out.begin(), out.end()));
  if (v.size() != N) throw ConfigError("config key `" + key + "` needs " + std::to_string(N) + " values");
  std::copy(v.begin(), v.end(), out.begin());
}

}  // namespace

std::string_view to_string(Income v) { return kIncomeNames[static_cast<std::size_t>(v)]; }
std::string_view to_string(FailBehavior v) { return kFailNames[static_cast<std::size_t>(v)]; }
std::string_view to_string(DigitalBehavior v) { return kDigitalNames[static_cast<std::size_t>(v)]; }

std::optional<Income> income_from_string(std::string_view s) {
  if (auto i = lookup(kIncomeNames, s)) return static_cast<Income>(*i);
  return std::nullopt;
}
std::optional<FailBehavior> fail_behavior_from_string(std::string_view s) {
  if (auto i = lookup(kFailNames, s)) return static_cast<FailBehavior>(*i);
  return std::nullopt;
}
std::optional<DigitalBehavior> digital_behavior_from_string(std::string_view s) {
  if (auto i = lookup(kDigitalNames, s)) return static_cast<DigitalBehavior>(*i);
  return std::nullopt;
}

std::string type_name(const CustomerProfile& p) {
  return std::string(to_string(p.income)) + "-" + std::string(to_string(p.fail_behavior)) + "-" +
         std::string(to_string(p.digital_behavior));
}

// ---- SimConfig --------------------------------------------------------------

void SimConfig::validate() const {
  check_distribution(income_probs, "income_probs");
  check_distribution(fail_behavior_probs, "fail_behavior_probs");
  check_distribution(digital_behavior_probs, "digital_behavior_probs");
  for (std::size_t d = 0; d < kDigitalCount; ++d) {
    check_distribution(channel_probs[d], "channel_probs." + std::string(kDigitalNames[d]));
  }
  for (std::size_t f = 0; f < kFailCount; ++f) {
    if (!(failure_probs[f] >= 0.0 && failure_probs[f] <= 1.0)) {
      throw ConfigError("failure_probs." + std::string(kFailNames[f]) + ": probability outside [0,1]");
    }
  }
  for (std::size_t i = 0; i < kIncomeCount; ++i) {
    check_distribution(goal_probs[i], "goal_probs." + std::string(kIncomeNames[i]));
  }
  if (!(multi_goal_prob >= 0.0 && multi_goal_prob <= 1.0)) throw ConfigError("multi_goal_prob outside [0,1]");
  if (!(income_affinity > 0.0)) throw ConfigError("income_affinity must be > 0");
  if (session_count_min < 1 || session_count_max < session_count_min) {
    throw ConfigError("session_count_range must satisfy 1 <= min <= max");
  }
  if (events_per_customer_target <= 0) throw ConfigError("events_per_customer_target must be > 0");
  if (base_tick_seconds <= 0) throw ConfigError("base_tick_seconds must be > 0");
}

std::string SimConfig::to_text() const {
  std::ostringstream o;
  o << "income_probs = " << join_doubles(income_probs) << "\n";
  o << "fail_behavior_probs = " << join_doubles(fail_behavior_probs) << "\n";
  o << "digital_behavior_probs = " << join_doubles(digital_behavior_probs) << "\n";
  for (std::size_t d = 0; d < kDigitalCount; ++d) {
    o << "channel_probs." << kDigitalNames[d] << " = " << join_doubles(channel_probs[d]) << "\n";
  }
  for (std::size_t f = 0; f < kFailCount; ++f) {
    o << "failure_probs." << kFailNames[f] << " = " << join_doubles(std::span(&failure_probs[f], 1)) << "\n";
  }
  for (std::size_t i = 0; i < kIncomeCount; ++i) {
    o << "goal_probs." << kIncomeNames[i] << " = " << join_doubles(goal_probs[i]) << "\n";
  }
  o << "multi_goal_prob = " << join_doubles(std::span(&multi_goal_prob, 1)) << "\n";
  o << "income_affinity = " << join_doubles(std::span(&income_affinity, 1)) << "\n";
  o << "session_count_range = " << session_count_min << "," << session_count_max << "\n";
  o << "events_per_customer_target = " << events_per_customer_target << "\n";
  o << "base_tick_seconds = " << base_tick_seconds << "\n";
  o << "start_time = " << start_time << "\n";
  o << "seed = " << seed << "\n";
  return o.str();
}

std::uint64_t SimConfig::fingerprint() const { return Fnv1a().add(to_text()).value(); }

SimConfig SimConfig::from_config(KeyValueConfig& kv, const std::string& prefix, bool strict) {
  SimConfig c;
  take_array(kv, prefix + "income_probs", c.income_probs);
  take_array(kv, prefix + "fail_behavior_probs", c.fail_behavior_probs);
  take_array(kv, prefix + "digital_behavior_probs", c.digital_behavior_probs);
  for (std::size_t d = 0; d < kDigitalCount; ++d) {
    take_array(kv, prefix + "channel_probs." + std::string(kDigitalNames[d]), c.channel_probs[d]);
  }
  for (std::size_t f = 0; f < kFailCount; ++f) {
    c.failure_probs[f] = kv.take_double(prefix + "failure_probs." + std::string(kFailNames[f]), c.failure_probs[f]);
  }
  for (std::size_t i = 0; i < kIncomeCount; ++i) {
    take_array(kv, prefix + "goal_probs." + std::string(kIncomeNames[i]), c.goal_probs[i]);
  }
  c.multi_goal_prob = kv.take_double(prefix + "multi_goal_prob", c.multi_goal_prob);
  c.income_affinity = kv.take_double(prefix + "income_affinity", c.income_affinity);
  auto range = kv.take_ints(prefix + "session_count_range", {c.session_count_min, c.session_count_max});
  if (range.size() != 2) throw ConfigError("session_count_range needs two integers `min,max`");
  c.session_count_min = range[0];
  c.session_count_max = range[1];
  c.events_per_customer_target = kv.take_int(prefix + "events_per_customer_target", c.events_per_customer_target);
  c.base_tick_seconds = kv.take_int(prefix + "base_tick_seconds", c.base_tick_seconds);
  c.start_time = kv.take_int(prefix + "start_time", c.start_time);
  auto seed = kv.take_int(prefix + "seed", static_cast<std::int64_t>(c.seed));
  if (seed < 0) throw ConfigError("seed must be non-negative");
  c.seed = static_cast<std::uint64_t>(seed);
  if (strict) kv.reject_unknown(prefix);
  c.validate();
  return c;
}

SimConfig SimConfig::load(const std::string& path) {
  auto kv = KeyValueConfig::load(path);
  return from_config(kv);
}

// ---- Sampling ---------------------------------------------------------------

CustomerProfile sample_profile(Rng& rng, const SimConfig& config, std::uint64_t customer_id) {
  CustomerProfile p;
  p.customer_id = customer_id;
  p.income = static_cast<Income>(rng.categorical(config.income_probs));
  p.fail_behavior = static_cast<FailBehavior>(rng.categorical(config.fail_behavior_probs));
  p.digital_behavior = static_cast<DigitalBehavior>(rng.categorical(config.digital_behavior_probs));
  return p;
}

GoalLabel sample_goals(const CustomerProfile& profile, Rng& rng, const SimConfig& config,
                       std::optional<Channel> channel) {
  std::array<double, kGoalCategoryCount> w = config.goal_probs[static_cast<std::size_t>(profile.income)];
  if (channel && !has_menus(*channel)) w = {0.0, 0.0, 1.0};

  GoalLabel g;
  auto activate = [&](std::size_t cat) {
    switch (static_cast<GoalCategory>(cat)) {
      case GoalCategory::check_info: g.check_info = true; break;
      case GoalCategory::change_info: g.change_info = true; break;
      case GoalCategory::operational: {
        std::vector<std::string_view> ops;
        if (channel) {
          ops = channel_operations(*channel);
        } else {
          ops.assign(kOperations.begin(), kOperations.end());
        }
        const auto& pref = income_affinity(profile.income).ops;
        std::vector<double> ow;
        for (auto op : ops) ow.push_back(affinity_weight(pref, op, config.income_affinity));
        std::size_t count = (ops.size() > 1 && rng.bernoulli(0.25)) ? 2 : 1;
        while (g.operational.size() < count) {
          std::size_t k = rng.categorical(ow);
          g.operational.emplace_back(ops[k]);
          ow[k] = 0.0;
        }
        std::sort(g.operational.begin(), g.operational.end());
        break;
      }
    }
    w[cat] = 0.0;
  };

  activate(rng.categorical(w));
  if (rng.bernoulli(config.multi_goal_prob)) {
    double rest = 0.0;
    for (double x : w) rest += x;
    if (rest > 0.0) activate(rng.categorical(w));
  }
  return g;
}

std::vector<Event> simulate_session(const CustomerProfile& profile, const GoalLabel& goals, Rng& rng,
                                    const SimConfig& config, std::int64_t start_time) {
  if (goals.empty()) throw ConfigError("simulate_session: at least one goal is required");
  const auto& mix = config.channel_probs[static_cast<std::size_t>(profile.digital_behavior)];
  std::array<double, 5> w{};
  for (std::size_t c = 0; c < kChannels.size(); ++c) {
    w[c] = channel_reaches(kChannels[c], goals) ? mix[c] : 0.0;
  }
  if (std::all_of(w.begin(), w.end(), [](double x) { return x <= 0.0; })) {
    throw ConfigError("simulate_session: no channel with positive probability reaches the session goals");
  }
  return simulate_session(profile, goals, rng, config, start_time, kChannels[rng.categorical(w)]);
}

std::vector<Event> simulate_session(const CustomerProfile& profile, const GoalLabel& goals, Rng& rng,
                                    const SimConfig& config, std::int64_t start_time, Channel channel) {
  if (goals.empty()) throw ConfigError("simulate_session: at least one goal is required");
  if (start_time < 0) throw ConfigError("simulate_session: start_time must be >= 0");
  if (!channel_reaches(channel, goals)) {
    throw ConfigError("simulate_session: goals unreachable on channel " + std::string(to_string(channel)));
  }
  const double p_fail = config.failure_probs[static_cast<std::size_t>(profile.fail_behavior)];
  const Affinity& aff = income_affinity(profile.income);
  SessionWriter out(start_time, channel, config.base_tick_seconds, rng);
  out.emit(Transition{Verb::login, {}});

  if (!has_menus(channel)) {
    for (const auto& op : goals.operational) {
      // A failed attempt shows up as the same operation repeated.
      if (rng.bernoulli(p_fail)) out.emit(Operation{op});
      out.emit(Operation{op});
    }
    out.emit(Transition{Verb::log_off, {}});
    return out.take();
  }

  // Goal groups in random order; each step is (menu, action) and steps of one
  // group stay adjacent.
  using Step = std::pair<std::string, ActionKind>;
  std::vector<std::vector<Step>> groups;
  if (goals.check_info) {
    std::vector<double> wi;
    for (auto t : kInfoTargets) wi.push_back(affinity_weight(aff.info, t, config.income_affinity));
    std::string_view target = pick_weighted(rng, kInfoTargets, wi);
    std::string menu = menu_with_info(target);
    std::vector<Step> group;
    group.emplace_back(menu, InfoGain{std::string(target), {}});
    // Sometimes a second look-up in the same menu.
    const auto& offered = menu_spec(menu).info;
    if (offered.size() > 1 && rng.bernoulli(0.3)) {
      std::string_view other = offered[rng.below(offered.size())];
      if (other != target) group.emplace_back(menu, InfoGain{std::string(other), {}});
    }
    groups.push_back(std::move(group));
  }
  if (goals.change_info) {
    std::vector<double> wm;
    for (auto t : kModificationTargets) wm.push_back(affinity_weight(aff.modify, t, config.income_affinity));
    std::string_view target = pick_weighted(rng, kModificationTargets, wm);
    groups.push_back({Step{menu_with_modification(target), Modification{std::string(target)}}});
  }
  for (const auto& op : goals.operational) groups.push_back({Step{menu_with_operation(op), Operation{op}}});
  rng.shuffle(groups);
  std::vector<Step> steps;
  for (auto& g : groups) {
    for (auto& st : g) steps.push_back(std::move(st));
  }

  for (auto& [menu, action] : steps) {
    if (rng.bernoulli(p_fail)) {
      // Abandoned detour: open an unrelated top-level menu and back out.
      std::vector<std::string_view> wrong;
      for (const auto& m : digital_menus()) {
        if (m.name != kRoot && m.parent.empty() && m.name != menu && m.name != out.current()) {
          wrong.push_back(m.name);
        }
      }
      out.navigate(wrong[rng.below(wrong.size())]);
      out.navigate(kRoot);
    }
    out.navigate(menu);
    out.emit(std::move(action));
  }
  out.emit(Transition{Verb::log_off, {}});
  return out.take();
}

Trajectory simulate_customer(const CustomerProfile& profile, Rng& rng, const SimConfig& config) {
  config.validate();
  Trajectory t;
  t.customer_id = profile.customer_id;
  const auto target = static_cast<double>(config.events_per_customer_target);
  const auto stop_at = static_cast<std::size_t>(
      std::max<std::int64_t>(1, std::llround(target * (0.9 + 0.2 * rng.uniform()))));
  std::int64_t ts = config.start_time + rng.between(0, days(30) - 1);
  const auto& mix = config.channel_probs[static_cast<std::size_t>(profile.digital_behavior)];

  for (std::int64_t s = 0; s < config.session_count_max; ++s) {
    if (s >= config.session_count_min && t.events.size() >= stop_at) break;
    Channel channel = kChannels[rng.categorical(mix)];
    GoalLabel goals = sample_goals(profile, rng, config, channel);
    auto session = simulate_session(profile, goals, rng, config, ts, channel);
    for (auto& e : session) {
      t.events.push_back(std::move(e));
      t.session_of_event.push_back(static_cast<std::uint32_t>(s));
    }
    t.session_goals.push_back(std::move(goals));
    ts = t.events.back().ts + rng.between(days(1), days(90));
  }
  return t;
}

Dataset simulate_dataset(std::size_t n_customers, const SimConfig& config, unsigned jobs) {
  if (n_customers == 0) throw ConfigError("simulate_dataset: n_customers must be > 0");
  config.validate();
  Dataset d;
  d.profiles.resize(n_customers);
  d.trajectories.resize(n_customers);
  auto work = [&](std::size_t first, std::size_t step) {
    for (std::size_t i = first; i < n_customers; i += step) {
      Rng rng = Rng::for_stream(config.seed, i);
      d.profiles[i] = sample_profile(rng, config, i);
      d.trajectories[i] = simulate_customer(d.profiles[i], rng, config);
    }
  };
  jobs = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(n_customers)));
  if (jobs == 1) {
    work(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (unsigned j = 0; j < jobs; ++j) pool.emplace_back(work, j, jobs);
    for (auto& th : pool) th.join();
  }
  return d;
}

std::size_t Dataset::event_count() const {
  std::size_t n = 0;
  for (const auto& t : trajectories) n += t.events.size();
  return n;
}

std::size_t Dataset::session_count() const {
  std::size_t n = 0;
  for (const auto& t : trajectories) n += t.session_goals.size();
  return n;
}

GoalLabel observed_goals(std::span<const Event> session) {
  GoalLabel g;
  for (const auto& e : session) {
    if (std::holds_alternative<InfoGain>(e.kind)) g.check_info = true;
    if (std::holds_alternative<Modification>(e.kind)) g.change_info = true;
    if (const auto* op = std::get_if<Operation>(&e.kind)) g.operational.push_back(op->name);
  }
  std::sort(g.operational.begin(), g.operational.end());
  g.operational.erase(std::unique(g.operational.begin(), g.operational.end()), g.operational.end());
  return g;
}

// ---- Files ------------------------------------------------------------------

std::string format_timestamp(std::int64_t ts) {
  std::time_t t = static_cast<std::time_t>(ts);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%d %H:%M:%S", &tm);
  return buf;
}

std::int64_t parse_timestamp(std::string_view s) {
  std::tm tm{};
  int y, mo, d, h, mi, se;
  char tail;
  std::string str(s);
  if (std::sscanf(str.c_str(), "%4d-%2d-%2d %2d:%2d:%2d%c", &y, &mo, &d, &h, &mi, &se, &tail) != 6) {
    throw DataError("bad timestamp `" + str + "` (expected YYYY-MM-DD HH:MM:SS)");
  }
  tm.tm_year = y - 1900;
  tm.tm_mon = mo - 1;
  tm.tm_mday = d;
  tm.tm_hour = h;
  tm.tm_min = mi;
  tm.tm_sec = se;
  return static_cast<std::int64_t>(timegm(&tm));
}

namespace {

std::string join_ops(const std::vector<std::string>& ops) {
  std::string out;
  for (std::size_t i = 0; i < ops.size(); ++i) {
    if (i) out += ",";
    out += ops[i];
  }
  return out;
}

}  // namespace

void write_traces(std::ostream& out, const Dataset& d) {
  for (const auto& t : d.trajectories) {
    for (std::size_t i = 0; i < t.events.size(); ++i) {
      const auto& goals = t.session_goals[t.session_of_event[i]];
      nlohmann::ordered_json j;
      j["customer_id"] = t.customer_id;
      j["ts"] = format_timestamp(t.events[i].ts);
      j["event"] = format_event(t.events[i]);
      j["session_id"] = t.session_of_event[i];
      j["goal_check"] = goals.check_info ? 1 : 0;
      j["goal_change"] = goals.change_info ? 1 : 0;
      j["goal_ops"] = join_ops(goals.operational);
      out << j.dump() << '\n';
    }
  }
}

void write_profiles(std::ostream& out, const Dataset& d) {
  for (const auto& p : d.profiles) {
    nlohmann::ordered_json j;
    j["customer_id"] = p.customer_id;
    j["income"] = to_string(p.income);
    j["fail_behavior"] = to_string(p.fail_behavior);
    j["digital_behavior"] = to_string(p.digital_behavior);
    out << j.dump() << '\n';
  }
}

void write_dataset(const Dataset& d, const std::string& trace_path, const std::string& profile_path) {
  std::ofstream traces(trace_path, std::ios::binary);
  if (!traces) throw IoError("cannot write trace file `" + trace_path + "`");
  write_traces(traces, d);
  std::ofstream profiles(profile_path, std::ios::binary);
  if (!profiles) throw IoError("cannot write profile file `" + profile_path + "`");
  write_profiles(profiles, d);
  traces.flush();
  profiles.flush();
  if (!traces || !profiles) throw IoError("write failed for `" + trace_path + "`");
}

Dataset read_traces(std::istream& in) {
  Dataset d;
  std::map<std::uint64_t, Trajectory> by_customer;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto where = [&] { return "trace line " + std::to_string(line_no) + ": "; };
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(where() + e.what());
    }
    try {
      auto id = j.at("customer_id").get<std::uint64_t>();
      auto& t = by_customer[id];
      t.customer_id = id;
      auto session = j.at("session_id").get<std::uint32_t>();
      Event e = parse_event(parse_timestamp(j.at("ts").get<std::string>()), j.at("event").get<std::string>());
      if (!t.events.empty() && e.ts < t.events.back().ts) throw DataError(where() + "timestamps decrease");
      t.events.push_back(std::move(e));
      t.session_of_event.push_back(session);
      if (session >= t.session_goals.size()) t.session_goals.resize(session + 1);
      GoalLabel& g = t.session_goals[session];
      g.check_info = j.at("goal_check").get<int>() != 0;
      g.change_info = j.at("goal_change").get<int>() != 0;
      g.operational.clear();
      auto ops = j.at("goal_ops").get<std::string>();
      if (!ops.empty()) g.operational = split(ops, ',');
    } catch (const nlohmann::json::exception& e) {
      throw DataError(where() + e.what());
    } catch (const DataError& e) {
      throw DataError(where() + e.what());
    }
  }
  for (auto& [id, t] : by_customer) {
    CustomerProfile p;
    p.customer_id = id;
    d.profiles.push_back(p);
    d.trajectories.push_back(std::move(t));
  }
  return d;
}

std::vector<CustomerProfile> read_profiles(std::istream& in) {
  std::vector<CustomerProfile> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      auto j = nlohmann::json::parse(line);
      CustomerProfile p;
      p.customer_id = j.at("customer_id").get<std::uint64_t>();
      auto inc = income_from_string(j.at("income").get<std::string>());
      auto fail = fail_behavior_from_string(j.at("fail_behavior").get<std::string>());
      auto dig = digital_behavior_from_string(j.at("digital_behavior").get<std::string>());
      if (!inc || !fail || !dig) throw DataError("unknown attribute value");
      p.income = *inc;
      p.fail_behavior = *fail;
      p.digital_behavior = *dig;
      out.push_back(p);
    } catch (const nlohmann::json::exception& e) {
      throw DataError("profile line " + std::to_string(line_no) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError("profile line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

Dataset read_dataset(const std::string& trace_path, const std::optional<std::string>& profile_path) {
  std::ifstream in(trace_path, std::ios::binary);
  if (!in) throw IoError("cannot open trace file `" + trace_path + "`");
  Dataset d = read_traces(in);
  if (profile_path) {
    std::ifstream pin(*profile_path, std::ios::binary);
    if (!pin) throw IoError("cannot open profile file `" + *profile_path + "`");
    auto profiles = read_profiles(pin);
    std::map<std::uint64_t, CustomerProfile> by_id;
    for (const auto& p : profiles) by_id[p.customer_id] = p;
    for (auto& p : d.profiles) {
      auto it = by_id.find(p.customer_id);
      if (it == by_id.end()) {
        throw DataError("profile file has no entry for customer " + std::to_string(p.customer_id));
      }
      p = it->second;
    }
  }
  return d;
}

}  // namespace custpred
