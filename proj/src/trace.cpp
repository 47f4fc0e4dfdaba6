#include "custpred/trace.hpp"

#include <algorithm>
#include <ostream>

namespace custpred {

const std::vector<std::string_view> kMenus = {
    "credit-card", "credit-score", "offers", "rewards", "operations", "settings",
    "alerts-maintenance", "contact-us", "account-documents", "profile-maintenance"};

const std::vector<std::string_view> kInfoTargets = {
    "alerts-definition", "alerts-history", "atm-branches", "balance", "benefits",
    "demographic", "documents", "faq", "help-call", "help-email", "offers",
    "credit-card-trans-history", "credit-card-trans-summary", "limit-credit-card",
    "credit-score-history", "messages", "rewards-activity", "rewards-use-points",
    "credit-score-summary", "trans-history", "trans-summary"};

const std::vector<std::string_view> kModificationTargets = {
    "demographic", "password", "user-id", "limit-credit-card", "alerts-definition"};

const std::vector<std::string_view> kOperations = {
    "deposit-cash", "withdrawal", "exchange", "deposit-check", "pay-bill", "make-payment"};

namespace {

struct Alias {
  std::string_view spelling;
  std::string_view canonical;
};

constexpr std::array<Alias, 4> kInfoAliases = {{
    {"credit-card-transaction-history", "credit-card-trans-history"},
    {"credit-card-transaction-summary", "credit-card-trans-summary"},
    {"transaction-history", "trans-history"},
    {"transaction-summary", "trans-summary"},
}};

bool contains(const std::vector<std::string_view>& v, std::string_view s) {
  return std::find(v.begin(), v.end(), s) != v.end();
}

constexpr std::array<std::string_view, 5> kChannelNames = {"web", "mobile", "teller", "banker", "atm"};
constexpr std::array<std::string_view, 6> kVerbNames = {"login", "log-off", "enter-menu",
                                                        "exit-menu", "enter", "exit"};
constexpr std::array<std::string_view, 6> kPrimaryNames = {"logged-out", "web", "mobile",
                                                           "teller", "banker", "atm"};
constexpr std::array<std::string_view, 4> kClassNames = {"transition", "info-gain", "modification",
                                                         "operation"};

constexpr std::string_view kEnterMenu = "enter menu ";
constexpr std::string_view kExitMenu = "exit menu ";
constexpr std::string_view kEnter = "enter ";
constexpr std::string_view kExit = "exit ";
constexpr std::string_view kGetInfo = "get information on ";
constexpr std::string_view kChangeInfo = "change information on ";

bool starts_with(std::string_view s, std::string_view prefix) {
  return s.substr(0, prefix.size()) == prefix;
}

bool is_transition_target(std::string_view s) { return s == kRootSection || is_menu(s); }

bool well_formed_noun(std::string_view s) {
  if (s.empty()) return false;
  return std::all_of(s.begin(), s.end(), [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '-' || c == '_';
  });
}

}  // namespace

std::string_view to_string(Channel c) { return kChannelNames[static_cast<std::size_t>(c)]; }
std::string_view to_string(Verb v) { return kVerbNames[static_cast<std::size_t>(v)]; }
std::string_view to_string(Primary p) { return kPrimaryNames[static_cast<std::size_t>(p)]; }
std::string_view to_string(ActionClass c) { return kClassNames[static_cast<std::size_t>(c)]; }

std::optional<Channel> channel_from_string(std::string_view s) {
  for (std::size_t i = 0; i < kChannelNames.size(); ++i) {
    if (kChannelNames[i] == s) return static_cast<Channel>(i);
  }
  return std::nullopt;
}

std::optional<Primary> primary_from_string(std::string_view s) {
  for (std::size_t i = 0; i < kPrimaryNames.size(); ++i) {
    if (kPrimaryNames[i] == s) return static_cast<Primary>(i);
  }
  return std::nullopt;
}

std::optional<ActionClass> action_class_from_string(std::string_view s) {
  for (std::size_t i = 0; i < kClassNames.size(); ++i) {
    if (kClassNames[i] == s) return static_cast<ActionClass>(i);
  }
  return std::nullopt;
}

std::optional<std::string_view> canonical_info_target(std::string_view spelling) {
  for (auto t : kInfoTargets) {
    if (t == spelling) return t;
  }
  for (const auto& a : kInfoAliases) {
    if (a.spelling == spelling) return a.canonical;
  }
  return std::nullopt;
}

bool is_menu(std::string_view s) { return contains(kMenus, s); }
bool is_info_target(std::string_view s) { return contains(kInfoTargets, s); }
bool is_modification_target(std::string_view s) { return contains(kModificationTargets, s); }
bool is_operation(std::string_view s) { return contains(kOperations, s); }

ActionClass action_class(const ActionKind& a) { return static_cast<ActionClass>(a.index()); }

std::string feature_target(const ActionKind& a) {
  return std::visit(
      [](const auto& k) -> std::string {
        using T = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<T, Transition>) {
          if (k.target.empty() || is_transition_target(k.target)) return k.target;
          return std::string(kOovTarget);
        } else if constexpr (std::is_same_v<T, InfoGain>) {
          return is_info_target(k.target) ? k.target : std::string(kOovTarget);
        } else if constexpr (std::is_same_v<T, Modification>) {
          return is_modification_target(k.target) ? k.target : std::string(kOovTarget);
        } else {
          return is_operation(k.name) ? k.name : std::string(kOovTarget);
        }
      },
      a);
}

ParseError::ParseError(std::size_t position, std::string reason, std::string_view raw)
    : DataError("parse error at position " + std::to_string(position) + " in `" + std::string(raw) +
                "`: " + reason),
      position_(position),
      reason_(std::move(reason)) {}

Event parse_event(std::int64_t ts, std::string_view raw, ParseMode mode) {
  const bool lenient = mode == ParseMode::lenient;
  auto colon = raw.find(':');
  if (colon == std::string_view::npos) throw ParseError(0, "missing `:` after channel", raw);
  auto channel = channel_from_string(raw.substr(0, colon));
  if (!channel) throw ParseError(0, "unknown channel `" + std::string(raw.substr(0, colon)) + "`", raw);
  if (raw.size() < colon + 2 || raw[colon + 1] != ' ') {
    throw ParseError(colon + 1, "expected a single space after `:`", raw);
  }
  const std::size_t offset = colon + 2;
  std::string_view phrase = raw.substr(offset);

  Event e;
  e.ts = ts;
  e.channel = *channel;

  auto noun = [&](std::string_view prefix, auto&& known, const char* what) -> std::string {
    std::string_view n = phrase.substr(prefix.size());
    const std::size_t pos = offset + prefix.size();
    if (!well_formed_noun(n)) throw ParseError(pos, std::string("malformed ") + what, raw);
    if (!known(n) && !lenient) {
      throw ParseError(pos, std::string("unknown ") + what + " `" + std::string(n) + "`", raw);
    }
    return std::string(n);
  };

  if (phrase == "login") {
    e.kind = Transition{Verb::login, {}};
  } else if (phrase == "log-off") {
    e.kind = Transition{Verb::log_off, {}};
  } else if (starts_with(phrase, kEnterMenu)) {
    e.kind = Transition{Verb::enter_menu, noun(kEnterMenu, is_transition_target, "menu")};
  } else if (starts_with(phrase, kExitMenu)) {
    e.kind = Transition{Verb::exit_menu, noun(kExitMenu, is_transition_target, "menu")};
  } else if (starts_with(phrase, kGetInfo)) {
    std::string written = noun(kGetInfo, [](std::string_view s) { return canonical_info_target(s).has_value(); },
                               "information target");
    InfoGain g;
    if (auto canon = canonical_info_target(written)) {
      g.target = std::string(*canon);
      if (g.target != written) g.spelling = written;
    } else {
      g.target = written;
    }
    e.kind = std::move(g);
  } else if (starts_with(phrase, kChangeInfo)) {
    e.kind = Modification{noun(kChangeInfo, is_modification_target, "modification target")};
  } else if (starts_with(phrase, kEnter)) {
    e.kind = Transition{Verb::enter, noun(kEnter, is_transition_target, "menu")};
  } else if (starts_with(phrase, kExit)) {
    e.kind = Transition{Verb::exit, noun(kExit, is_transition_target, "menu")};
  } else if (is_operation(phrase) || (lenient && well_formed_noun(phrase))) {
    e.kind = Operation{std::string(phrase)};
  } else {
    throw ParseError(offset, "unknown action `" + std::string(phrase) + "`", raw);
  }
  return e;
}

std::string format_action(const ActionKind& a) {
  return std::visit(
      [](const auto& k) -> std::string {
        using T = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<T, Transition>) {
          switch (k.verb) {
            case Verb::login: return "login";
            case Verb::log_off: return "log-off";
            case Verb::enter_menu: return std::string(kEnterMenu) + k.target;
            case Verb::exit_menu: return std::string(kExitMenu) + k.target;
            case Verb::enter: return std::string(kEnter) + k.target;
            case Verb::exit: return std::string(kExit) + k.target;
          }
          return {};
        } else if constexpr (std::is_same_v<T, InfoGain>) {
          return std::string(kGetInfo) + (k.spelling.empty() ? k.target : k.spelling);
        } else if constexpr (std::is_same_v<T, Modification>) {
          return std::string(kChangeInfo) + k.target;
        } else {
          return k.name;
        }
      },
      a);
}

std::string format_event(const Event& e) {
  std::string out(to_string(e.channel));
  out += ": ";
  out += format_action(e.kind);
  return out;
}

std::string to_string(const SessionState& s) {
  return std::string(to_string(s.primary)) + "/" + s.secondary;
}

IllegalTransition::IllegalTransition(const SessionState& state, const Event& event,
                                     std::optional<std::size_t> index)
    : DataError("illegal transition" + (index ? " at event " + std::to_string(*index) : std::string()) +
                ": `" + format_event(event) + "` in state " + to_string(state)),
      state_(state),
      index_(index) {}

SessionState fold_state(const SessionState& s, const Event& e) {
  const bool logged_in = s.primary != Primary::logged_out;
  auto illegal = [&] { return IllegalTransition(s, e); };
  if (logged_in && s.primary != primary_of(e.channel)) throw illegal();

  if (const auto* t = std::get_if<Transition>(&e.kind)) {
    switch (t->verb) {
      case Verb::login:
        if (logged_in) throw illegal();
        return SessionState{primary_of(e.channel), std::string(kRoot)};
      case Verb::log_off:
        if (!logged_in) throw illegal();
        return SessionState{};
      case Verb::enter_menu:
      case Verb::enter:
        if (!logged_in || !has_menus(e.channel) || t->target == kRootSection) throw illegal();
        return SessionState{s.primary, t->target};
      case Verb::exit_menu:
      case Verb::exit:
        if (!logged_in || !has_menus(e.channel)) throw illegal();
        return SessionState{s.primary, std::string(kRoot)};
    }
  }
  if (!logged_in) throw illegal();
  if (!std::holds_alternative<Operation>(e.kind) && !has_menus(e.channel)) throw illegal();
  return s;
}

std::vector<StateActionPair> trajectory_to_pairs(std::span<const Event> events) {
  std::vector<StateActionPair> pairs;
  pairs.reserve(events.size());
  SessionState state;
  for (std::size_t i = 0; i < events.size(); ++i) {
    const Event& e = events[i];
    SessionState next;
    try {
      next = fold_state(state, e);
    } catch (const IllegalTransition& err) {
      throw IllegalTransition(err.state(), e, i);
    }
    pairs.push_back(StateActionPair{std::move(state), e.channel, e.kind});
    state = std::move(next);
  }
  return pairs;
}

Event pair_event(const StateActionPair& p) { return Event{0, p.channel, p.action}; }

std::vector<WindowView> windows(std::span<const StateActionPair> pairs, std::size_t n_h,
                                std::size_t stride) {
  if (n_h == 0 || stride == 0) throw Error("windows: n_h and stride must be >= 1");
  std::vector<WindowView> out;
  for (std::size_t b = 0; b + n_h <= pairs.size(); b += stride) {
    out.push_back(WindowView{pairs.subspan(b, n_h), pairs.subspan(b + n_h), b});
  }
  return out;
}

void write_featurized_header(std::ostream& out) {
  out << "customer_id\tindex\tprimary\tsecondary\tchannel\taction_class\taction_target\n";
}

void write_featurized(std::ostream& out, std::uint64_t customer_id,
                      std::span<const StateActionPair> pairs) {
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& p = pairs[i];
    std::string target = feature_target(p.action);
    if (target.empty()) target = std::string(to_string(std::get<Transition>(p.action).verb));
    out << customer_id << '\t' << i << '\t' << to_string(p.state.primary) << '\t' << p.state.secondary
        << '\t' << to_string(p.channel) << '\t' << to_string(action_class(p.action)) << '\t' << target
        << '\n';
  }
}

}  // namespace custpred
