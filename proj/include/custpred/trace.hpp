#pragma once

// Event grammar, interface-state tracking and the state-action view of a
// customer trajectory.
//
// Raw events look like `web: enter menu credit-card`: a channel, a colon, one
// space, then an action phrase. Action phrases are
//   login | log-off
//   enter menu <menu> | exit menu <menu> | enter <menu> | exit <menu>
//   get information on <info-target>
//   change information on <modification-target>
//   <operation>

#include <array>
#include <compare>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "custpred/common.hpp"

namespace custpred {

enum class Channel : std::uint8_t { web, mobile, teller, banker, atm };
inline constexpr std::array<Channel, 5> kChannels = {Channel::web, Channel::mobile, Channel::teller,
                                                     Channel::banker, Channel::atm};
std::string_view to_string(Channel c);
std::optional<Channel> channel_from_string(std::string_view s);
// Only web and mobile have secondary menus; in-person channels are flat.
constexpr bool has_menus(Channel c) { return c == Channel::web || c == Channel::mobile; }

enum class Verb : std::uint8_t { login, log_off, enter_menu, exit_menu, enter, exit };
std::string_view to_string(Verb v);

// Closed vocabularies.
inline constexpr std::string_view kRoot = "root";
inline constexpr std::string_view kRootSection = "root-section";
inline constexpr std::string_view kOovTarget = "<oov>";
extern const std::vector<std::string_view> kMenus;
extern const std::vector<std::string_view> kInfoTargets;
extern const std::vector<std::string_view> kModificationTargets;
extern const std::vector<std::string_view> kOperations;
// Alternative spellings accepted for information targets, mapped to the
// canonical name (e.g. credit-card-transaction-history -> credit-card-trans-history).
std::optional<std::string_view> canonical_info_target(std::string_view spelling);

bool is_menu(std::string_view s);
bool is_info_target(std::string_view s);
bool is_modification_target(std::string_view s);
bool is_operation(std::string_view s);

struct Transition {
  Verb verb = Verb::login;
  std::string target;  // empty for login / log-off
  bool operator==(const Transition&) const = default;
};

struct InfoGain {
  std::string target;    // canonical name
  std::string spelling;  // as written; empty when it equals `target`
  bool operator==(const InfoGain&) const = default;
};

struct Modification {
  std::string target;
  bool operator==(const Modification&) const = default;
};

struct Operation {
  std::string name;
  bool operator==(const Operation&) const = default;
};

using ActionKind = std::variant<Transition, InfoGain, Modification, Operation>;

enum class ActionClass : std::uint8_t { transition, info_gain, modification, operation };
std::string_view to_string(ActionClass c);
std::optional<ActionClass> action_class_from_string(std::string_view s);
ActionClass action_class(const ActionKind& a);
// Target name used for features: the canonical target, empty for
// login/log-off, or `<oov>` for an unknown (leniently parsed) target.
std::string feature_target(const ActionKind& a);

struct Event {
  std::int64_t ts = 0;  // seconds since the Unix epoch (UTC)
  Channel channel = Channel::web;
  ActionKind kind;
  bool operator==(const Event&) const = default;
};

enum class ParseMode { strict, lenient };

class ParseError : public DataError {
 public:
  ParseError(std::size_t position, std::string reason, std::string_view raw);
  std::size_t position() const { return position_; }
  const std::string& reason() const { return reason_; }

 private:
  std::size_t position_;
  std::string reason_;
};

// In lenient mode an unseen noun after a known verb is kept verbatim and
// reported as `<oov>` by feature_target; unknown channels or verbs still throw.
Event parse_event(std::int64_t ts, std::string_view raw, ParseMode mode = ParseMode::strict);
std::string format_event(const Event& e);
// Action phrase only (no channel prefix).
std::string format_action(const ActionKind& a);

enum class Primary : std::uint8_t { logged_out, web, mobile, teller, banker, atm };
std::string_view to_string(Primary p);
std::optional<Primary> primary_from_string(std::string_view s);
constexpr Primary primary_of(Channel c) { return static_cast<Primary>(static_cast<int>(c) + 1); }

struct SessionState {
  Primary primary = Primary::logged_out;
  std::string secondary{kRoot};
  auto operator<=>(const SessionState&) const = default;
  bool operator==(const SessionState&) const = default;
};
std::string to_string(const SessionState& s);

class IllegalTransition : public DataError {
 public:
  IllegalTransition(const SessionState& state, const Event& event, std::optional<std::size_t> index = {});
  const SessionState& state() const { return state_; }
  std::optional<std::size_t> index() const { return index_; }

 private:
  SessionState state_;
  std::optional<std::size_t> index_;
};

// Applies one event to the interface state. Throws IllegalTransition when the
// event is not available in `s`.
SessionState fold_state(const SessionState& s, const Event& e);

struct StateActionPair {
  SessionState state;  // state before the action
  Channel channel = Channel::web;
  ActionKind action;
  bool operator==(const StateActionPair&) const = default;
};

std::vector<StateActionPair> trajectory_to_pairs(std::span<const Event> events);

// Event (without timestamp) that a pair's action corresponds to.
Event pair_event(const StateActionPair& p);

struct WindowView {
  std::span<const StateActionPair> history;
  std::span<const StateActionPair> continuation;
  std::size_t begin = 0;
};

// Every start offset 0, stride, 2*stride, ... with a full n_h history.
std::vector<WindowView> windows(std::span<const StateActionPair> pairs, std::size_t n_h,
                                std::size_t stride);

// Featurized file: tab-separated with header
// `customer_id index primary secondary channel action_class action_target`.
void write_featurized_header(std::ostream& out);
void write_featurized(std::ostream& out, std::uint64_t customer_id,
                      std::span<const StateActionPair> pairs);

}  // namespace custpred
