#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "json.hpp"
#include "toolrl/trajectory.hpp"

namespace toolrl::protocol {

// A tool invocation as written inside <tool_call>...</tool_call>. Argument
// values are strings, numbers or flat arrays of those; key order is kept so
// rendering reproduces the original layout.
struct ToolCallSpec {
  std::string name;
  nlohmann::ordered_json arguments = nlohmann::ordered_json::object();

  friend bool operator==(const ToolCallSpec& a, const ToolCallSpec& b) {
    return a.name == b.name && a.arguments == b.arguments;
  }
};

struct AnswerAction {
  std::string answer_text;
  std::optional<std::string> boxed;

  friend bool operator==(const AnswerAction&, const AnswerAction&) = default;
};

struct ParsedTurn {
  std::string think_text;
  std::variant<ToolCallSpec, AnswerAction> action;
  std::string raw_text;

  bool is_tool_call() const { return std::holds_alternative<ToolCallSpec>(action); }
  bool is_answer() const { return std::holds_alternative<AnswerAction>(action); }
  const ToolCallSpec& tool_call() const { return std::get<ToolCallSpec>(action); }
  const AnswerAction& answer() const { return std::get<AnswerAction>(action); }

  // Structural equality; raw_text is not compared.
  bool same_structure(const ParsedTurn& o) const {
    return think_text == o.think_text && action == o.action;
  }
};

enum class Violation {
  MissingThink,
  MultipleActions,
  NoAction,
  BadToolJson,
  UnclosedTag,
  ExtraTextOutsideTags,
  FinalTurnNotAnswer,
  MissingBoxed,
};

std::string_view violation_name(Violation v);

struct TurnParse {
  std::optional<ParsedTurn> turn;
  std::optional<Violation> violation;
  std::string detail;

  bool ok() const { return turn.has_value(); }
};

// Grammar (whitespace allowed between elements, nothing else):
//   "<think>" text "</think>" ( "<tool_call>" json "</tool_call>" | "<answer>" text "</answer>" )
// Tags are case-sensitive and do not nest; the first closing tag closes.
TurnParse parse_assistant_turn(std::string_view text);

// Contents of the last balanced \boxed{...}, trimmed.
std::optional<std::string> extract_boxed_answer(std::string_view text);

// Structural validation of a tool-call body. Semantic checks (known tool,
// argument types per tool) happen at execution time.
std::variant<ToolCallSpec, std::string> parse_tool_call_json(std::string_view body);

// {"name": "...", "arguments": {"k": v, ...}} with ", " and ": " separators.
std::string render_tool_call(const ToolCallSpec& call);
std::string render_turn(const ParsedTurn& turn);

struct TurnReport {
  std::size_t turn_index = 0;  // index into Trajectory::turns
  bool ok = true;
  std::optional<Violation> violation;
};

struct FormatReport {
  std::vector<TurnReport> per_turn;
  bool overall_ok = false;
};

// Every assistant turn must parse; the last one must be an answer with a
// boxed payload. Trajectories without assistant turns are not well-formed.
FormatReport check_format(const Trajectory& trajectory);

}  // namespace toolrl::protocol
