#include "toolrl/protocol.hpp"

#include <cctype>

#include "toolrl/common.hpp"

namespace toolrl::protocol {

namespace {

constexpr std::string_view kThinkOpen = "<think>";
constexpr std::string_view kThinkClose = "</think>";
constexpr std::string_view kToolOpen = "<tool_call>";
constexpr std::string_view kToolClose = "</tool_call>";
constexpr std::string_view kAnswerOpen = "<answer>";
constexpr std::string_view kAnswerClose = "</answer>";

std::size_t skip_ws(std::string_view s, std::size_t pos) {
  while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
  return pos;
}

bool at(std::string_view s, std::size_t pos, std::string_view tag) {
  return s.substr(pos, tag.size()) == tag;
}

TurnParse fail(Violation v, std::string detail) {
  TurnParse out;
  out.violation = v;
  out.detail = std::move(detail);
  return out;
}

bool scalar_value(const nlohmann::ordered_json& v) {
  return v.is_string() || v.is_number();
}

void render_value(const nlohmann::ordered_json& v, std::string& out) {
  if (v.is_array()) {
    out += '[';
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (i) out += ", ";
      render_value(v[i], out);
    }
    out += ']';
  } else {
    out += v.dump();
  }
}

}  // namespace

std::string_view violation_name(Violation v) {
  switch (v) {
    case Violation::MissingThink:
      return "MissingThink";
    case Violation::MultipleActions:
      return "MultipleActions";
    case Violation::NoAction:
      return "NoAction";
    case Violation::BadToolJson:
      return "BadToolJson";
    case Violation::UnclosedTag:
      return "UnclosedTag";
    case Violation::ExtraTextOutsideTags:
      return "ExtraTextOutsideTags";
    case Violation::FinalTurnNotAnswer:
      return "FinalTurnNotAnswer";
    case Violation::MissingBoxed:
      return "MissingBoxed";
  }
  return "Unknown";
}

std::variant<ToolCallSpec, std::string> parse_tool_call_json(std::string_view body) {
  auto j = nlohmann::ordered_json::parse(body, nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded()) return std::string("tool call body is not valid JSON");
  if (!j.is_object()) return std::string("tool call body must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (key != "name" && key != "arguments") return "unexpected key '" + key + "'";
  }
  if (!j.contains("name") || !j["name"].is_string() || j["name"].get<std::string>().empty()) {
    return std::string("tool call needs a non-empty string 'name'");
  }
  if (!j.contains("arguments") || !j["arguments"].is_object()) {
    return std::string("tool call needs an 'arguments' object");
  }
  for (const auto& [key, value] : j["arguments"].items()) {
    if (scalar_value(value)) continue;
    if (value.is_array()) {
      for (const auto& el : value) {
        if (!scalar_value(el)) return "argument '" + key + "' has a nested value";
      }
      continue;
    }
    return "argument '" + key + "' must be a string, number or flat array";
  }
  return ToolCallSpec{j["name"].get<std::string>(), j["arguments"]};
}

TurnParse parse_assistant_turn(std::string_view text) {
  std::size_t pos = skip_ws(text, 0);
  if (!at(text, pos, kThinkOpen)) {
    return fail(Violation::MissingThink, "turn must start with <think>");
  }
  pos += kThinkOpen.size();
  const std::size_t think_end = text.find(kThinkClose, pos);
  if (think_end == std::string_view::npos) return fail(Violation::UnclosedTag, "<think> is not closed");

  ParsedTurn turn;
  turn.think_text = std::string(text.substr(pos, think_end - pos));
  turn.raw_text = std::string(text);
  pos = skip_ws(text, think_end + kThinkClose.size());
  if (pos == text.size()) return fail(Violation::NoAction, "no <tool_call> or <answer> after </think>");

  std::string_view close_tag;
  bool is_tool = false;
  if (at(text, pos, kToolOpen)) {
    is_tool = true;
    close_tag = kToolClose;
    pos += kToolOpen.size();
  } else if (at(text, pos, kAnswerOpen)) {
    close_tag = kAnswerClose;
    pos += kAnswerOpen.size();
  } else {
    return fail(Violation::ExtraTextOutsideTags, "unexpected text after </think>");
  }
  const std::size_t body_end = text.find(close_tag, pos);
  if (body_end == std::string_view::npos) {
    return fail(Violation::UnclosedTag, std::string(is_tool ? "<tool_call>" : "<answer>") + " is not closed");
  }
  const std::string_view body = text.substr(pos, body_end - pos);

  const std::size_t rest = skip_ws(text, body_end + close_tag.size());
  if (rest != text.size()) {
    if (at(text, rest, kToolOpen) || at(text, rest, kAnswerOpen)) {
      return fail(Violation::MultipleActions, "more than one action in a turn");
    }
    return fail(Violation::ExtraTextOutsideTags, "unexpected text after the action");
  }

  if (is_tool) {
    auto parsed = parse_tool_call_json(body);
    if (auto* err = std::get_if<std::string>(&parsed)) return fail(Violation::BadToolJson, *err);
    turn.action = std::get<ToolCallSpec>(std::move(parsed));
  } else {
    turn.action = AnswerAction{std::string(body), extract_boxed_answer(body)};
  }
  TurnParse out;
  out.turn = std::move(turn);
  return out;
}

std::optional<std::string> extract_boxed_answer(std::string_view text) {
  constexpr std::string_view kBoxed = "\\boxed{";
  const std::size_t start = text.rfind(kBoxed);
  if (start == std::string_view::npos) return std::nullopt;
  int depth = 1;
  const std::size_t content = start + kBoxed.size();
  for (std::size_t i = content; i < text.size(); ++i) {
    if (text[i] == '{') {
      ++depth;
    } else if (text[i] == '}' && --depth == 0) {
      return trim(text.substr(content, i - content));
    }
  }
  return std::nullopt;
}

std::string render_tool_call(const ToolCallSpec& call) {
  std::string out = "{\"name\": " + nlohmann::json(call.name).dump() + ", \"arguments\": {";
  bool first = true;
  for (const auto& [key, value] : call.arguments.items()) {
    if (!first) out += ", ";
    first = false;
    out += nlohmann::json(key).dump();
    out += ": ";
    render_value(value, out);
  }
  out += "}}";
  return out;
}

std::string render_turn(const ParsedTurn& turn) {
  std::string out = "<think>" + turn.think_text + "</think>\n";
  if (turn.is_tool_call()) {
    out += "<tool_call>" + render_tool_call(turn.tool_call()) + "</tool_call>";
  } else {
    out += "<answer>" + turn.answer().answer_text + "</answer>";
  }
  return out;
}

FormatReport check_format(const Trajectory& trajectory) {
  FormatReport report;
  std::optional<std::size_t> last;
  for (std::size_t i = 0; i < trajectory.turns.size(); ++i) {
    if (trajectory.turns[i].role == Role::Assistant) last = i;
  }
  if (!last) return report;

  for (std::size_t i = 0; i < trajectory.turns.size(); ++i) {
    if (trajectory.turns[i].role != Role::Assistant) continue;
    TurnReport tr;
    tr.turn_index = i;
    const TurnParse parse = parse_assistant_turn(trajectory.turns[i].text);
    if (!parse.ok()) {
      tr.violation = parse.violation;
    } else if (i == *last) {
      if (parse.turn->is_tool_call()) {
        tr.violation = Violation::FinalTurnNotAnswer;
      } else if (!parse.turn->answer().boxed) {
        tr.violation = Violation::MissingBoxed;
      }
    }
    tr.ok = !tr.violation.has_value();
    report.per_turn.push_back(tr);
  }
  report.overall_ok = true;
  for (const auto& tr : report.per_turn) report.overall_ok = report.overall_ok && tr.ok;
  return report;
}

}  // namespace toolrl::protocol
