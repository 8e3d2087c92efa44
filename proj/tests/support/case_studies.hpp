#pragma once

// Loader for tests/fixtures/case_studies.json: cleaned transcripts of the
// documented tool-use episodes, each with a stand-in scene that reproduces
// its tool output.

#include <string>
#include <vector>

#include "json.hpp"
#include "toolrl/common.hpp"
#include "toolrl/protocol.hpp"
#include "toolrl/rollout.hpp"
#include "toolrl/scene.hpp"
#include "toolrl/task.hpp"
#include "toolrl/trajectory.hpp"

namespace toolrl::fixtures {

struct CaseStudy {
  std::string name;
  std::string label;  // "success" or "error"
  Task task;
  std::vector<std::string> assistant;  // the two assistant turns
  std::string observation;             // as printed, prefix and padding included
};

inline std::string fixture_path(const std::string& name) {
  return std::string(TOOLRL_SOURCE_DIR) + "/tests/fixtures/" + name;
}

inline std::vector<CaseStudy> load_case_studies() {
  const auto j = nlohmann::json::parse(read_file(fixture_path("case_studies.json")));
  std::vector<CaseStudy> out;
  for (const auto& c : j.at("transcripts")) {
    CaseStudy cs;
    cs.name = c.at("name").get<std::string>();
    cs.label = c.at("label").get<std::string>();
    cs.task.task_id = cs.name;
    cs.task.question_text = c.at("question").get<std::string>();
    char letter = 'A';
    for (const auto& o : c.at("options")) cs.task.options.push_back({letter++, o.get<std::string>()});
    cs.task.gold = c.at("gold").get<std::string>();
    cs.task.scene = c.at("scene").get<Scene>();
    cs.task.initial_images.push_back(render_scene(*cs.task.scene));
    cs.assistant = c.at("assistant").get<std::vector<std::string>>();
    cs.observation = c.at("observation").get<std::string>();
    out.push_back(std::move(cs));
  }
  return out;
}

// The printed transcripts prefix tool results with "Image N:" and sometimes
// pad them; compare on the bare result text.
inline std::string bare_result(std::string obs) {
  const auto open = obs.find("<result>");
  const auto close = obs.rfind("</result>");
  std::string body = obs.substr(open + 8, close - open - 8);
  if (starts_with(body, "Image ")) {
    const auto colon = body.find(':');
    if (colon != std::string::npos) body = body.substr(colon + 1);
  }
  return trim(body);
}

// System, user, assistant, observation (as printed), assistant.
inline Trajectory printed_trajectory(const CaseStudy& cs) {
  Trajectory t;
  t.task_id = cs.name;
  t.turns.push_back({Role::System, std::string(rollout::system_prompt()), {}});
  t.turns.push_back({Role::User, rollout::render_user_prompt(cs.task), {0}});
  t.turns.push_back({Role::Assistant, cs.assistant.at(0), {}});
  t.turns.push_back({Role::Observation, cs.observation, {}});
  t.turns.push_back({Role::Assistant, cs.assistant.at(1), {}});
  const auto last = protocol::parse_assistant_turn(cs.assistant.at(1));
  if (last.ok() && last.turn->is_answer()) {
    t.terminal = Terminal::Answered;
    t.final_answer = last.turn->answer().boxed;
  } else {
    t.terminal = Terminal::TurnBudgetExhausted;
  }
  return t;
}

}  // namespace toolrl::fixtures
