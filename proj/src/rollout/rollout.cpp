#include "toolrl/rollout.hpp"

#include <cctype>
#include <stdexcept>

#include "toolrl/common.hpp"
#include "toolrl/protocol.hpp"

namespace toolrl::rollout {

namespace {
#include "system_prompt.inc"
}  // namespace

void RolloutLimits::validate() const {
  if (max_turns <= 0 || max_tokens_per_turn <= 0 || inference_batch_size <= 0) {
    throw std::invalid_argument("RolloutLimits: all limits must be positive");
  }
}

std::vector<double> Policy::log_probs(const Trajectory&) const {
  throw std::logic_error("this policy does not expose log-probabilities");
}

std::vector<Decision> TrainablePolicy::decisions(const Trajectory& trajectory, bool with_grad) const {
  std::vector<Decision> out;
  for (std::size_t i = 0; i < trajectory.turns.size(); ++i) {
    const Turn& t = trajectory.turns[i];
    if (t.role == Role::Assistant) {
      out.push_back(score_turn(trajectory, i, t.text, with_grad));
    } else if (t.role == Role::Observation) {
      Decision d;
      d.turn_index = i;
      out.push_back(std::move(d));
    }
  }
  return out;
}

std::vector<double> TrainablePolicy::log_probs(const Trajectory& trajectory) const {
  std::vector<double> out;
  for (const auto& d : decisions(trajectory, /*with_grad=*/false)) {
    if (d.mask) out.push_back(d.logp);
  }
  return out;
}

std::string ScriptedPolicy::generate(const PolicyContext& ctx, int, std::uint64_t) const {
  if (ctx.turn_index < 0 || static_cast<std::size_t>(ctx.turn_index) >= turns_.size()) {
    throw std::runtime_error("scripted policy has no turn " + std::to_string(ctx.turn_index));
  }
  return turns_[static_cast<std::size_t>(ctx.turn_index)];
}

std::vector<double> ScriptedPolicy::log_probs(const Trajectory& trajectory) const {
  // Deterministic: every scripted turn has probability one.
  return std::vector<double>(trajectory.assistant_turns(), 0.0);
}

namespace {

bool is_word(unsigned char c) { return std::isalnum(c) != 0; }

// End offset of each token.
std::vector<std::size_t> token_ends(std::string_view text) {
  std::vector<std::size_t> ends;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    if (i == text.size()) break;
    if (is_word(static_cast<unsigned char>(text[i]))) {
      while (i < text.size() && is_word(static_cast<unsigned char>(text[i]))) ++i;
    } else {
      ++i;
    }
    ends.push_back(i);
  }
  return ends;
}

}  // namespace

int count_tokens(std::string_view text) { return static_cast<int>(token_ends(text).size()); }

std::string truncate_to_tokens(std::string_view text, int max_tokens) {
  const auto ends = token_ends(text);
  if (max_tokens <= 0) return {};
  if (ends.size() <= static_cast<std::size_t>(max_tokens)) return std::string(text);
  return std::string(text.substr(0, ends[static_cast<std::size_t>(max_tokens) - 1]));
}

std::string_view system_prompt() { return kSystemPrompt; }

std::string render_user_prompt(const Task& task) {
  std::string out;
  for (std::size_t i = 0; i < task.initial_images.size(); ++i) out += "<image>\n";
  out += task.question_text;
  if (!task.options.empty()) out += "\n" + render_options(task.options);
  return out;
}

Turn format_observation(const tools::ToolOutcome& outcome, const std::vector<int>& new_image_ids) {
  Turn t;
  t.role = Role::Observation;
  t.text = (new_image_ids.empty() ? "" : "<image>\n") + std::string("<result>") + outcome.result_text + "</result>";
  t.image_ids = new_image_ids;
  return t;
}

tools::Session make_session(const Task& task, const std::string& session_id) {
  return tools::Session::from_images(session_id, task.initial_images, task.scene);
}

Trajectory run_episode(const Policy& policy, const Task& task, tools::Session& session,
                       const RolloutLimits& limits, std::uint64_t seed,
                       const tools::PerceptionBackend& backend) {
  limits.validate();
  if (session.images.size() < task.initial_images.size()) {
    throw std::invalid_argument("run_episode: session does not hold the task images");
  }
  Trajectory traj;
  traj.task_id = task.task_id;
  traj.turns.push_back({Role::System, std::string(system_prompt()), {}});
  Turn user{Role::User, render_user_prompt(task), {}};
  for (std::size_t i = 0; i < task.initial_images.size(); ++i) user.image_ids.push_back(static_cast<int>(i));
  traj.turns.push_back(std::move(user));
  traj.images = session.images;

  bool done = false;
  for (int turn = 0; turn < limits.max_turns && !done; ++turn) {
    std::string text;
    try {
      text = policy.generate(PolicyContext{traj, turn, limits.max_turns}, limits.max_tokens_per_turn,
                             mix_seed(seed, static_cast<std::uint64_t>(turn)));
    } catch (const std::exception&) {
      traj.terminal = Terminal::PolicyAbort;
      return traj;
    }
    int tokens = count_tokens(text);
    if (tokens > limits.max_tokens_per_turn) {
      text = truncate_to_tokens(text, limits.max_tokens_per_turn);
      tokens = limits.max_tokens_per_turn;
    }
    traj.turns.push_back({Role::Assistant, text, {}});
    traj.token_count_per_assistant_turn.push_back(tokens);

    const auto parsed = protocol::parse_assistant_turn(text);
    if (!parsed.ok()) continue;  // format reward handles it
    if (parsed.turn->is_answer()) {
      traj.terminal = Terminal::Answered;
      traj.final_answer = parsed.turn->answer().boxed;
      done = true;
      break;
    }
    const int first_new = static_cast<int>(session.images.size());
    const auto outcome = tools::execute_tool(session, parsed.turn->tool_call(), backend);
    std::vector<int> new_ids;
    for (int id = first_new; id < static_cast<int>(session.images.size()); ++id) new_ids.push_back(id);
    traj.turns.push_back(format_observation(outcome, new_ids));
    traj.images = session.images;
  }
  if (!done) traj.terminal = Terminal::TurnBudgetExhausted;
  return traj;
}

std::vector<Trajectory> run_group(const Policy& policy, const Task& task, int group_size,
                                  const RolloutLimits& limits, std::uint64_t base_seed,
                                  const tools::PerceptionBackend& backend) {
  if (group_size < 2) throw std::invalid_argument("run_group: group_size must be at least 2");
  limits.validate();
  std::vector<Trajectory> out(static_cast<std::size_t>(group_size));
  parallel_for(out.size(), static_cast<std::size_t>(limits.inference_batch_size), [&](std::size_t i) {
    tools::Session session = make_session(task, task.task_id + "#" + std::to_string(i));
    out[i] = run_episode(policy, task, session, limits, base_seed + i, backend);
  });
  return out;
}

}  // namespace toolrl::rollout
