#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "toolrl/task.hpp"
#include "toolrl/tools.hpp"
#include "toolrl/trajectory.hpp"

namespace toolrl::rollout {

struct RolloutLimits {
  int max_turns = 5;
  int max_tokens_per_turn = 1024;
  int inference_batch_size = 8;

  void validate() const;
};

// What a policy sees when asked for its next turn. The trajectory holds every
// turn so far and the current session images.
struct PolicyContext {
  const Trajectory& trajectory;
  int turn_index = 0;  // 0-based assistant turn about to be generated
  int max_turns = 5;
};

class Policy {
 public:
  virtual ~Policy() = default;
  // May throw; the engine turns exceptions into a PolicyAbort terminal.
  // Must be safe to call concurrently.
  virtual std::string generate(const PolicyContext& ctx, int max_tokens, std::uint64_t seed) const = 0;
  // Log-probability of each assistant decision in order.
  virtual std::vector<double> log_probs(const Trajectory& trajectory) const;
};

// One per non-prompt turn: assistant turns are decisions (mask 1),
// observation turns are context only (mask 0, logp 0, empty gradient).
struct Decision {
  std::size_t turn_index = 0;
  bool mask = false;
  double logp = 0.0;
  std::vector<double> grad;  // d logp / d parameters; empty when mask is 0
};

class TrainablePolicy : public Policy {
 public:
  virtual std::span<const double> parameters() const = 0;
  virtual void set_parameters(std::span<const double> params) = 0;
  virtual std::unique_ptr<TrainablePolicy> clone() const = 0;

  // Log-probability (and optionally its gradient) of emitting `text` as the
  // assistant turn at trajectory.turns[turn_index], conditioned on the turns
  // before it. Throws when the text is not an action the policy can emit.
  virtual Decision score_turn(const Trajectory& trajectory, std::size_t turn_index,
                              std::string_view text, bool with_grad) const = 0;

  // One entry per turn after the prompt; assistant turns are scored against
  // their own text.
  std::vector<Decision> decisions(const Trajectory& trajectory, bool with_grad) const;
  std::vector<double> log_probs(const Trajectory& trajectory) const override;
};

// Replays fixed turns in order; throws when it runs out.
class ScriptedPolicy final : public Policy {
 public:
  explicit ScriptedPolicy(std::vector<std::string> turns) : turns_(std::move(turns)) {}
  std::string generate(const PolicyContext& ctx, int max_tokens, std::uint64_t seed) const override;
  std::vector<double> log_probs(const Trajectory& trajectory) const override;

 private:
  std::vector<std::string> turns_;
};

// Tokens are maximal alphanumeric runs or single other non-space characters;
// whitespace belongs to the following token.
int count_tokens(std::string_view text);
std::string truncate_to_tokens(std::string_view text, int max_tokens);

// Repo-owned system prompt (tool list and output format).
std::string_view system_prompt();
std::string render_user_prompt(const Task& task);

Turn format_observation(const tools::ToolOutcome& outcome, const std::vector<int>& new_image_ids);

Trajectory run_episode(const Policy& policy, const Task& task, tools::Session& session,
                       const RolloutLimits& limits, std::uint64_t seed,
                       const tools::PerceptionBackend& backend);

tools::Session make_session(const Task& task, const std::string& session_id);

// group_size >= 2 independent episodes with seeds base_seed + i, at most
// limits.inference_batch_size running at once. Order is preserved.
std::vector<Trajectory> run_group(const Policy& policy, const Task& task, int group_size,
                                  const RolloutLimits& limits, std::uint64_t base_seed,
                                  const tools::PerceptionBackend& backend);

}  // namespace toolrl::rollout
