#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "toolrl/reward.hpp"
#include "toolrl/rollout.hpp"
#include "toolrl/task.hpp"

namespace toolrl::grpo {

enum class ZeroStdPolicy { ZeroAdvantages };
enum class RatioGranularity { Decision, Sequence };

struct GrpoConfig {
  int group_size = 8;
  double clip_eps = 0.2;
  double kl_coef = 1e-3;
  double learning_rate = 2e-6;
  int mini_batch_size = 128;  // trajectories per gradient step
  ZeroStdPolicy zero_std_policy = ZeroStdPolicy::ZeroAdvantages;
  RatioGranularity ratio_granularity = RatioGranularity::Decision;

  void validate() const;
};

struct ScoredGroup {
  std::string prompt_id;
  std::vector<reward::ScoredTrajectory> members;
  std::vector<double> advantages;
};

struct DecisionLogProb {
  std::size_t decision_index = 0;
  double logp_new = 0.0;
  double logp_old = 0.0;
  double logp_ref = 0.0;
  bool mask = false;
};

// logps[g][i] lists the decisions of member i of group g.
using DecisionLogProbs = std::vector<std::vector<std::vector<DecisionLogProb>>>;

// (r - mean) / std with the population std; all zeros when std < 1e-8.
std::vector<double> group_advantages(const std::vector<double>& rewards);

double clipped_term(double logp_new, double logp_old, double advantage, double eps);
// d/d logp_new of clipped_term.
double clipped_term_grad(double logp_new, double logp_old, double advantage, double eps);

double kl_k3(double logp_new, double logp_ref);
double kl_k3_grad(double logp_new, double logp_ref);

struct ObjectiveResult {
  double objective = 0.0;
  // Same shape as the input; d objective / d logp_new, zero where masked.
  std::vector<std::vector<std::vector<double>>> grad;
  double mean_kl = 0.0;  // over all masked decisions
  std::vector<std::string> warnings;
};

// Per trajectory: mean over masked decisions of (clipped term - kl_coef * k3),
// or in sequence mode the clipped term of the summed log-ratio minus the mean
// KL. Averaged over each group's members, then over groups.
ObjectiveResult grpo_objective(const std::vector<ScoredGroup>& groups, const DecisionLogProbs& logps,
                               const GrpoConfig& cfg);

// Everything the training loop reads from a config file.
struct TrainConfig {
  GrpoConfig grpo;
  rollout::RolloutLimits limits;
  int steps = 200;
  int tasks_per_step = 4;
  int ppo_epochs = 1;
  double grad_clip = 0.0;  // max gradient L2 norm; 0 disables
  std::uint64_t seed = 0;
  int moving_average_window = 200;  // in groups
  // Environment knobs used by the toy gym.
  bool tool_access = true;
  double emit_malformed_prob = 0.0;
  std::string task_template = "count";
  int n_options = 4;

  void validate() const;
};

// key=value lines; '#' starts a comment. Unknown keys are errors.
TrainConfig parse_train_config(const std::string& text);
TrainConfig load_train_config(const std::string& path);
void apply_config_value(TrainConfig& cfg, const std::string& key, const std::string& value);

struct StepMetrics {
  int step = 0;
  int groups_seen = 0;
  double mean_reward = 0.0;
  double moving_average_reward = 0.0;  // over the last moving_average_window groups
  int window_groups = 0;               // groups inside the moving average
  double objective = 0.0;
  double mean_kl = 0.0;
  double format_ok_rate = 0.0;
  double mean_assistant_turns = 0.0;
  double grad_norm = 0.0;
};

std::string metrics_to_json_line(const StepMetrics& m);

struct TrainReport {
  std::vector<StepMetrics> steps;
  std::vector<double> final_parameters;
};

// Produces the task for the n-th group of the run.
using TaskSampler = std::function<Task(std::uint64_t group_index)>;

// Plain gradient ascent on grpo_objective. The reference policy is frozen at
// entry, the behaviour policy is snapshotted before every sampling round.
// `metrics`, when set, receives one JSON line per step.
TrainReport train_grpo(rollout::TrainablePolicy& policy, const TaskSampler& sampler,
                       const TrainConfig& cfg, const tools::PerceptionBackend& backend,
                       std::ostream* metrics = nullptr);

}  // namespace toolrl::grpo
