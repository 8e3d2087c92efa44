#pragma once

#include <string>
#include <vector>

#include "toolrl/rollout.hpp"

namespace toolrl::sft {

// Target for one non-prompt turn. Observation positions carry mask 0 and are
// never scored; they only condition later decisions.
struct DecisionTarget {
  std::size_t turn_index = 0;
  std::string target;
  bool mask = false;
};

struct SftItem {
  Trajectory trajectory;
  std::vector<DecisionTarget> targets;
};

struct SftBatch {
  std::vector<SftItem> items;
};

// Targets are the trajectory's own assistant turns (mask 1) and observation
// turns (mask 0).
SftItem make_item(const Trajectory& trajectory);
SftBatch make_batch(const std::vector<Trajectory>& trajectories);

struct SftResult {
  double loss = 0.0;
  std::vector<double> grad;  // d loss / d parameters
};

// -(1/N) sum_i sum_t mask * log p(target | context). Throws when no target
// is masked in.
SftResult sft_loss(const rollout::TrainablePolicy& policy, const SftBatch& batch, std::size_t workers = 1);

// Constant-rate gradient descent; returns the loss before each step.
std::vector<double> train_sft(rollout::TrainablePolicy& policy, const SftBatch& batch, int steps,
                              double learning_rate, std::size_t workers = 1);

}  // namespace toolrl::sft
