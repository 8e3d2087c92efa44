#pragma once

#include <string>
#include <string_view>

#include "toolrl/protocol.hpp"
#include "toolrl/trajectory.hpp"

namespace toolrl::reward {

struct ScoredTrajectory {
  Trajectory trajectory;
  std::string gold;
  bool format_ok = false;
  bool answer_ok = false;
  int reward = -1;
};

// Trim, uppercase, peel surrounding parentheses and periods, collapse
// internal whitespace.
std::string normalize_answer(std::string_view s);

bool answer_correct(std::string_view predicted, std::string_view gold);

// +1 when the trajectory passes the format check, ended with an answer and
// that answer matches the gold; -1 otherwise.
ScoredTrajectory compute_reward(const Trajectory& t, const std::string& gold);

}  // namespace toolrl::reward
