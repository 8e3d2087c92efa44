#include "toolrl/reward.hpp"

#include <cctype>

#include "toolrl/common.hpp"

namespace toolrl::reward {

std::string normalize_answer(std::string_view s) {
  std::string t = to_upper(trim(s));
  for (;;) {
    const std::size_t before = t.size();
    while (!t.empty() && t.back() == '.') t.pop_back();
    if (t.size() >= 2 && t.front() == '(' && t.back() == ')') t = t.substr(1, t.size() - 2);
    t = trim(t);
    if (t.size() == before) break;
  }
  std::string out;
  bool space = false;
  for (char c : t) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      space = true;
      continue;
    }
    if (space && !out.empty()) out += ' ';
    space = false;
    out += c;
  }
  return out;
}

bool answer_correct(std::string_view predicted, std::string_view gold) {
  const std::string g = normalize_answer(gold);
  if (g.empty()) return false;
  return normalize_answer(predicted) == g;
}

ScoredTrajectory compute_reward(const Trajectory& t, const std::string& gold) {
  ScoredTrajectory s;
  s.trajectory = t;
  s.gold = gold;
  s.format_ok = protocol::check_format(t).overall_ok;
  s.answer_ok = t.terminal == Terminal::Answered && t.final_answer.has_value() &&
                answer_correct(*t.final_answer, gold);
  s.reward = (s.format_ok && s.answer_ok) ? 1 : -1;
  return s;
}

}  // namespace toolrl::reward
