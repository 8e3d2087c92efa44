#include "toolrl/sft.hpp"

#include <stdexcept>

#include "toolrl/common.hpp"

namespace toolrl::sft {

SftItem make_item(const Trajectory& trajectory) {
  SftItem item;
  item.trajectory = trajectory;
  for (std::size_t i = 0; i < trajectory.turns.size(); ++i) {
    const Turn& t = trajectory.turns[i];
    if (t.role == Role::Assistant) item.targets.push_back({i, t.text, true});
    else if (t.role == Role::Observation) item.targets.push_back({i, t.text, false});
  }
  return item;
}

SftBatch make_batch(const std::vector<Trajectory>& trajectories) {
  SftBatch b;
  for (const auto& t : trajectories) b.items.push_back(make_item(t));
  return b;
}

SftResult sft_loss(const rollout::TrainablePolicy& policy, const SftBatch& batch, std::size_t workers) {
  const std::size_t n_params = policy.parameters().size();
  struct Part {
    double sum = 0.0;
    std::size_t masked = 0;
    std::vector<double> grad;
  };
  std::vector<Part> parts(batch.items.size());
  parallel_for(batch.items.size(), workers, [&](std::size_t i) {
    const auto& item = batch.items[i];
    Part& part = parts[i];
    part.grad.assign(n_params, 0.0);
    for (const auto& t : item.targets) {
      if (!t.mask) continue;
      const auto d = policy.score_turn(item.trajectory, t.turn_index, t.target, true);
      part.sum += d.logp;
      ++part.masked;
      for (std::size_t p = 0; p < n_params; ++p) part.grad[p] += d.grad[p];
    }
  });
  SftResult res;
  res.grad.assign(n_params, 0.0);
  std::size_t masked = 0;
  double total = 0.0;
  for (const auto& part : parts) {
    masked += part.masked;
    total += part.sum;
    for (std::size_t p = 0; p < n_params; ++p) res.grad[p] += part.grad[p];
  }
  if (masked == 0) throw std::invalid_argument("sft_loss: batch has no masked decisions");
  const double inv_n = 1.0 / static_cast<double>(batch.items.size());
  res.loss = -total * inv_n;
  for (double& g : res.grad) g *= -inv_n;
  return res;
}

std::vector<double> train_sft(rollout::TrainablePolicy& policy, const SftBatch& batch, int steps,
                              double learning_rate, std::size_t workers) {
  std::vector<double> losses;
  for (int s = 0; s < steps; ++s) {
    const auto r = sft_loss(policy, batch, workers);
    losses.push_back(r.loss);
    const auto p = policy.parameters();
    std::vector<double> next(p.begin(), p.end());
    for (std::size_t i = 0; i < next.size(); ++i) next[i] -= learning_rate * r.grad[i];
    policy.set_parameters(next);
  }
  return losses;
}

}  // namespace toolrl::sft
