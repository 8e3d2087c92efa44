#include "toolrl/grpo.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "toolrl/common.hpp"

namespace toolrl::grpo {

void GrpoConfig::validate() const {
  if (group_size < 2) throw std::invalid_argument("group_size must be at least 2");
  if (!(clip_eps > 0.0 && clip_eps < 1.0)) throw std::invalid_argument("clip_eps must lie in (0, 1)");
  if (!(kl_coef >= 0.0)) throw std::invalid_argument("kl_coef must be non-negative");
  if (!std::isfinite(learning_rate) || learning_rate < 0.0) {
    throw std::invalid_argument("learning_rate must be finite and non-negative");
  }
  if (mini_batch_size < 1) throw std::invalid_argument("mini_batch_size must be positive");
}

std::vector<double> group_advantages(const std::vector<double>& rewards) {
  if (rewards.size() < 2) throw std::invalid_argument("group_advantages needs at least two rewards");
  const double n = static_cast<double>(rewards.size());
  double mean = 0.0;
  for (double r : rewards) mean += r;
  mean /= n;
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  const double sd = std::sqrt(var / n);
  std::vector<double> out(rewards.size(), 0.0);
  if (sd < 1e-8) return out;
  for (std::size_t i = 0; i < rewards.size(); ++i) out[i] = (rewards[i] - mean) / sd;
  return out;
}

double clipped_term(double logp_new, double logp_old, double advantage, double eps) {
  const double s = std::exp(logp_new - logp_old);
  const double c = std::clamp(s, 1.0 - eps, 1.0 + eps);
  return std::min(s * advantage, c * advantage);
}

double clipped_term_grad(double logp_new, double logp_old, double advantage, double eps) {
  const double s = std::exp(logp_new - logp_old);
  const double c = std::clamp(s, 1.0 - eps, 1.0 + eps);
  // The unclipped branch is active when it is the minimum; inside the clip
  // range both branches coincide.
  return s * advantage <= c * advantage ? s * advantage : 0.0;
}

double kl_k3(double logp_new, double logp_ref) {
  const double d = logp_ref - logp_new;
  return std::expm1(d) - d;
}

double kl_k3_grad(double logp_new, double logp_ref) { return -std::expm1(logp_ref - logp_new); }

ObjectiveResult grpo_objective(const std::vector<ScoredGroup>& groups, const DecisionLogProbs& logps,
                               const GrpoConfig& cfg) {
  if (logps.size() != groups.size()) throw std::invalid_argument("grpo_objective: group count mismatch");
  ObjectiveResult res;
  res.grad.resize(groups.size());
  double kl_sum = 0.0;
  std::size_t kl_n = 0;
  double total = 0.0;
  const double eps = cfg.clip_eps;
  const double beta = cfg.kl_coef;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const auto& group = groups[g];
    const auto& lg = logps[g];
    if (lg.size() != group.advantages.size()) {
      throw std::invalid_argument("grpo_objective: member count mismatch in group " + group.prompt_id);
    }
    const double inv_members = 1.0 / static_cast<double>(lg.size());
    res.grad[g].resize(lg.size());
    double group_sum = 0.0;
    for (std::size_t i = 0; i < lg.size(); ++i) {
      const auto& ds = lg[i];
      auto& gout = res.grad[g][i];
      gout.assign(ds.size(), 0.0);
      std::size_t m = 0;
      double sum_new = 0.0, sum_old = 0.0;
      for (const auto& d : ds) {
        if (!d.mask) continue;
        ++m;
        sum_new += d.logp_new;
        sum_old += d.logp_old;
      }
      if (m == 0) {
        res.warnings.push_back("group " + group.prompt_id + " member " + std::to_string(i) +
                               " has no action decisions; contributes 0");
        continue;
      }
      const double a = group.advantages[i];
      const double inv_m = 1.0 / static_cast<double>(m);
      const double scale = inv_members / static_cast<double>(groups.size());
      double traj = 0.0;
      double kl_traj = 0.0;
      for (std::size_t k = 0; k < ds.size(); ++k) {
        const auto& d = ds[k];
        if (!d.mask) continue;
        const double kl = kl_k3(d.logp_new, d.logp_ref);
        kl_traj += kl;
        kl_sum += kl;
        ++kl_n;
        double gk = -beta * kl_k3_grad(d.logp_new, d.logp_ref) * inv_m;
        if (cfg.ratio_granularity == RatioGranularity::Decision) {
          traj += clipped_term(d.logp_new, d.logp_old, a, eps);
          gk += clipped_term_grad(d.logp_new, d.logp_old, a, eps) * inv_m;
        } else {
          gk += clipped_term_grad(sum_new, sum_old, a, eps);
        }
        gout[k] = gk * scale;
      }
      if (cfg.ratio_granularity == RatioGranularity::Decision) {
        traj = traj * inv_m - beta * kl_traj * inv_m;
      } else {
        traj = clipped_term(sum_new, sum_old, a, eps) - beta * kl_traj * inv_m;
      }
      group_sum += traj;
    }
    total += group_sum * inv_members;
  }
  res.objective = groups.empty() ? 0.0 : total / static_cast<double>(groups.size());
  res.mean_kl = kl_n == 0 ? 0.0 : kl_sum / static_cast<double>(kl_n);
  return res;
}

// ---------------------------------------------------------------------------
// Configuration

void TrainConfig::validate() const {
  grpo.validate();
  limits.validate();
  if (steps < 0) throw std::invalid_argument("steps must be non-negative");
  if (tasks_per_step < 1) throw std::invalid_argument("tasks_per_step must be positive");
  if (ppo_epochs < 1) throw std::invalid_argument("ppo_epochs must be positive");
  if (grad_clip < 0.0) throw std::invalid_argument("grad_clip must be non-negative");
  if (moving_average_window < 1) throw std::invalid_argument("moving_average_window must be positive");
  if (emit_malformed_prob < 0.0 || emit_malformed_prob > 1.0) {
    throw std::invalid_argument("emit_malformed_prob must lie in [0, 1]");
  }
  if (n_options < 2 || n_options > 6) throw std::invalid_argument("n_options must lie in [2, 6]");
  parse_template(task_template);
}

namespace {

long long parse_int(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  long long out = 0;
  try {
    out = std::stoll(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != v.size()) throw std::invalid_argument(key + ": expected an integer, got '" + v + "'");
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != v.size()) throw std::invalid_argument(key + ": expected a number, got '" + v + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument(key + ": expected true or false, got '" + v + "'");
}

}  // namespace

void apply_config_value(TrainConfig& cfg, const std::string& key, const std::string& value) {
  auto& g = cfg.grpo;
  if (key == "group_size") g.group_size = static_cast<int>(parse_int(key, value));
  else if (key == "clip_eps") g.clip_eps = parse_double(key, value);
  else if (key == "kl_coef") g.kl_coef = parse_double(key, value);
  else if (key == "learning_rate") g.learning_rate = parse_double(key, value);
  else if (key == "mini_batch_size") g.mini_batch_size = static_cast<int>(parse_int(key, value));
  else if (key == "zero_std_policy") {
    if (value != "zero_advantages") throw std::invalid_argument("zero_std_policy: only zero_advantages is supported");
  } else if (key == "ratio_granularity") {
    if (value == "decision") g.ratio_granularity = RatioGranularity::Decision;
    else if (value == "sequence") g.ratio_granularity = RatioGranularity::Sequence;
    else throw std::invalid_argument("ratio_granularity: expected decision or sequence");
  } else if (key == "max_turns") cfg.limits.max_turns = static_cast<int>(parse_int(key, value));
  else if (key == "max_tokens_per_turn") cfg.limits.max_tokens_per_turn = static_cast<int>(parse_int(key, value));
  else if (key == "inference_batch_size") cfg.limits.inference_batch_size = static_cast<int>(parse_int(key, value));
  else if (key == "steps") cfg.steps = static_cast<int>(parse_int(key, value));
  else if (key == "tasks_per_step") cfg.tasks_per_step = static_cast<int>(parse_int(key, value));
  else if (key == "ppo_epochs") cfg.ppo_epochs = static_cast<int>(parse_int(key, value));
  else if (key == "grad_clip") cfg.grad_clip = parse_double(key, value);
  else if (key == "seed") cfg.seed = static_cast<std::uint64_t>(parse_int(key, value));
  else if (key == "moving_average_window") cfg.moving_average_window = static_cast<int>(parse_int(key, value));
  else if (key == "tool_access") cfg.tool_access = parse_bool(key, value);
  else if (key == "emit_malformed_prob") cfg.emit_malformed_prob = parse_double(key, value);
  else if (key == "task_template") cfg.task_template = value;
  else if (key == "n_options") cfg.n_options = static_cast<int>(parse_int(key, value));
  else throw std::invalid_argument("unknown config key '" + key + "'");
}

TrainConfig parse_train_config(const std::string& text) {
  TrainConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key=value");
    }
    try {
      apply_config_value(cfg, trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  cfg.validate();
  return cfg;
}

TrainConfig load_train_config(const std::string& path) { return parse_train_config(read_file(path)); }

std::string metrics_to_json_line(const StepMetrics& m) {
  nlohmann::ordered_json j;
  j["step"] = m.step;
  j["groups_seen"] = m.groups_seen;
  j["mean_reward"] = m.mean_reward;
  j["moving_average_reward"] = m.moving_average_reward;
  j["window_groups"] = m.window_groups;
  j["objective"] = m.objective;
  j["mean_kl"] = m.mean_kl;
  j["format_ok_rate"] = m.format_ok_rate;
  j["mean_assistant_turns"] = m.mean_assistant_turns;
  j["grad_norm"] = m.grad_norm;
  return j.dump();
}

// ---------------------------------------------------------------------------
// Training loop

namespace {

std::string dump_group(const ScoredGroup& g, const std::vector<std::vector<DecisionLogProb>>& lps) {
  std::ostringstream os;
  os << "group " << g.prompt_id << ":";
  for (std::size_t i = 0; i < g.members.size(); ++i) {
    os << "\n  member " << i << " reward=" << g.members[i].reward << " advantage=" << g.advantages[i]
       << " logps=[";
    for (const auto& d : lps[i]) {
      if (!d.mask) continue;
      os << " (" << d.logp_new << ", " << d.logp_old << ", " << d.logp_ref << ")";
    }
    os << " ]";
  }
  return os.str();
}

struct Sample {
  std::vector<rollout::Decision> old_decisions;
  std::vector<double> ref_logps;
};

}  // namespace

TrainReport train_grpo(rollout::TrainablePolicy& policy, const TaskSampler& sampler, const TrainConfig& cfg,
                       const tools::PerceptionBackend& backend, std::ostream* metrics) {
  cfg.validate();
  const int G = cfg.grpo.group_size;
  const std::size_t workers = static_cast<std::size_t>(cfg.limits.inference_batch_size);
  const auto ref = policy.clone();
  TrainReport report;
  std::deque<double> window;
  double window_sum = 0.0;
  std::uint64_t group_index = 0;

  for (int step = 0; step < cfg.steps; ++step) {
    const auto behaviour = policy.clone();

    std::vector<ScoredGroup> groups;
    std::size_t format_ok = 0, n_traj = 0, assistant_turns = 0;
    double reward_sum = 0.0;
    for (int t = 0; t < cfg.tasks_per_step; ++t, ++group_index) {
      const Task task = sampler(group_index);
      auto trajs = rollout::run_group(*behaviour, task, G, cfg.limits, mix_seed(cfg.seed, group_index), backend);
      ScoredGroup sg;
      sg.prompt_id = task.task_id;
      std::vector<double> rewards;
      for (auto& tr : trajs) {
        sg.members.push_back(reward::compute_reward(tr, task.gold));
        const auto& m = sg.members.back();
        rewards.push_back(m.reward);
        format_ok += m.format_ok ? 1 : 0;
        assistant_turns += tr.assistant_turns();
        ++n_traj;
      }
      sg.advantages = group_advantages(rewards);
      double mean = 0.0;
      for (double r : rewards) mean += r;
      mean /= static_cast<double>(rewards.size());
      reward_sum += mean;
      window.push_back(mean);
      window_sum += mean;
      if (window.size() > static_cast<std::size_t>(cfg.moving_average_window)) {
        window_sum -= window.front();
        window.pop_front();
      }
      groups.push_back(std::move(sg));
    }

    // Behaviour and reference log-probabilities are fixed for the round.
    std::vector<std::pair<std::size_t, std::size_t>> index;
    for (std::size_t g = 0; g < groups.size(); ++g) {
      for (std::size_t i = 0; i < groups[g].members.size(); ++i) index.emplace_back(g, i);
    }
    std::vector<Sample> samples(index.size());
    parallel_for(index.size(), workers, [&](std::size_t k) {
      const auto& tr = groups[index[k].first].members[index[k].second].trajectory;
      samples[k].old_decisions = behaviour->decisions(tr, false);
      for (const auto& d : samples[k].old_decisions) {
        samples[k].ref_logps.push_back(d.mask ? ref->score_turn(tr, d.turn_index, tr.turns[d.turn_index].text, false).logp
                                              : 0.0);
      }
    });

    const std::size_t groups_per_batch =
        std::max<std::size_t>(1, static_cast<std::size_t>(cfg.grpo.mini_batch_size) / static_cast<std::size_t>(G));
    double objective_first_epoch = 0.0, kl_first_epoch = 0.0, grad_norm_last = 0.0;
    std::size_t batches_first_epoch = 0;
    for (int epoch = 0; epoch < cfg.ppo_epochs; ++epoch) {
      for (std::size_t b0 = 0; b0 < groups.size(); b0 += groups_per_batch) {
        const std::size_t b1 = std::min(groups.size(), b0 + groups_per_batch);
        std::vector<ScoredGroup> batch(groups.begin() + static_cast<std::ptrdiff_t>(b0),
                                       groups.begin() + static_cast<std::ptrdiff_t>(b1));
        // Flat sample indices of the batch members.
        std::vector<std::size_t> flat;
        for (std::size_t k = 0; k < index.size(); ++k) {
          if (index[k].first >= b0 && index[k].first < b1) flat.push_back(k);
        }
        std::vector<std::vector<rollout::Decision>> current(flat.size());
        parallel_for(flat.size(), workers, [&](std::size_t j) {
          const auto& [g, i] = index[flat[j]];
          current[j] = policy.decisions(groups[g].members[i].trajectory, true);
        });
        DecisionLogProbs lps(batch.size());
        for (std::size_t g = 0; g < batch.size(); ++g) lps[g].resize(batch[g].members.size());
        for (std::size_t j = 0; j < flat.size(); ++j) {
          const auto& [g, i] = index[flat[j]];
          const auto& s = samples[flat[j]];
          auto& out = lps[g - b0][i];
          for (std::size_t k = 0; k < current[j].size(); ++k) {
            const auto& d = current[j][k];
            out.push_back({k, d.logp, s.old_decisions[k].logp, s.ref_logps[k], d.mask});
          }
        }
        const auto res = grpo_objective(batch, lps, cfg.grpo);
        const auto params = policy.parameters();
        std::vector<double> grad(params.size(), 0.0);
        for (std::size_t j = 0; j < flat.size(); ++j) {
          const auto& [g, i] = index[flat[j]];
          const auto& sig = res.grad[g - b0][i];
          for (std::size_t k = 0; k < current[j].size(); ++k) {
            if (!current[j][k].mask || sig[k] == 0.0) continue;
            const auto& dg = current[j][k].grad;
            for (std::size_t p = 0; p < grad.size(); ++p) grad[p] += sig[k] * dg[p];
          }
        }
        double norm2 = 0.0;
        for (double v : grad) norm2 += v * v;
        if (!std::isfinite(res.objective) || !std::isfinite(norm2)) {
          for (std::size_t g = 0; g < batch.size(); ++g) {
            bool bad = false;
            for (const auto& m : lps[g])
              for (const auto& d : m)
                if (d.mask && !(std::isfinite(d.logp_new) && std::isfinite(d.logp_old) && std::isfinite(d.logp_ref)))
                  bad = true;
            if (bad || g + 1 == batch.size()) {
              throw std::runtime_error("non-finite GRPO objective at step " + std::to_string(step) + "\n" +
                                       dump_group(batch[g], lps[g]));
            }
          }
        }
        double norm = std::sqrt(norm2);
        grad_norm_last = norm;
        double scale = cfg.grpo.learning_rate;
        if (cfg.grad_clip > 0.0 && norm > cfg.grad_clip) scale *= cfg.grad_clip / norm;
        std::vector<double> next(params.begin(), params.end());
        for (std::size_t p = 0; p < next.size(); ++p) next[p] += scale * grad[p];
        if (scale != 0.0) policy.set_parameters(next);
        if (epoch == 0) {
          objective_first_epoch += res.objective;
          kl_first_epoch += res.mean_kl;
          ++batches_first_epoch;
        }
      }
    }

    StepMetrics m;
    m.step = step;
    m.groups_seen = static_cast<int>(group_index);
    m.mean_reward = reward_sum / static_cast<double>(cfg.tasks_per_step);
    m.window_groups = static_cast<int>(window.size());
    m.moving_average_reward = window_sum / static_cast<double>(window.size());
    m.objective = objective_first_epoch / static_cast<double>(std::max<std::size_t>(1, batches_first_epoch));
    m.mean_kl = kl_first_epoch / static_cast<double>(std::max<std::size_t>(1, batches_first_epoch));
    m.format_ok_rate = static_cast<double>(format_ok) / static_cast<double>(n_traj);
    m.mean_assistant_turns = static_cast<double>(assistant_turns) / static_cast<double>(n_traj);
    m.grad_norm = grad_norm_last;
    if (metrics) *metrics << metrics_to_json_line(m) << '\n';
    report.steps.push_back(m);
  }
  const auto p = policy.parameters();
  report.final_parameters.assign(p.begin(), p.end());
  return report;
}

}  // namespace toolrl::grpo
