#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <sstream>

#include "toolrl/common.hpp"
#include "toolrl/grpo.hpp"
#include "toolrl/reward.hpp"
#include "toolrl/toygym.hpp"
#include "../support/grpo_oracle.hpp"

using namespace toolrl;
using namespace toolrl::grpo;

namespace {

ScoredGroup group_of(const std::vector<double>& advantages) {
  ScoredGroup g;
  g.prompt_id = "p";
  g.members.resize(advantages.size());
  g.advantages = advantages;
  return g;
}

DecisionLogProb lp(double n, double o, double r, bool mask = true) { return {0, n, o, r, mask}; }

}  // namespace

// ---------------------------------------------------------------------------
// Advantages

TEST(Advantages, Examples) {
  EXPECT_EQ(group_advantages({1, -1, -1, 1}), (std::vector<double>{1, -1, -1, 1}));
  EXPECT_EQ(group_advantages({1, 1, 1, 1}), (std::vector<double>(4, 0.0)));
  // mean = -1/2, population variance = 3/4: A = (r + 1/2) / (sqrt(3)/2).
  const auto a = group_advantages({1, 1, -1, -1, -1, -1, -1, -1});
  const double hi = std::sqrt(3.0), lo = -1.0 / std::sqrt(3.0);
  for (int i = 0; i < 8; ++i) EXPECT_NEAR(a[i], i < 2 ? hi : lo, 1e-12);
  EXPECT_NEAR(a[0], 1.7321, 1e-4);
  EXPECT_NEAR(a[2], -0.5774, 1e-4);
  EXPECT_THROW(group_advantages({1}), std::invalid_argument);
}

TEST(Advantages, Properties) {
  Rng rng(1);
  for (int trial = 0; trial < 2000; ++trial) {
    const std::size_t n = 2 + rng.below(15);
    std::vector<double> r(n);
    for (auto& v : r) v = trial % 2 ? (rng.bernoulli(0.5) ? 1.0 : -1.0) : rng.uniform(-3, 3);
    const auto a = group_advantages(r);
    const double mean_r = std::accumulate(r.begin(), r.end(), 0.0) / n;
    double var_r = 0;
    for (double v : r) var_r += (v - mean_r) * (v - mean_r);
    if (std::sqrt(var_r / n) < 1e-8) {
      for (double v : a) EXPECT_EQ(v, 0.0);
      continue;
    }
    const double mean = std::accumulate(a.begin(), a.end(), 0.0) / n;
    double var = 0;
    for (double v : a) var += (v - mean) * (v - mean);
    EXPECT_NEAR(mean, 0.0, 1e-9);
    EXPECT_NEAR(std::sqrt(var / n), 1.0, 1e-6);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (r[i] > r[j]) {
          EXPECT_GT(a[i], a[j]);
        }
      }
    }
    const double scale = rng.uniform(0.1, 10), shift = rng.uniform(-5, 5);
    std::vector<double> r2(n);
    for (std::size_t i = 0; i < n; ++i) r2[i] = scale * r[i] + shift;
    const auto a2 = group_advantages(r2);
    for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(a[i], a2[i], 1e-9);
  }
}

// ---------------------------------------------------------------------------
// Clipped surrogate and KL

TEST(Clipped, HandOracleTable) {
  for (const auto& r : fixtures::clipped_hand_table()) {
    EXPECT_NEAR(clipped_term(std::log(r.s), 0.0, r.a, r.eps), r.expected, 1e-12)
        << "s=" << r.s << " A=" << r.a << " eps=" << r.eps;
  }
}

TEST(Clipped, GradientMatchesDifferences) {
  Rng rng(2);
  for (int i = 0; i < 1000; ++i) {
    const double n = rng.uniform(-2, 0), o = n + rng.uniform(-0.6, 0.6), a = rng.uniform(-2, 2);
    const double h = 1e-6;
    const double fd = (clipped_term(n + h, o, a, 0.2) - clipped_term(n - h, o, a, 0.2)) / (2 * h);
    const double s = std::exp(n - o);
    if (std::abs(s - 0.8) < 1e-4 || std::abs(s - 1.2) < 1e-4) continue;  // kinks
    EXPECT_NEAR(clipped_term_grad(n, o, a, 0.2), fd, 1e-6);
  }
}

TEST(KL, Values) {
  EXPECT_EQ(kl_k3(-1.3, -1.3), 0.0);
  // d = logp_ref - logp_new = ln 2: 2 - ln 2 - 1.
  EXPECT_NEAR(kl_k3(0.0, std::log(2.0)), 0.30685281944005469, 1e-15);
  Rng rng(3);
  for (int i = 0; i < 10000; ++i) {
    const double n = rng.uniform(-20, 0), r = rng.uniform(-20, 0);
    EXPECT_GE(kl_k3(n, r), 0.0);
    if (n != r) {
      EXPECT_GT(kl_k3(n, r), 0.0);
    }
    const double h = 1e-6;
    if (std::abs(n - r) < 5) {
      EXPECT_NEAR(kl_k3_grad(n, r), (kl_k3(n + h, r) - kl_k3(n - h, r)) / (2 * h), 1e-5);
    }
  }
  EXPECT_GT(kl_k3(0.0, 1e-9), 0.0);
}

// ---------------------------------------------------------------------------
// Objective

TEST(Objective, ZeroAdvantagesNoKl) {
  GrpoConfig cfg;
  cfg.kl_coef = 0;
  const auto res = grpo_objective({group_of({0, 0})}, {{{lp(-1, -2, -3)}, {lp(-0.5, -0.1, -1)}}}, cfg);
  EXPECT_EQ(res.objective, 0.0);
  for (const auto& m : res.grad[0]) {
    for (double v : m) EXPECT_EQ(v, 0.0);
  }
}

TEST(Objective, SingleDecision) {
  GrpoConfig cfg;
  cfg.kl_coef = 0;
  // Two members so the group is legal; the second has no decisions.
  const auto res = grpo_objective({group_of({1.0, 1.0})}, {{{lp(-0.7, -0.7, -0.7)}, {lp(-1, -1, -1)}}}, cfg);
  EXPECT_NEAR(res.objective, 1.0, 1e-15);
  // One group of two members: d objective / d logp_new = s * A / 2.
  EXPECT_NEAR(res.grad[0][0][0], 0.5, 1e-15);
  const double h = 1e-6;
  const double up = grpo_objective({group_of({1, 1})}, {{{lp(-0.7 + h, -0.7, -0.7)}, {lp(-1, -1, -1)}}}, cfg).objective;
  const double dn = grpo_objective({group_of({1, 1})}, {{{lp(-0.7 - h, -0.7, -0.7)}, {lp(-1, -1, -1)}}}, cfg).objective;
  EXPECT_NEAR((up - dn) / (2 * h), res.grad[0][0][0], 1e-8);
}

TEST(Objective, MaskedDecisionsAreInert) {
  GrpoConfig cfg;
  const DecisionLogProbs base = {{{lp(-1, -1.1, -0.9), lp(-50, 0, 0, false), lp(-2, -2.2, -1.7)}, {lp(-0.3, -0.2, -0.4)}}};
  const auto ref = grpo_objective({group_of({1, -1})}, base, cfg);
  auto changed = base;
  changed[0][0][1] = lp(3, -80, 7, false);
  const auto res = grpo_objective({group_of({1, -1})}, changed, cfg);
  EXPECT_EQ(res.objective, ref.objective);
  EXPECT_EQ(res.grad, ref.grad);
  EXPECT_EQ(res.grad[0][0][1], 0.0);
}

TEST(Objective, EmptyTrajectoryWarns) {
  const auto res = grpo_objective({group_of({1, -1})}, {{{lp(0, 0, 0, false)}, {lp(-1, -1, -1)}}}, GrpoConfig{});
  EXPECT_EQ(res.warnings.size(), 1u);
  EXPECT_NEAR(res.objective, -0.5, 1e-15);
}

TEST(Objective, SequenceGranularity) {
  GrpoConfig cfg;
  cfg.kl_coef = 0;
  cfg.ratio_granularity = RatioGranularity::Sequence;
  // Summed log-ratio 0.1 + 0.05: s = exp(0.15), inside the clip range.
  const auto res = grpo_objective({group_of({1, -1})}, {{{lp(-1, -1.1, 0), lp(-2, -2.05, 0)}, {lp(-1, -1, -1)}}}, cfg);
  EXPECT_NEAR(res.objective, (std::exp(0.15) - 1.0) / 2.0, 1e-15);
  EXPECT_NEAR(res.grad[0][0][0], std::exp(0.15) / 2.0, 1e-15);
  EXPECT_NEAR(res.grad[0][0][1], std::exp(0.15) / 2.0, 1e-15);
}

// ---------------------------------------------------------------------------
// Gradient oracle through the toy policy

class GradientOracle : public ::testing::TestWithParam<RatioGranularity> {};

TEST_P(GradientOracle, MatchesCentralDifferences) {
  double worst = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const double rel = fixtures::grpo_gradient_error(seed, GetParam());
    worst = std::max(worst, rel);
    EXPECT_LE(rel, 1e-4) << "seed " << seed;
  }
  RecordProperty("worst_relative_error", format_real(worst));
}

INSTANTIATE_TEST_SUITE_P(Granularity, GradientOracle,
                         ::testing::Values(RatioGranularity::Decision, RatioGranularity::Sequence));

// ---------------------------------------------------------------------------
// Config and training loop

TEST(Config, ParseAndErrors) {
  const auto cfg = parse_train_config(
      "# comment\n group_size = 4\nclip_eps=0.1\nkl_coef=0.01 # trailing\nlearning_rate=3\nmini_batch_size=64\n"
      "max_turns=3\nmax_tokens_per_turn=256\nsteps=7\nseed=9\nratio_granularity=sequence\n");
  EXPECT_EQ(cfg.grpo.group_size, 4);
  EXPECT_EQ(cfg.grpo.clip_eps, 0.1);
  EXPECT_EQ(cfg.grpo.kl_coef, 0.01);
  EXPECT_EQ(cfg.grpo.learning_rate, 3.0);
  EXPECT_EQ(cfg.grpo.mini_batch_size, 64);
  EXPECT_EQ(cfg.limits.max_turns, 3);
  EXPECT_EQ(cfg.limits.max_tokens_per_turn, 256);
  EXPECT_EQ(cfg.steps, 7);
  EXPECT_EQ(cfg.seed, 9u);
  EXPECT_EQ(cfg.grpo.ratio_granularity, RatioGranularity::Sequence);
  try {
    parse_train_config("steps=1\nbogus=2\n");
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
  }
  EXPECT_THROW(parse_train_config("group_size=1\n"), std::invalid_argument);
  EXPECT_THROW(parse_train_config("steps=abc\n"), std::invalid_argument);
}

TEST(Config, Defaults) {
  const GrpoConfig cfg;
  EXPECT_EQ(cfg.group_size, 8);
  EXPECT_EQ(cfg.clip_eps, 0.2);
  EXPECT_EQ(cfg.kl_coef, 1e-3);
  EXPECT_EQ(cfg.learning_rate, 2e-6);
  EXPECT_EQ(cfg.mini_batch_size, 128);
}

TEST(Training, ZeroLearningRateKeepsParameters) {
  toygym::ToyPolicy policy;
  Rng rng(4);
  std::vector<double> w(toygym::kNumParams);
  for (auto& v : w) v = rng.uniform(-1, 1);
  policy.set_parameters(w);
  TrainConfig cfg;
  cfg.grpo.learning_rate = 0.0;
  cfg.steps = 3;
  const auto report = train_grpo(
      policy, [](std::uint64_t i) { return toygym::sample_task(i, TaskTemplate::Count); }, cfg, tools::MockBackend{});
  EXPECT_EQ(report.steps.size(), 3u);
  const auto after = policy.parameters();
  EXPECT_TRUE(std::equal(after.begin(), after.end(), w.begin(), w.end()));
}

TEST(Training, DeterministicAndMetrics) {
  TrainConfig cfg;
  cfg.grpo.learning_rate = 2.0;
  cfg.steps = 4;
  cfg.tasks_per_step = 3;
  cfg.ppo_epochs = 2;
  auto sampler = [](std::uint64_t i) { return toygym::sample_task(mix_seed(5, i), TaskTemplate::Count); };
  toygym::ToyPolicy a, b;
  std::ostringstream ma, mb;
  const auto ra = train_grpo(a, sampler, cfg, tools::MockBackend{}, &ma);
  const auto rb = train_grpo(b, sampler, cfg, tools::MockBackend{}, &mb);
  EXPECT_EQ(ra.final_parameters, rb.final_parameters);
  EXPECT_EQ(ma.str(), mb.str());
  std::istringstream lines(ma.str());
  std::string line;
  int n = 0;
  while (std::getline(lines, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j.at("step").get<int>(), n);
    EXPECT_EQ(j.at("groups_seen").get<int>(), 3 * (n + 1));
    ++n;
  }
  EXPECT_EQ(n, 4);
}

// A huge KL coefficient pins the policy to the reference on probe states,
// while the same run with the default coefficient drifts.
TEST(Training, KlAnchorsPolicy) {
  std::vector<toygym::ToyState> probes;
  toygym::OraclePolicy oracle;
  for (std::uint64_t i = 0; i < 50; ++i) {
    const Task task = toygym::sample_task(mix_seed(99, i), TaskTemplate::Count);
    tools::Session session = rollout::make_session(task, "probe");
    const auto tr = rollout::run_episode(oracle, task, session, {}, i, tools::MockBackend{});
    for (std::size_t k = 0; k < tr.turns.size(); ++k) {
      if (tr.turns[k].role == Role::Assistant) probes.push_back(toygym::extract_state(tr, k, true));
    }
  }
  ASSERT_GT(probes.size(), 50u);

  auto worst_tv = [&](double kl_coef) {
    TrainConfig cfg;
    cfg.grpo.kl_coef = kl_coef;
    cfg.grpo.learning_rate = 0.4;
    cfg.tasks_per_step = 16;
    cfg.ppo_epochs = 2;
    cfg.steps = 125;
    cfg.seed = 1;
    toygym::ToyPolicy reference, policy;
    train_grpo(policy, [&](std::uint64_t i) { return toygym::sample_task(mix_seed(1, 1000 + i), TaskTemplate::Count); },
               cfg, tools::MockBackend{});
    double worst = 0;
    for (const auto& s : probes) {
      const auto p = policy.probabilities(s), q = reference.probabilities(s);
      double tv = 0;
      for (int a = 0; a < toygym::kNumActions; ++a) tv += std::abs(p[a] - q[a]);
      worst = std::max(worst, tv / 2);
    }
    return worst;
  };
  const double anchored = worst_tv(10.0);
  const double free = worst_tv(1e-3);
  EXPECT_LE(anchored, 0.05);
  EXPECT_GE(free, 0.3);
}
