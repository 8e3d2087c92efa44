#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "toolrl/common.hpp"
#include "toolrl/reward.hpp"
#include "toolrl/rollout.hpp"
#include "toolrl/toygym.hpp"

using namespace toolrl;
using namespace toolrl::toygym;

namespace {

ToyPolicy random_policy(std::uint64_t seed, double scale, ToyPolicyConfig cfg = {}) {
  Rng rng(seed);
  ToyPolicy p(cfg);
  std::vector<double> w(kNumParams);
  for (auto& v : w) v = rng.uniform(-scale, scale);
  p.set_parameters(w);
  return p;
}

Trajectory episode(const rollout::Policy& policy, const Task& task, std::uint64_t seed) {
  tools::Session session = rollout::make_session(task, "s");
  return rollout::run_episode(policy, task, session, {}, seed, tools::MockBackend{});
}

}  // namespace

TEST(Scene, Deterministic) {
  EXPECT_EQ(generate_scene(7), generate_scene(7));
  EXPECT_NE(generate_scene(7), generate_scene(8));
}

TEST(Scene, ObjectCounts) {
  SceneSpec none;
  none.min_objects = none.max_objects = 0;
  EXPECT_TRUE(generate_scene(1, none).objects.empty());
  SceneSpec three;
  three.min_objects = three.max_objects = 3;
  for (std::uint64_t s = 0; s < 50; ++s) {
    const Scene sc = generate_scene(s, three);
    ASSERT_EQ(sc.objects.size(), 3u);
    for (std::size_t i = 0; i < 3; ++i) {
      for (std::size_t j = i + 1; j < 3; ++j) EXPECT_FALSE(sc.objects[i].box.intersects(sc.objects[j].box));
    }
  }
}

TEST(Scene, InfeasibleSpecThrows) {
  SceneSpec crowded;
  crowded.min_objects = crowded.max_objects = 40;
  crowded.width = crowded.height = 32;
  EXPECT_THROW(generate_scene(1, crowded), std::runtime_error);
}

TEST(Task, CountGold) {
  Scene s;
  s.width = s.height = 64;
  for (int i = 0; i < 3; ++i) {
    SceneObject o;
    o.shape = Shape::Square;
    o.label = "square" + std::to_string(i + 1);
    o.box = {2 + 20 * i, 2, 12 + 20 * i, 12};
    o.depth = 1.0 + i;
    s.objects.push_back(o);
  }
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const Task t = generate_task(s, TaskTemplate::Count, seed);
    const Option* gold = t.option(t.gold[0]);
    ASSERT_NE(gold, nullptr);
    if (t.question_text == "How many squares are in the image?") {
      EXPECT_EQ(gold->text, "3");
    } else {
      EXPECT_EQ(gold->text, "0");
    }
    EXPECT_EQ(t.options.size(), 4u);
    EXPECT_EQ(generate_task(s, TaskTemplate::Count, seed).options, t.options);
  }
}

TEST(Task, RelativeDepthGold) {
  Scene s;
  SceneObject near, far;
  near.label = "square1";
  near.box = {2, 2, 12, 12};
  near.depth = 1.0;
  far.shape = Shape::Circle;
  far.label = "circle1";
  far.box = {30, 30, 42, 42};
  far.depth = 5.0;
  s.objects = {near, far};
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Task t = generate_task(s, TaskTemplate::RelativeDepth, seed);
    EXPECT_EQ(t.option(t.gold[0])->text, "square1");
    const Task sp = generate_task(s, TaskTemplate::SpatialRelation, seed);
    const bool square_first = starts_with(sp.question_text, "Is square1");
    EXPECT_EQ(sp.option(sp.gold[0])->text, square_first ? "Yes" : "No");
  }
  Scene one;
  one.objects = {near};
  EXPECT_THROW(generate_task(one, TaskTemplate::RelativeDepth, 0), std::invalid_argument);
}

TEST(Policy, ZeroWeightsUniform) {
  const ToyPolicy p;
  const Task t = sample_task(4, TaskTemplate::Count);
  const auto tr = episode(p, t, 1);
  for (const auto& d : p.decisions(tr, false)) {
    if (!d.mask) continue;
    // 9 tool actions plus 4 option letters.
    EXPECT_NEAR(d.logp, -std::log(13.0), 1e-12);
  }
}

TEST(Policy, ProbabilitiesSumToOne) {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const ToyPolicy p = random_policy(seed, 3.0, {seed % 2 == 0, 0.0});
    const Task t = sample_task(seed, static_cast<TaskTemplate>(seed % 3));
    const auto tr = episode(p, t, seed);
    for (std::size_t k = 0; k < tr.turns.size(); ++k) {
      if (tr.turns[k].role != Role::Assistant) continue;
      const auto st = extract_state(tr, k, seed % 2 == 0);
      const auto probs = p.probabilities(st);
      double sum = 0;
      for (int a = 0; a < kNumActions; ++a) {
        sum += probs[a];
        if (!st.allowed[a]) {
          EXPECT_EQ(probs[a], 0.0);
        }
      }
      EXPECT_NEAR(sum, 1.0, 1e-9);
    }
  }
}

TEST(Policy, GradientMatchesDifferences) {
  double worst = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const ToyPolicy p = random_policy(mix_seed(seed, 3), 1.0);
    const Task t = sample_task(seed, static_cast<TaskTemplate>(seed % 3));
    const auto tr = episode(p, t, seed);
    const auto ds = p.decisions(tr, true);
    std::vector<double> w(p.parameters().begin(), p.parameters().end());
    for (std::size_t k = 0; k < ds.size(); ++k) {
      if (!ds[k].mask) continue;
      const std::size_t turn = ds[k].turn_index;
      const auto st = extract_state(tr, turn, true);
      const int action = decode_action(tr.turns[turn].text).value();
      ToyPolicy probe;
      double max_g = 0, max_err = 0;
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double h = 1e-6;
        auto wp = w;
        wp[i] += h;
        probe.set_parameters(wp);
        const double up = std::log(probe.probabilities(st)[static_cast<std::size_t>(action)]);
        wp[i] -= 2 * h;
        probe.set_parameters(wp);
        const double dn = std::log(probe.probabilities(st)[static_cast<std::size_t>(action)]);
        const double fd = (up - dn) / (2 * h);
        max_g = std::max(max_g, std::abs(fd));
        max_err = std::max(max_err, std::abs(fd - ds[k].grad[i]));
      }
      const double rel = max_err / std::max(max_g, 1e-3);
      worst = std::max(worst, rel);
      EXPECT_LE(rel, 1e-6) << "seed " << seed << " turn " << turn;
    }
  }
  RecordProperty("worst_relative_error", format_real(worst));
}

TEST(Policy, OutOfSpaceActionThrows) {
  const ToyPolicy p;
  const Task t = sample_task(4, TaskTemplate::Count);
  auto tr = episode(p, t, 1);
  // Letter F is not offered on a 4-option task.
  tr.turns[2].text = "<think>t</think><answer>\\boxed{F}</answer>";
  EXPECT_THROW(p.decisions(tr, false), std::invalid_argument);
  tr.turns[2].text = "<think>t</think>no action";
  EXPECT_THROW(p.decisions(tr, false), std::exception);
}

TEST(Policy, NoToolAccessOnlyAnswers) {
  const ToyPolicy p({false, 0.0});
  for (std::uint64_t s = 0; s < 50; ++s) {
    const auto tr = episode(p, sample_task(s, TaskTemplate::Count), s);
    EXPECT_EQ(tr.assistant_turns(), 1u);
    EXPECT_EQ(tr.terminal, Terminal::Answered);
  }
}

TEST(Policy, MalformedEmissionHitsNegativeReward) {
  const ToyPolicy p({true, 1.0});
  int malformed = 0;
  for (std::uint64_t s = 0; s < 30; ++s) {
    const Task t = sample_task(s, TaskTemplate::Count);
    const auto tr = episode(p, t, s);
    const auto r = reward::compute_reward(tr, t.gold);
    EXPECT_FALSE(r.format_ok);
    EXPECT_EQ(r.reward, -1);
    malformed += !r.format_ok;
    // Malformed turns still score under the policy.
    EXPECT_NO_THROW(p.decisions(tr, false));
  }
  EXPECT_EQ(malformed, 30);
}

TEST(Oracle, SolvesEveryCountTask) {
  const OraclePolicy oracle;
  for (std::uint64_t s = 0; s < 1000; ++s) {
    const Task t = sample_task(mix_seed(17, s), TaskTemplate::Count);
    const auto tr = episode(oracle, t, s);
    ASSERT_EQ(reward::compute_reward(tr, t.gold).reward, 1) << t.task_id;
  }
  for (TaskTemplate k : {TaskTemplate::RelativeDepth, TaskTemplate::SpatialRelation}) {
    for (std::uint64_t s = 0; s < 300; ++s) {
      const Task t = sample_task(mix_seed(18, s), k);
      ASSERT_EQ(reward::compute_reward(episode(oracle, t, s), t.gold).reward, 1) << t.task_id;
    }
  }
}

TEST(Oracle, DetectionsMatchSceneBoxes) {
  for (std::uint64_t s = 0; s < 200; ++s) {
    const Task t = sample_task(s, TaskTemplate::Count);
    const auto dets = tools::mock_detect(*t.scene, {"square", "circle", "triangle"}, {}, 0);
    ASSERT_EQ(dets.size(), t.scene->objects.size());
    for (std::size_t i = 0; i < dets.size(); ++i) EXPECT_EQ(dets[i].box, t.scene->objects[i].box);
  }
}

// Without tools the letter carries no information: whatever letter a policy
// picks for each asked shape, accuracy stays at chance.
TEST(InformationAsymmetry, NoToolCeilingIsChance) {
  std::map<std::string, std::array<int, 4>> hits;
  std::map<std::string, int> totals;
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    const Task t = sample_task(mix_seed(23, static_cast<std::uint64_t>(i)), TaskTemplate::Count);
    hits[t.question_text][static_cast<std::size_t>(t.gold[0] - 'A')] += 1;
    totals[t.question_text] += 1;
  }
  int best = 0;
  for (const auto& [q, h] : hits) best += *std::max_element(h.begin(), h.end());
  const double acc = static_cast<double>(best) / n;
  EXPECT_NEAR(acc, 0.25, 0.03);
  EXPECT_EQ(totals.size(), 3u);
}

TEST(Render, DecodeInvertsRender) {
  const Task t = sample_task(9, TaskTemplate::Count);
  const auto tr = episode(OraclePolicy{}, t, 0);
  const auto st = extract_state(tr, 2, true);
  for (int a = 0; a < kNumActions; ++a) {
    if (!st.allowed[a]) continue;
    const auto text = render_action(a, st);
    EXPECT_TRUE(protocol::parse_assistant_turn(text).ok()) << text;
    EXPECT_EQ(decode_action(text), a) << text;
  }
}
