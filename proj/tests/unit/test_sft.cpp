#include <gtest/gtest.h>

#include <cmath>

#include "toolrl/common.hpp"
#include "toolrl/sft.hpp"
#include "toolrl/toygym.hpp"
#include "../support/sft_oracle.hpp"

using namespace toolrl;
using namespace toolrl::sft;

using fixtures::demonstrations;
using fixtures::sft_policy;

TEST(Sft, UniformOverFourActions) {
  // Without tools a 4-option Count task leaves exactly the 4 answer letters.
  const toygym::ToyPolicy policy({false, 0.0});
  const Task t = toygym::sample_task(3, TaskTemplate::Count);
  tools::Session session = rollout::make_session(t, "s");
  const auto tr = rollout::run_episode(policy, t, session, {}, 0, tools::MockBackend{});
  const auto res = sft_loss(policy, make_batch({tr}));
  EXPECT_NEAR(res.loss, std::log(4.0), 1e-12);
}

TEST(Sft, Masks) {
  const auto item = make_item(demonstrations(1, 1)[0]);
  for (const auto& t : item.targets) {
    EXPECT_EQ(t.mask, item.trajectory.turns[t.turn_index].role == Role::Assistant);
  }
}

TEST(Sft, ObservationTargetsIgnored) {
  const auto trs = demonstrations(2, 6);
  SftBatch batch = make_batch(trs);
  const auto policy = sft_policy(5);
  const auto a = sft_loss(policy, batch);
  for (auto& item : batch.items) {
    for (auto& t : item.targets) {
      if (!t.mask) t.target = "anything at all";
    }
  }
  const auto b = sft_loss(policy, batch);
  EXPECT_EQ(a.loss, b.loss);
  EXPECT_EQ(a.grad, b.grad);
}

TEST(Sft, EmptyMaskThrows) {
  SftBatch batch = make_batch(demonstrations(3, 2));
  for (auto& item : batch.items) {
    for (auto& t : item.targets) t.mask = false;
  }
  EXPECT_THROW(sft_loss(toygym::ToyPolicy{}, batch), std::invalid_argument);
}

TEST(Sft, GradientMatchesDifferences) {
  double worst = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const double rel = fixtures::sft_gradient_error(seed);
    worst = std::max(worst, rel);
    EXPECT_LE(rel, 1e-4) << "seed " << seed;
  }
  RecordProperty("worst_relative_error", format_real(worst));
}

TEST(Sft, Properties) {
  const SftBatch batch = make_batch(demonstrations(4, 8));
  auto policy = sft_policy(9);
  const auto res = sft_loss(policy, batch);
  EXPECT_GT(res.loss, 0.0);

  // Duplicating every item keeps the mean.
  SftBatch twice = batch;
  twice.items.insert(twice.items.end(), batch.items.begin(), batch.items.end());
  EXPECT_NEAR(sft_loss(policy, twice).loss, res.loss, 1e-12);

  // A small step down the gradient lowers the loss.
  std::vector<double> w(policy.parameters().begin(), policy.parameters().end());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] -= 1e-3 * res.grad[i];
  policy.set_parameters(w);
  EXPECT_LT(sft_loss(policy, batch).loss, res.loss);

  // Worker count does not change the result.
  const auto par = sft_loss(policy, batch, 4);
  const auto ser = sft_loss(policy, batch, 1);
  EXPECT_EQ(par.loss, ser.loss);
  EXPECT_EQ(par.grad, ser.grad);
}

TEST(Sft, TrainingReducesLoss) {
  const SftBatch batch = make_batch(demonstrations(6, 10));
  toygym::ToyPolicy policy;
  const auto losses = train_sft(policy, batch, 30, 1.0);
  ASSERT_EQ(losses.size(), 30u);
  EXPECT_LT(losses.back(), losses.front());
}
