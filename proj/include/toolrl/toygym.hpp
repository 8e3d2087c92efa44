#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "toolrl/rollout.hpp"
#include "toolrl/scene.hpp"
#include "toolrl/task.hpp"

namespace toolrl::toygym {

struct SceneSpec {
  int min_objects = 1;
  int max_objects = 6;
  int width = 64;
  int height = 64;
  int min_size = 8;   // box side in pixels
  int max_size = 14;
  double min_depth = 1.0;
  double max_depth = 9.0;
  double background_depth = 10.0;
  bool non_overlapping = true;

  void validate() const;
};

// Deterministic per (seed, spec). Throws std::runtime_error when the objects
// cannot be placed.
Scene generate_scene(std::uint64_t seed, const SceneSpec& spec = {});

struct TaskSpec {
  int n_options = 4;  // Count only; other templates have two options
};

// Count: "How many squares are in the image?"; RelativeDepth: "Which object is
// closer to the camera, square1 at [..] or circle1 at [..]?"; SpatialRelation:
// "Is square1 at [..] left of circle1 at [..]?". Throws when the scene cannot
// support the template.
Task generate_task(const Scene& scene, TaskTemplate kind, std::uint64_t seed, const TaskSpec& spec = {});

// Scene and task drawn from one seed; task ids are "<template>-<seed>".
Task sample_task(std::uint64_t seed, TaskTemplate kind, const SceneSpec& scene_spec = {},
                 const TaskSpec& task_spec = {});

// ---------------------------------------------------------------------------
// Toy policy

inline constexpr int kNumActions = 15;
inline constexpr int kNumFeatures = 17;  // state features
inline constexpr int kNumOptions = 6;
// One weight per (action, state feature) plus one shared weight on the
// answer-specific "option backed by tool evidence" feature.
inline constexpr int kNumParams = kNumActions * kNumFeatures + 1;

enum Action : int {
  kDetectSquare = 0,
  kDetectCircle,
  kDetectTriangle,
  kDepth,
  kZoomTopLeft,
  kZoomTopRight,
  kZoomBottomLeft,
  kZoomBottomRight,
  kEdge,
  kAnswerA,  // kAnswerA + k answers letter 'A' + k
};

std::string action_name(int action);

// What the policy knows at a decision point, parsed from the rendered turns.
struct ToyState {
  std::array<double, kNumFeatures> phi{};
  // 1 where the option's text matches what the tools (or the question) show.
  std::array<double, kNumOptions> support{};
  std::array<bool, kNumActions> allowed{};
  int image_width = 0;
  int image_height = 0;
};

// Features of the assistant turn at trajectory.turns[turn_index], read from
// the user prompt and the turns before it. `tool_access` false leaves only
// answer actions.
ToyState extract_state(const Trajectory& trajectory, std::size_t turn_index, bool tool_access);

// Canonical, well-formed text of an action.
std::string render_action(int action, const ToyState& state);
// Inverse of render_action, tolerant of the malformations the policy injects.
std::optional<int> decode_action(std::string_view text);

struct ToyPolicyConfig {
  bool tool_access = true;
  double emit_malformed_prob = 0.0;
};

// Linear softmax policy over the allowed actions:
//   logit(a) = W[a] . phi(s) + u * support_a(s)
// where support_a is 0 for tool actions. Equivalently theta . f(s, a) for the
// joint feature map f, so d logp(a) / d theta = f(s, a) - E_p[f(s, .)].
class ToyPolicy final : public rollout::TrainablePolicy {
 public:
  explicit ToyPolicy(ToyPolicyConfig cfg = {});

  std::string generate(const rollout::PolicyContext& ctx, int max_tokens, std::uint64_t seed) const override;

  std::span<const double> parameters() const override { return weights_; }
  void set_parameters(std::span<const double> params) override;
  std::unique_ptr<rollout::TrainablePolicy> clone() const override;
  rollout::Decision score_turn(const Trajectory& trajectory, std::size_t turn_index, std::string_view text,
                               bool with_grad) const override;

  // Action probabilities in a state; masked actions get 0.
  std::array<double, kNumActions> probabilities(const ToyState& state) const;
  const ToyPolicyConfig& config() const { return cfg_; }

  double weight(int action, int feature) const { return weights_[index(action, feature)]; }
  static constexpr std::size_t support_index() { return static_cast<std::size_t>(kNumActions) * kNumFeatures; }
  static std::size_t index(int action, int feature) {
    return static_cast<std::size_t>(action) * kNumFeatures + static_cast<std::size_t>(feature);
  }

 private:
  std::array<double, kNumActions> logits(const ToyState& state, double* max_logit) const;
  double log_softmax_at(const ToyState& state, int action) const;

  ToyPolicyConfig cfg_;
  std::vector<double> weights_;
};

// Deterministic script: call the tool the template needs, then answer from
// its result.
class OraclePolicy final : public rollout::Policy {
 public:
  std::string generate(const rollout::PolicyContext& ctx, int max_tokens, std::uint64_t seed) const override;
  std::vector<double> log_probs(const Trajectory& trajectory) const override;
};

}  // namespace toolrl::toygym
