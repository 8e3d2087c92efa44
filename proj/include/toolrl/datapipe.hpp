#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "toolrl/rollout.hpp"
#include "toolrl/scene.hpp"
#include "toolrl/task.hpp"

namespace toolrl::datapipe {

struct DatasetItem {
  std::string item_id;
  std::string question_text;
  std::vector<imaging::Image> images;
  std::optional<std::vector<Option>> options;
  std::string gold;  // option letter, or the free-form answer when options are absent
  std::string provenance;
  TaskTemplate template_kind = TaskTemplate::Other;
  std::optional<Scene> scene;

  void validate() const;
};

DatasetItem item_from_task(const Task& task, const std::string& provenance = "toygym");
Task task_from_item(const DatasetItem& item);

// Line-delimited records; images stored by content hash under <dir>/images.
void write_dataset(const std::string& path, const std::vector<DatasetItem>& items);
std::vector<DatasetItem> read_dataset(const std::string& path);

struct PassRateRecord {
  std::string item_id;
  int trials = 0;
  int correct = 0;
  double pass_rate() const { return trials == 0 ? 0.0 : static_cast<double>(correct) / trials; }
};

// k episodes with seeds seed .. seed+k-1; a trial counts when the episode
// ends with an answer matching the gold. Solver failures count as wrong.
PassRateRecord estimate_pass_rate(const rollout::Policy& solver, const DatasetItem& item, int k, std::uint64_t seed,
                                  const rollout::RolloutLimits& limits, const tools::PerceptionBackend& backend);

std::vector<PassRateRecord> estimate_pass_rates(const rollout::Policy& solver, const std::vector<DatasetItem>& items,
                                                int k, std::uint64_t seed, const rollout::RolloutLimits& limits,
                                                const tools::PerceptionBackend& backend, std::size_t workers = 1);

struct KeepRange {
  double lo = 0.0;
  double hi = 0.0;
  bool hi_inclusive = true;

  bool contains(double v) const { return v >= lo && (hi_inclusive ? v <= hi : v < hi); }
};

// "[0,0]", "[0,0.5)" or "0,0.5" (closed).
KeepRange parse_keep_range(const std::string& text);

struct FilterResult {
  std::vector<DatasetItem> kept;
  std::vector<std::string> warnings;
};

FilterResult filter_dataset(const std::vector<DatasetItem>& items, const std::vector<PassRateRecord>& records,
                            const KeepRange& range = {});

class OptionSynthesizer {
 public:
  virtual ~OptionSynthesizer() = default;
  // Up to `wanted` candidate distractors, best first.
  virtual std::vector<std::string> distractors(const DatasetItem& item, int wanted) const = 0;
};

// For an integer gold g: g-1, g+1, g+2, g-2, g+3, g-3, ... skipping negatives.
class NumericNeighborSynthesizer final : public OptionSynthesizer {
 public:
  std::vector<std::string> distractors(const DatasetItem& item, int wanted) const override;
};

// Gold plus distractors, deduplicated, shuffled by seed and lettered from A.
DatasetItem to_mcqa(const DatasetItem& item, const OptionSynthesizer& synth, int n_options, std::uint64_t seed);

// Drops the options and makes the gold option's text the answer.
DatasetItem to_free_form(const DatasetItem& item);

struct Split {
  std::vector<DatasetItem> cold_start;
  std::vector<DatasetItem> rl;
};

// Seeded partition; round(fraction * n) items go to the cold-start side.
// Both sides keep input order.
Split split_dataset(const std::vector<DatasetItem>& items, double cold_start_fraction, std::uint64_t seed);

struct ColdStartResult {
  std::vector<Trajectory> accepted;
  int attempted = 0;
  int rejected = 0;
};

// Demonstrations from `demonstrator`, keeping only rollouts scored +1.
ColdStartResult synthesize_coldstart(const rollout::Policy& demonstrator, const std::vector<DatasetItem>& items,
                                     std::uint64_t seed, const rollout::RolloutLimits& limits,
                                     const tools::PerceptionBackend& backend);

}  // namespace toolrl::datapipe
