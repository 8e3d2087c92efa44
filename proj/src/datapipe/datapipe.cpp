#include "toolrl/datapipe.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>

#include "json.hpp"
#include "toolrl/common.hpp"
#include "toolrl/reward.hpp"

namespace toolrl::datapipe {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

void DatasetItem::validate() const {
  if (item_id.empty()) throw std::invalid_argument("dataset item without item_id");
  if (trim(gold).empty()) throw std::invalid_argument("item " + item_id + ": empty gold");
  if (options) {
    bool found = false;
    for (const auto& o : *options) found = found || std::string(1, o.letter) == gold;
    if (!found) throw std::invalid_argument("item " + item_id + ": gold '" + gold + "' is not an option letter");
  }
}

DatasetItem item_from_task(const Task& task, const std::string& provenance) {
  DatasetItem item;
  item.item_id = task.task_id;
  item.question_text = task.question_text;
  item.images = task.initial_images;
  if (!task.options.empty()) item.options = task.options;
  item.gold = task.gold;
  item.provenance = provenance;
  item.template_kind = task.template_kind;
  item.scene = task.scene;
  return item;
}

Task task_from_item(const DatasetItem& item) {
  Task t;
  t.task_id = item.item_id;
  t.template_kind = item.template_kind;
  t.question_text = item.question_text;
  if (item.options) t.options = *item.options;
  t.gold = item.gold;
  t.scene = item.scene;
  t.initial_images = item.images;
  return t;
}

void write_dataset(const std::string& path, const std::vector<DatasetItem>& items) {
  const auto parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
  const std::string image_dir = image_dir_for(path);
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  for (const auto& item : items) {
    item.validate();
    ordered_json j;
    j["item_id"] = item.item_id;
    j["question_text"] = item.question_text;
    ordered_json imgs = ordered_json::array();
    for (const auto& img : item.images) imgs.push_back(store_image(img, image_dir));
    j["images"] = imgs;
    if (item.options) {
      ordered_json opts = ordered_json::array();
      for (const auto& o : *item.options) opts.push_back({{"letter", std::string(1, o.letter)}, {"text", o.text}});
      j["options"] = opts;
    } else {
      j["options"] = nullptr;
    }
    j["gold"] = item.gold;
    j["provenance"] = item.provenance;
    j["template"] = template_name(item.template_kind);
    if (item.scene) {
      nlohmann::json s;
      to_json(s, *item.scene);
      j["scene"] = ordered_json::parse(s.dump());
    }
    out << j.dump() << '\n';
  }
}

namespace {

template <typename T>
T field(const nlohmann::json& j, const char* name) {
  if (!j.contains(name)) throw std::invalid_argument(std::string("missing field '") + name + "'");
  try {
    return j.at(name).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw std::invalid_argument(std::string("field '") + name + "' has the wrong type");
  }
}

DatasetItem item_from_json(const nlohmann::json& j, const std::string& image_dir) {
  DatasetItem item;
  item.item_id = field<std::string>(j, "item_id");
  item.question_text = field<std::string>(j, "question_text");
  for (const auto& h : field<std::vector<std::string>>(j, "images")) {
    item.images.push_back(imaging::load_png((fs::path(image_dir) / (h + ".png")).string()));
  }
  if (j.contains("options") && !j["options"].is_null()) {
    std::vector<Option> opts;
    for (const auto& o : j["options"]) {
      const auto letter = field<std::string>(o, "letter");
      if (letter.size() != 1) throw std::invalid_argument("field 'options.letter' must be one character");
      opts.push_back({letter[0], field<std::string>(o, "text")});
    }
    item.options = std::move(opts);
  }
  item.gold = field<std::string>(j, "gold");
  item.provenance = j.contains("provenance") ? field<std::string>(j, "provenance") : "";
  if (j.contains("template")) item.template_kind = parse_template(field<std::string>(j, "template"));
  if (j.contains("scene") && !j["scene"].is_null()) {
    Scene s;
    from_json(j["scene"], s);
    item.scene = s;
  }
  item.validate();
  return item;
}

}  // namespace

std::vector<DatasetItem> read_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  const std::string image_dir = image_dir_for(path);
  std::vector<DatasetItem> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      out.push_back(item_from_json(nlohmann::json::parse(line), image_dir));
    } catch (const std::exception& e) {
      throw std::invalid_argument(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

PassRateRecord estimate_pass_rate(const rollout::Policy& solver, const DatasetItem& item, int k, std::uint64_t seed,
                                  const rollout::RolloutLimits& limits, const tools::PerceptionBackend& backend) {
  if (k < 1) throw std::invalid_argument("estimate_pass_rate: k must be at least 1");
  const Task task = task_from_item(item);
  PassRateRecord rec;
  rec.item_id = item.item_id;
  rec.trials = k;
  for (int i = 0; i < k; ++i) {
    try {
      auto session = rollout::make_session(task, item.item_id + "#" + std::to_string(i));
      const auto t = rollout::run_episode(solver, task, session, limits, seed + static_cast<std::uint64_t>(i), backend);
      if (t.terminal == Terminal::Answered && t.final_answer && reward::answer_correct(*t.final_answer, item.gold)) {
        ++rec.correct;
      }
    } catch (const std::exception&) {
      // counts as incorrect
    }
  }
  return rec;
}

std::vector<PassRateRecord> estimate_pass_rates(const rollout::Policy& solver, const std::vector<DatasetItem>& items,
                                                int k, std::uint64_t seed, const rollout::RolloutLimits& limits,
                                                const tools::PerceptionBackend& backend, std::size_t workers) {
  std::vector<PassRateRecord> out(items.size());
  parallel_for(items.size(), workers,
               [&](std::size_t i) { out[i] = estimate_pass_rate(solver, items[i], k, seed, limits, backend); });
  return out;
}

KeepRange parse_keep_range(const std::string& text) {
  std::string t = trim(text);
  KeepRange r;
  if (!t.empty() && (t.front() == '[' || t.front() == '(')) {
    if (t.front() == '(') throw std::invalid_argument("keep range must include its lower bound");
    t.erase(0, 1);
  }
  if (!t.empty() && (t.back() == ']' || t.back() == ')')) {
    r.hi_inclusive = t.back() == ']';
    t.pop_back();
  }
  const auto parts = split(t, ',');
  if (parts.size() != 2) throw std::invalid_argument("keep range must look like [lo,hi] or [lo,hi)");
  try {
    r.lo = std::stod(trim(parts[0]));
    r.hi = std::stod(trim(parts[1]));
  } catch (const std::exception&) {
    throw std::invalid_argument("keep range bounds must be numbers: '" + text + "'");
  }
  if (r.lo < 0.0 || r.hi > 1.0 || r.hi < r.lo) throw std::invalid_argument("keep range must satisfy 0 <= lo <= hi <= 1");
  return r;
}

FilterResult filter_dataset(const std::vector<DatasetItem>& items, const std::vector<PassRateRecord>& records,
                            const KeepRange& range) {
  std::map<std::string, const PassRateRecord*> by_id;
  for (const auto& r : records) by_id[r.item_id] = &r;
  FilterResult res;
  for (const auto& item : items) {
    const auto it = by_id.find(item.item_id);
    if (it == by_id.end()) {
      res.warnings.push_back("no pass-rate record for item " + item.item_id + "; skipped");
      continue;
    }
    if (range.contains(it->second->pass_rate())) res.kept.push_back(item);
  }
  return res;
}

std::vector<std::string> NumericNeighborSynthesizer::distractors(const DatasetItem& item, int wanted) const {
  long long g = 0;
  std::size_t pos = 0;
  const std::string gold = trim(item.gold);
  try {
    g = std::stoll(gold, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != gold.size()) {
    throw std::invalid_argument("numeric synthesizer: gold '" + item.gold + "' is not an integer");
  }
  std::vector<std::string> out;
  // -1, +1, +2, -2, +3, -3, ...
  std::vector<long long> offsets = {-1, 1};
  for (long long k = 2; static_cast<int>(offsets.size()) < 2 * wanted + 4; ++k) {
    offsets.push_back(k);
    offsets.push_back(-k);
  }
  for (long long d : offsets) {
    if (static_cast<int>(out.size()) >= wanted) break;
    if (g + d < 0) continue;
    out.push_back(std::to_string(g + d));
  }
  return out;
}

DatasetItem to_mcqa(const DatasetItem& item, const OptionSynthesizer& synth, int n_options, std::uint64_t seed) {
  if (item.options) throw std::invalid_argument("to_mcqa: item " + item.item_id + " already has options");
  if (n_options < 2 || n_options > 6) throw std::invalid_argument("to_mcqa: n_options must lie in [2, 6]");
  const std::string gold = trim(item.gold);
  std::vector<std::string> texts = {gold};
  std::set<std::string> seen = {reward::normalize_answer(gold)};
  for (const auto& d : synth.distractors(item, n_options - 1)) {
    if (static_cast<int>(texts.size()) == n_options) break;
    if (seen.insert(reward::normalize_answer(d)).second) texts.push_back(trim(d));
  }
  if (static_cast<int>(texts.size()) < n_options) {
    throw std::invalid_argument("to_mcqa: item " + item.item_id + " has only " + std::to_string(texts.size() - 1) +
                                " distinct distractors, need " + std::to_string(n_options - 1));
  }
  Rng rng(mix_seed(seed, hash_string(item.item_id)));
  rng.shuffle(texts);
  DatasetItem out = item;
  out.options = std::vector<Option>{};
  for (std::size_t i = 0; i < texts.size(); ++i) {
    const char letter = static_cast<char>('A' + i);
    out.options->push_back({letter, texts[i]});
    if (texts[i] == gold) out.gold = std::string(1, letter);
  }
  return out;
}

DatasetItem to_free_form(const DatasetItem& item) {
  if (!item.options) return item;
  DatasetItem out = item;
  for (const auto& o : *item.options) {
    if (std::string(1, o.letter) == item.gold) out.gold = o.text;
  }
  out.options.reset();
  return out;
}

Split split_dataset(const std::vector<DatasetItem>& items, double cold_start_fraction, std::uint64_t seed) {
  if (!(cold_start_fraction > 0.0 && cold_start_fraction < 1.0)) {
    throw std::invalid_argument("split_dataset: fraction must lie in (0, 1)");
  }
  std::vector<std::size_t> order(items.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(mix_seed(seed, hash_string("split")));
  rng.shuffle(order);
  const auto n_cold = static_cast<std::size_t>(std::llround(cold_start_fraction * static_cast<double>(items.size())));
  std::vector<bool> cold(items.size(), false);
  for (std::size_t i = 0; i < n_cold; ++i) cold[order[i]] = true;
  Split s;
  for (std::size_t i = 0; i < items.size(); ++i) (cold[i] ? s.cold_start : s.rl).push_back(items[i]);
  return s;
}

ColdStartResult synthesize_coldstart(const rollout::Policy& demonstrator, const std::vector<DatasetItem>& items,
                                     std::uint64_t seed, const rollout::RolloutLimits& limits,
                                     const tools::PerceptionBackend& backend) {
  ColdStartResult res;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const Task task = task_from_item(items[i]);
    auto session = rollout::make_session(task, task.task_id + "#demo");
    ++res.attempted;
    const auto t = rollout::run_episode(demonstrator, task, session, limits, seed + i, backend);
    if (reward::compute_reward(t, task.gold).reward == 1) {
      res.accepted.push_back(t);
    } else {
      ++res.rejected;
    }
  }
  return res;
}

}  // namespace toolrl::datapipe
