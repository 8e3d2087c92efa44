// Acceptance run: one PASS/FAIL line per criterion, with its wall time
// against the time budget. Exit status is non-zero when any line fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <numeric>
#include <sstream>
#include <thread>
#include <unistd.h>

#include "../support/case_studies.hpp"
#include "../support/grpo_oracle.hpp"
#include "../support/imaging_oracle.hpp"
#include "../support/service_script.hpp"
#include "../support/sft_oracle.hpp"
#include "toolrl/datapipe.hpp"
#include "toolrl/grpo.hpp"
#include "toolrl/service.hpp"
#include "toolrl/toygym.hpp"

using namespace toolrl;
namespace fs = std::filesystem;

namespace {

// Collects failed checks; the first few are printed.
class Checks {
 public:
  void expect(bool ok, const std::string& what) {
    ++total_;
    if (!ok) failed_.push_back(what);
  }
  void note(const std::string& s) { notes_.push_back(s); }
  bool ok() const { return failed_.empty(); }
  std::string summary() const {
    std::ostringstream out;
    out << (total_ - failed_.size()) << "/" << total_ << " checks";
    for (const auto& n : notes_) out << "; " << n;
    for (std::size_t i = 0; i < failed_.size() && i < 8; ++i) out << "\n      failed: " << failed_[i];
    if (failed_.size() > 8) out << "\n      ... " << failed_.size() - 8 << " more";
    return out.str();
  }

 private:
  std::size_t total_ = 0;
  std::vector<std::string> failed_;
  std::vector<std::string> notes_;
};

int g_failures = 0;

void criterion(const std::string& name, double budget_seconds, const std::function<void(Checks&)>& body) {
  Checks c;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    body(c);
  } catch (const std::exception& e) {
    c.expect(false, std::string("exception: ") + e.what());
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  c.expect(secs < budget_seconds, "runtime " + format_real(secs) + " s over budget");
  const bool ok = c.ok();
  if (!ok) ++g_failures;
  char timing[64];
  std::snprintf(timing, sizeof(timing), "%.2f s of %.0f s", secs, budget_seconds);
  std::cout << (ok ? "PASS " : "FAIL ") << name << " [" << timing << "] " << c.summary() << std::endl;
}

// ---------------------------------------------------------------------------

void grpo_math(Checks& c) {
  Rng rng(1);
  for (int trial = 0; trial < 2000; ++trial) {
    const int n = 2 + static_cast<int>(rng.below(15));
    std::vector<double> r(static_cast<std::size_t>(n));
    for (auto& v : r) v = rng.below(3) == 0 ? 1.0 : rng.uniform(-3, 3);
    const auto a = grpo::group_advantages(r);
    const double mean = std::accumulate(a.begin(), a.end(), 0.0) / n;
    double var = 0;
    for (double v : a) var += (v - mean) * (v - mean);
    const double sd = std::sqrt(var / n);
    const bool flat = std::all_of(r.begin(), r.end(), [&](double v) { return v == r[0]; });
    if (flat) {
      c.expect(std::all_of(a.begin(), a.end(), [](double v) { return v == 0.0; }), "zero-variance group");
      continue;
    }
    c.expect(std::abs(mean) <= 1e-6, "advantage mean");
    c.expect(std::abs(sd - 1.0) <= 1e-6, "advantage std");
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        if (r[i] < r[j] && !(a[i] < a[j])) c.expect(false, "order preserved");
      }
    }
    const double scale = rng.uniform(0.1, 10), shift = rng.uniform(-5, 5);
    std::vector<double> r2(r);
    for (auto& v : r2) v = scale * v + shift;
    const auto a2 = grpo::group_advantages(r2);
    for (int i = 0; i < n; ++i) {
      if (std::abs(a2[i] - a[i]) > 1e-6) {
        c.expect(false, "scale-shift invariance");
        break;
      }
    }
  }
  c.expect(grpo::group_advantages({1, 1, 1, 1}) == std::vector<double>(4, 0.0), "all-equal rewards");
  for (int i = 0; i < 10000; ++i) {
    const double n = rng.uniform(-20, 0), r = rng.below(5) == 0 ? n : rng.uniform(-20, 0);
    const double k = grpo::kl_k3(n, r);
    if (n == r) {
      if (k != 0.0) c.expect(false, "kl zero at equality");
    } else if (!(k > 0.0)) {
      c.expect(false, "kl positive away from equality");
    }
  }
  int rows = 0;
  for (const auto& row : fixtures::clipped_hand_table()) {
    ++rows;
    c.expect(std::abs(grpo::clipped_term(std::log(row.s), 0.0, row.a, row.eps) - row.expected) <= 1e-12,
             "clipped row s=" + format_real(row.s) + " A=" + format_real(row.a));
  }
  c.note(std::to_string(rows) + " clipped rows");
}

void gradient_oracle(Checks& c) {
  double worst_grpo = 0, worst_sft = 0;
  for (auto gran : {grpo::RatioGranularity::Decision, grpo::RatioGranularity::Sequence}) {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      const double rel = fixtures::grpo_gradient_error(seed, gran);
      worst_grpo = std::max(worst_grpo, rel);
      c.expect(rel <= 1e-4, "grpo seed " + std::to_string(seed));
    }
  }
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const double rel = fixtures::sft_gradient_error(seed);
    worst_sft = std::max(worst_sft, rel);
    c.expect(rel <= 1e-4, "sft seed " + std::to_string(seed));
  }
  c.note("200 grpo + 100 sft configurations, worst relative error grpo " + format_real(worst_grpo) + " sft " +
         format_real(worst_sft));
}

void transcript_replay(Checks& c) {
  const auto cases = fixtures::load_case_studies();
  c.expect(cases.size() == 7, "seven transcripts");
  int parsed = 0, scored = 0, strings = 0;
  for (const auto& cs : cases) {
    const auto printed = fixtures::printed_trajectory(cs);
    const bool fmt = protocol::check_format(printed).overall_ok;
    parsed += fmt;
    c.expect(fmt, cs.name + " parses");

    const int expected = cs.label == "success" ? 1 : -1;
    const auto score = reward::compute_reward(printed, cs.task.gold);
    scored += score.reward == expected;
    c.expect(score.reward == expected, cs.name + " (" + cs.label + ") scores " + std::to_string(score.reward) +
                                           " against gold " + cs.task.gold + ", answer " +
                                           printed.final_answer.value_or("none"));

    const rollout::ScriptedPolicy replay(cs.assistant);
    auto session = rollout::make_session(cs.task, "replay");
    const auto t = rollout::run_episode(replay, cs.task, session, {}, 0, tools::MockBackend{});
    std::string regenerated;
    for (const auto& turn : t.turns) {
      if (turn.role == Role::Observation) regenerated = turn.text;
    }
    const bool same = !regenerated.empty() && fixtures::bare_result(regenerated) == fixtures::bare_result(cs.observation);
    strings += same;
    c.expect(same, cs.name + " tool string: got '" + (regenerated.empty() ? "" : fixtures::bare_result(regenerated)) +
                       "'");
  }
  c.note(std::to_string(parsed) + "/7 parse, " + std::to_string(scored) + "/7 score as labelled, " +
         std::to_string(strings) + "/7 tool strings byte-identical");
}

void imaging_oracles(Checks& c) {
  for (std::uint64_t s = 0; s < 50; ++s) {
    const auto img = fixtures::random_image(16, 16, mix_seed(7, s));
    c.expect(imaging::scharr_edge_map(img) == fixtures::naive_scharr(img), "scharr seed " + std::to_string(s));
  }
  for (std::uint64_t s = 0; s < 10; ++s) {
    const int w = 1 + static_cast<int>(s) * 9, h = 2 + static_cast<int>(s) * 4;
    const auto img = fixtures::random_image(w, h, s);
    c.expect(imaging::crop_and_zoom(img, {0, 0, w, h}, 1.0) == img, "zoom identity " + std::to_string(s));
  }
  const auto& anchors = fixtures::depth_anchors();
  for (const auto& [t, col] : anchors) c.expect(imaging::depth_ramp(t) == col, "ramp anchor " + format_real(t));
  const auto depth = imaging::colorize_depth(imaging::DepthField(5, 1, {1, 2, 3, 4, 5}));
  for (int i = 0; i < 5; ++i) {
    c.expect(depth.at(i, 0) == anchors[static_cast<std::size_t>(4 - i)].second, "depth anchor " + std::to_string(i));
  }
}

double best_full_window(const grpo::TrainReport& r, int window) {
  double best = -1e9;
  for (const auto& s : r.steps) {
    if (s.window_groups >= window) best = std::max(best, s.moving_average_reward);
  }
  return best;
}

void learning_experiment(Checks& c) {
  const auto cfg = grpo::load_train_config(std::string(TOOLRL_SOURCE_DIR) + "/configs/toy_count.conf");
  const toygym::TaskSpec spec{cfg.n_options};
  const std::uint64_t task_seed = cfg.seed;
  const grpo::TaskSampler sampler = [spec, task_seed](std::uint64_t i) {
    return toygym::sample_task(mix_seed(task_seed, 1000 + i), TaskTemplate::Count, {}, spec);
  };
  const int max_groups = cfg.steps * cfg.tasks_per_step;
  c.expect(max_groups <= 2000, "at most 2000 groups");
  c.expect(cfg.grpo.group_size == 8 && cfg.grpo.kl_coef == 1e-3 && cfg.grpo.clip_eps == 0.2, "G, beta, eps");

  auto run = [&](bool tools_on) {
    auto run_cfg = cfg;
    run_cfg.tool_access = tools_on;
    toygym::ToyPolicy policy(toygym::ToyPolicyConfig{tools_on, 0.0});
    return grpo::train_grpo(policy, sampler, run_cfg, tools::MockBackend{});
  };
  const auto with_tools = run(true);
  int reached = -1;
  for (const auto& s : with_tools.steps) {
    if (s.window_groups >= cfg.moving_average_window && s.moving_average_reward >= 0.8) {
      reached = s.groups_seen;
      break;
    }
  }
  c.expect(reached > 0, "moving average reaches +0.8 (best " +
                            format_real(best_full_window(with_tools, cfg.moving_average_window)) + ")");
  const auto again = run(true);
  c.expect(again.final_parameters == with_tools.final_parameters, "rerun is bit-identical");
  const auto ablation = run(false);
  const double ablation_best = best_full_window(ablation, cfg.moving_average_window);
  c.expect(ablation_best <= -0.3, "no-tool ablation stays at or below -0.3 (best " + format_real(ablation_best) + ")");
  std::ostringstream note;
  note << "tool policy reaches MA>=0.8 at " << reached << " groups (final MA "
       << with_tools.steps.back().moving_average_reward << "), no-tool best MA " << ablation_best;
  c.note(note.str());
}

class LongAnswer final : public rollout::Policy {
 public:
  explicit LongAnswer(int words) : words_(words) {}
  std::string generate(const rollout::PolicyContext&, int, std::uint64_t) const override {
    std::string body;
    for (int i = 0; i < words_; ++i) body += " w";
    return "<think>" + body + "</think><answer>\\boxed{A}</answer>";
  }

 private:
  int words_;
};

void rollout_engine(Checks& c) {
  const rollout::RolloutLimits defaults;
  c.expect(defaults.max_turns == 5 && defaults.max_tokens_per_turn == 1024, "default limits 5 / 1024");
  const std::string edge =
      "<think>look</think><tool_call>{\"name\": \"edge_detection\", \"arguments\": {\"image_id\": 0}}</tool_call>";
  const std::string answer = "<think>t</think><answer>\\boxed{A}</answer>";
  const Task task = toygym::sample_task(3, TaskTemplate::Count);
  for (int max_turns = 1; max_turns <= 5; ++max_turns) {
    for (int answer_at = 0; answer_at <= 7; ++answer_at) {
      std::vector<std::string> script(8, edge);
      if (answer_at < 8) script[static_cast<std::size_t>(answer_at)] = answer;
      rollout::RolloutLimits limits;
      limits.max_turns = max_turns;
      auto session = rollout::make_session(task, "s");
      const auto t = rollout::run_episode(rollout::ScriptedPolicy(script), task, session, limits, 0, tools::MockBackend{});
      const auto want = static_cast<std::size_t>(std::min(answer_at + 1, max_turns));
      c.expect(t.assistant_turns() == want && t.terminal == (answer_at < max_turns ? Terminal::Answered
                                                                                    : Terminal::TurnBudgetExhausted),
               "turn budget " + std::to_string(max_turns) + " answer at " + std::to_string(answer_at));
    }
  }
  for (int words : {0, 1, 1004, 1005, 1006, 2000}) {
    auto session = rollout::make_session(task, "s");
    const auto t = rollout::run_episode(LongAnswer(words), task, session, {}, 0, tools::MockBackend{});
    const int full = 19 + words;
    c.expect(t.token_count_per_assistant_turn.size() == 5 || t.terminal == Terminal::Answered, "token turns");
    c.expect(t.token_count_per_assistant_turn.at(0) == std::min(full, 1024), "tokens capped at 1024, words " +
                                                                                  std::to_string(words));
    c.expect(rollout::count_tokens(t.turns.at(2).text) <= 1024, "truncated text within budget");
    c.expect((t.terminal == Terminal::Answered) == (full <= 1024), "truncation breaks the answer");
  }

  Rng rng(5);
  toygym::ToyPolicy policy;
  std::vector<double> w(toygym::kNumParams);
  for (auto& v : w) v = rng.uniform(-1, 1);
  policy.set_parameters(w);
  const auto dir = fs::temp_directory_path() / ("toolrl_accept_rollout_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  std::string files[2];
  for (int pass = 0; pass < 2; ++pass) {
    const auto path = (dir / ("run" + std::to_string(pass)) / "t.jsonl").string();
    fs::create_directories(fs::path(path).parent_path());
    TrajectoryWriter writer(path);
    std::vector<Trajectory> first;
    for (int e = 0; e < 100; ++e) {
      const Task t = toygym::sample_task(mix_seed(9, e), static_cast<TaskTemplate>(e % 3));
      auto session = rollout::make_session(t, "s");
      writer.write(rollout::run_episode(policy, t, session, {}, mix_seed(10, e), tools::MockBackend{}));
    }
    files[pass] = read_file(path);
  }
  c.expect(!files[0].empty() && files[0] == files[1], "100 replayed episodes are byte-identical");
  const auto back = read_trajectories((dir / "run0" / "t.jsonl").string());
  c.expect(back.size() == 100, "100 episodes read back");
  for (int e = 0; e < 100 && e < static_cast<int>(back.size()); ++e) {
    const Task t = toygym::sample_task(mix_seed(9, e), static_cast<TaskTemplate>(e % 3));
    auto session = rollout::make_session(t, "s");
    const auto again = rollout::run_episode(policy, t, session, {}, mix_seed(10, e), tools::MockBackend{});
    if (!again.same_as(back[static_cast<std::size_t>(e)])) c.expect(false, "episode " + std::to_string(e) + " replay");
  }
  fs::remove_all(dir);
}

// Wraps the oracle and swaps its letter for a wrong one.
class AlwaysWrong final : public rollout::Policy {
 public:
  std::string generate(const rollout::PolicyContext& ctx, int max_tokens, std::uint64_t seed) const override {
    std::string text = oracle_.generate(ctx, max_tokens, seed);
    const auto at = text.find("\\boxed{");
    if (at != std::string::npos) {
      char& letter = text[at + 7];
      letter = letter == 'A' ? 'B' : 'A';
    }
    return text;
  }

 private:
  toygym::OraclePolicy oracle_;
};

std::string pipeline_run(const fs::path& dir, Checks& c) {
  using namespace datapipe;
  std::vector<DatasetItem> items;
  for (int i = 0; i < 300; ++i) {
    items.push_back(item_from_task(toygym::sample_task(mix_seed(31, i), static_cast<TaskTemplate>(i % 3))));
  }
  const auto good = estimate_pass_rates(toygym::OraclePolicy{}, items, 4, 7, {}, tools::MockBackend{}, 4);
  const auto kept_good = filter_dataset(items, good);
  c.expect(kept_good.kept.empty(), "oracle solver retains nothing (kept " + std::to_string(kept_good.kept.size()) + ")");
  const auto bad = estimate_pass_rates(AlwaysWrong{}, items, 4, 7, {}, tools::MockBackend{}, 4);
  const auto kept_bad = filter_dataset(items, bad);
  c.expect(kept_bad.kept.size() == items.size(), "always-wrong solver retains everything");

  std::vector<DatasetItem> mcqa;
  const NumericNeighborSynthesizer synth;
  int answered = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto task = toygym::sample_task(mix_seed(32, i), TaskTemplate::Count);
    const auto free = to_free_form(item_from_task(task));
    const auto converted = to_mcqa(free, synth, 4, 5);
    int matching = 0;
    for (const auto& o : *converted.options) matching += reward::answer_correct(o.text, free.gold);
    c.expect(matching == 1 && to_free_form(converted).gold == free.gold, "item " + free.item_id + " answerable");
    answered += estimate_pass_rate(toygym::OraclePolicy{}, converted, 1, 0, {}, tools::MockBackend{}).correct;
    mcqa.push_back(converted);
  }
  c.expect(answered == 1000, "oracle answers all converted items (" + std::to_string(answered) + ")");
  const auto sp = split_dataset(kept_bad.kept, 0.2, 3);
  write_dataset((dir / "mcqa.jsonl").string(), mcqa);
  write_dataset((dir / "cold.jsonl").string(), sp.cold_start);
  write_dataset((dir / "rl.jsonl").string(), sp.rl);
  return read_file((dir / "mcqa.jsonl").string()) + read_file((dir / "cold.jsonl").string()) +
         read_file((dir / "rl.jsonl").string());
}

void data_pipeline(Checks& c) {
  const auto base = fs::temp_directory_path() / ("toolrl_accept_data_" + std::to_string(::getpid()));
  fs::remove_all(base);
  Checks second;
  const auto a = pipeline_run(base / "a", c);
  const auto b = pipeline_run(base / "b", second);
  c.expect(!a.empty() && a == b, "rerun output is byte-identical");
  fs::remove_all(base);
}

void service_check(Checks& c) {
  service::ToolServer server;
  const int port = server.start();
  constexpr int kClients = 32;
  std::vector<fixtures::ScriptRun> serial(kClients), concurrent(kClients);
  for (int i = 0; i < kClients; ++i) serial[i] = fixtures::run_script_http(port, i);
  std::vector<std::thread> threads;
  std::vector<std::string> errors(kClients);
  for (int i = 0; i < kClients; ++i) {
    threads.emplace_back([&, i] {
      try {
        concurrent[i] = fixtures::run_script_http(port, i);
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    });
  }
  for (auto& t : threads) t.join();
  for (int i = 0; i < kClients; ++i) {
    c.expect(errors[i].empty(), "client " + std::to_string(i) + ": " + errors[i]);
    c.expect(concurrent[i] == serial[i], "client " + std::to_string(i) + " matches serial");
    c.expect(serial[i] == fixtures::run_script_local(i), "client " + std::to_string(i) + " matches in-process");
  }
  httplib::Client client("127.0.0.1", port);
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto img = fixtures::random_image(1 + static_cast<int>(s) * 13, 1 + static_cast<int>(s) * 7, s);
    const nlohmann::json body{{"images", {base64_encode(imaging::encode_png(img))}}};
    auto res = client.Post("/v1/sessions", body.dump(), "application/json");
    if (!res || res->status != 201) {
      c.expect(false, "create " + std::to_string(s));
      continue;
    }
    const auto id = nlohmann::json::parse(res->body).at("session_id").get<std::string>();
    res = client.Get("/v1/sessions/" + id + "/images/0");
    c.expect(res && res->status == 200 &&
                 imaging::decode_png(std::vector<std::uint8_t>(res->body.begin(), res->body.end())) == img,
             "png round trip " + std::to_string(s));
  }
  c.expect(server.session_count() == 20, "script sessions deleted");
  server.stop();
}

}  // namespace

int main() {
  criterion("grpo-math", 1, grpo_math);
  criterion("gradient-oracle", 30, gradient_oracle);
  criterion("transcript-replay", 5, transcript_replay);
  criterion("imaging-oracles", 10, imaging_oracles);
  criterion("learning-experiment", 300, learning_experiment);
  criterion("rollout-engine", 20, rollout_engine);
  criterion("data-pipeline", 30, data_pipeline);
  criterion("service", 30, service_check);
  std::cout << (g_failures == 0 ? "ALL PASS" : std::to_string(g_failures) + " FAILED") << std::endl;
  return g_failures == 0 ? 0 : 1;
}
