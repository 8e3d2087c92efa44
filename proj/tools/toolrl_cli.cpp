#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "toolrl/common.hpp"
#include "toolrl/datapipe.hpp"
#include "toolrl/grpo.hpp"
#include "toolrl/imaging.hpp"
#include "toolrl/plot.hpp"
#include "toolrl/reward.hpp"
#include "toolrl/rollout.hpp"
#include "toolrl/service.hpp"
#include "toolrl/sft.hpp"
#include "toolrl/tools.hpp"
#include "toolrl/toygym.hpp"
#include "toolrl/trajectory.hpp"

using namespace toolrl;
using nlohmann::json;

namespace {

std::uint64_t env_seed_or(std::uint64_t fallback) {
  if (const char* s = std::getenv("REVPT_SEED"); s != nullptr && *s != '\0') return std::stoull(s);
  return fallback;
}

rollout::RolloutLimits parse_limits(const std::string& text) {
  // "max_turns=5,max_tokens_per_turn=1024,inference_batch_size=8"
  rollout::RolloutLimits limits;
  if (text.empty()) return limits;
  for (const auto& part : split(text, ',')) {
    const auto eq = part.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("--limits: expected key=value, got '" + part + "'");
    const std::string key = trim(part.substr(0, eq));
    const int value = std::stoi(part.substr(eq + 1));
    if (key == "max_turns") {
      limits.max_turns = value;
    } else if (key == "max_tokens_per_turn") {
      limits.max_tokens_per_turn = value;
    } else if (key == "inference_batch_size") {
      limits.inference_batch_size = value;
    } else {
      throw std::invalid_argument("--limits: unknown key '" + key + "'");
    }
  }
  limits.validate();
  return limits;
}

void save_weights(const std::string& path, std::span<const double> params) {
  json j{{"kind", "toy"}, {"parameters", std::vector<double>(params.begin(), params.end())}};
  write_file(path, j.dump() + "\n");
}

std::vector<double> load_weights(const std::string& path) {
  const auto j = json::parse(read_file(path));
  auto params = j.at("parameters").get<std::vector<double>>();
  if (params.size() != static_cast<std::size_t>(toygym::kNumParams)) {
    throw std::invalid_argument(path + ": expected " + std::to_string(toygym::kNumParams) + " parameters");
  }
  return params;
}

std::map<std::string, std::string> read_answer_key(const std::string& path) {
  // Either a dataset file (item_id + gold) or lines of {"task_id", "gold"}.
  std::map<std::string, std::string> key;
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
    const std::string id = j.contains("task_id") ? j.at("task_id").get<std::string>() : j.at("item_id").get<std::string>();
    key[id] = j.at("gold").get<std::string>();
  }
  return key;
}

std::unique_ptr<rollout::Policy> make_policy(const std::string& kind, const std::string& script,
                                             const std::string& weights, const std::string& url,
                                             bool tool_access, double malformed) {
  if (kind == "scripted") {
    if (script.empty()) throw std::invalid_argument("--policy scripted needs --script");
    return std::make_unique<rollout::ScriptedPolicy>(json::parse(read_file(script)).get<std::vector<std::string>>());
  }
  if (kind == "toy") {
    auto p = std::make_unique<toygym::ToyPolicy>(toygym::ToyPolicyConfig{tool_access, malformed});
    if (!weights.empty()) p->set_parameters(load_weights(weights));
    return p;
  }
  if (kind == "oracle") return std::make_unique<toygym::OraclePolicy>();
  if (kind == "remote") {
    if (url.empty()) throw std::invalid_argument("--policy remote needs --url");
    return std::make_unique<service::RemotePolicy>(url);
  }
  throw std::invalid_argument("unknown policy '" + kind + "'");
}

imaging::BBox parse_bbox(const std::string& text) {
  const auto parts = split(text, ',');
  if (parts.size() != 4) throw std::invalid_argument("--bbox expects x1,y1,x2,y2");
  return {std::stoi(parts[0]), std::stoi(parts[1]), std::stoi(parts[2]), std::stoi(parts[3])};
}

void write_dataset_or_print(const std::string& out, const std::vector<datapipe::DatasetItem>& items) {
  datapipe::write_dataset(out, items);
  std::cout << "wrote " << items.size() << " items to " << out << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Visual tool-use environment, tool controller and training utilities"};
  app.require_subcommand(1);

  // serve ------------------------------------------------------------------
  auto* serve = app.add_subcommand("serve", "Run the HTTP tool controller");
  std::string host = "127.0.0.1";
  int port = 8080;
  std::uint64_t backend_seed = 0;
  int ttl_minutes = 15;
  double p_miss = 0.0, p_confuse = 0.0;
  int jitter = 0;
  serve->add_option("--host", host);
  serve->add_option("--port", port);
  serve->add_option("--backend-seed", backend_seed);
  serve->add_option("--ttl-minutes", ttl_minutes);
  serve->add_option("--p-miss", p_miss);
  serve->add_option("--p-confuse", p_confuse);
  serve->add_option("--jitter", jitter);

  // rollout ----------------------------------------------------------------
  auto* roll = app.add_subcommand("rollout", "Run episodes and write a trajectory file");
  std::string env = "toygym", policy_kind = "toy", tmpl = "count", out, limits_text, script, weights, url;
  int n_tasks = 1, group = 1, n_options = 4;
  std::uint64_t seed = 0;
  bool no_tools = false;
  double malformed = 0.0;
  std::string answers_out;
  roll->add_option("--env", env)->check(CLI::IsMember({"toygym"}));
  roll->add_option("--policy", policy_kind)->check(CLI::IsMember({"scripted", "toy", "oracle", "remote"}));
  roll->add_option("--template", tmpl);
  roll->add_option("--n", n_tasks, "number of tasks");
  roll->add_option("--group", group, "episodes per task");
  roll->add_option("--options", n_options);
  roll->add_option("--seed", seed);
  roll->add_option("--out", out)->required();
  roll->add_option("--answers-out", answers_out, "write the answer key (task_id, gold) here");
  roll->add_option("--limits", limits_text, "max_turns=5,max_tokens_per_turn=1024,inference_batch_size=8");
  roll->add_option("--script", script, "JSON array of assistant turns");
  roll->add_option("--weights", weights);
  roll->add_option("--url", url, "policy server base url");
  roll->add_flag("--no-tools", no_tools);
  roll->add_option("--malformed", malformed);

  // train ------------------------------------------------------------------
  auto* train = app.add_subcommand("train", "Training loops");
  train->require_subcommand(1);
  auto* train_grpo = train->add_subcommand("grpo", "GRPO on the toy gym");
  std::string config_path, metrics_path, weights_out;
  std::vector<std::string> overrides;
  train_grpo->add_option("--config", config_path);
  train_grpo->add_option("--metrics", metrics_path);
  train_grpo->add_option("--weights-out", weights_out);
  train_grpo->add_option("--weights", weights, "initial weights");
  train_grpo->add_option("--set", overrides, "key=value override");

  auto* train_sft = train->add_subcommand("sft", "Cold-start SFT of the toy policy");
  std::string traj_path;
  int sft_steps = 100;
  double sft_lr = 1.0;
  train_sft->add_option("--trajectories", traj_path)->required();
  train_sft->add_option("--steps", sft_steps);
  train_sft->add_option("--lr", sft_lr);
  train_sft->add_option("--weights", weights);
  train_sft->add_option("--weights-out", weights_out);

  auto* sft_check = app.add_subcommand("sft-check", "Report the SFT loss of trajectories under a policy");
  sft_check->add_option("--trajectories", traj_path)->required();
  sft_check->add_option("--weights", weights);

  // verify -----------------------------------------------------------------
  auto* verify = app.add_subcommand("verify", "Score trajectories against an answer key");
  std::string answers;
  verify->add_option("--trajectories", traj_path)->required();
  verify->add_option("--answers", answers, "dataset or {task_id, gold} lines")->required();

  // data pipeline ------------------------------------------------------------
  std::string in_path, out_path;
  auto* filter = app.add_subcommand("filter", "Keep items by solver pass rate");
  std::string solver = "toy", keep_range = "[0,0]";
  int k = 8;
  filter->add_option("--in", in_path)->required();
  filter->add_option("--out", out_path)->required();
  filter->add_option("--solver", solver)->check(CLI::IsMember({"toy", "oracle", "remote"}));
  filter->add_option("--weights", weights);
  filter->add_option("--url", url);
  filter->add_option("--k", k);
  filter->add_option("--seed", seed);
  filter->add_option("--keep-range", keep_range);

  auto* mcqa = app.add_subcommand("mcqa-convert", "Convert integer-answer items to multiple choice");
  mcqa->add_option("--in", in_path)->required();
  mcqa->add_option("--out", out_path)->required();
  mcqa->add_option("--options", n_options);
  mcqa->add_option("--seed", seed);

  auto* split_cmd = app.add_subcommand("split", "Partition a dataset into cold-start and RL sets");
  std::string cold_out, rl_out;
  double fraction = 0.1;
  split_cmd->add_option("--in", in_path)->required();
  split_cmd->add_option("--cold-start-out", cold_out)->required();
  split_cmd->add_option("--rl-out", rl_out)->required();
  split_cmd->add_option("--fraction", fraction);
  split_cmd->add_option("--seed", seed);

  auto* coldstart = app.add_subcommand("synthesize-coldstart", "Oracle demonstrations, correct rollouts only");
  coldstart->add_option("--in", in_path)->required();
  coldstart->add_option("--out", out_path)->required();
  coldstart->add_option("--seed", seed);

  auto* export_cmd = app.add_subcommand("toygym-export", "Write toy-gym tasks as a dataset file");
  export_cmd->add_option("--template", tmpl);
  export_cmd->add_option("--n", n_tasks);
  export_cmd->add_option("--options", n_options);
  export_cmd->add_option("--seed", seed);
  export_cmd->add_option("--out", out_path)->required();

  // tool ---------------------------------------------------------------------
  auto* tool = app.add_subcommand("tool", "Run one tool on a PNG");
  std::string tool_name, image_path, scene_path, bbox_text, objects_text, tool_out;
  double factor = 2.0;
  tool->add_option("name", tool_name)->required()->check(CLI::IsMember({"edge", "depth", "zoom", "detect"}));
  tool->add_option("image", image_path)->required();
  tool->add_option("--scene", scene_path, "scene JSON (needed by depth and detect)");
  tool->add_option("--bbox", bbox_text, "x1,y1,x2,y2");
  tool->add_option("--factor", factor);
  tool->add_option("--objects", objects_text, "comma-separated labels");
  tool->add_option("--out", tool_out, "output PNG");

  auto* plot_cmd = app.add_subcommand("plot", "Reward curve from a metrics file");
  std::string metric_key = "moving_average_reward";
  plot_cmd->add_option("--metrics", metrics_path)->required();
  plot_cmd->add_option("--key", metric_key);
  plot_cmd->add_option("--out", out_path)->required();

  auto* descriptors = app.add_subcommand("descriptors", "Print the tool descriptors");

  CLI11_PARSE(app, argc, argv);

  try {
    tools::MockBackend backend;

    if (serve->parsed()) {
      service::ServiceConfig cfg;
      cfg.backend_seed = backend_seed;
      cfg.session_ttl = std::chrono::duration_cast<std::chrono::seconds>(std::chrono::minutes(ttl_minutes));
      cfg.noise = tools::NoiseSpec{p_miss, p_confuse, jitter};
      service::ToolServer server(cfg);
      std::cerr << "listening on " << host << ":" << port << "\n";
      server.serve(host, port);
      return 0;
    }

    if (roll->parsed()) {
      const auto limits = parse_limits(limits_text);
      const auto policy = make_policy(policy_kind, script, weights, url, !no_tools, malformed);
      const auto kind = parse_template(tmpl);
      seed = env_seed_or(seed);
      TrajectoryWriter writer(out);
      std::ofstream key_out;
      if (!answers_out.empty()) key_out.open(answers_out);
      int answered = 0, correct = 0, total = 0;
      for (int i = 0; i < n_tasks; ++i) {
        const Task task = toygym::sample_task(mix_seed(seed, static_cast<std::uint64_t>(i)), kind, {},
                                              toygym::TaskSpec{n_options});
        if (key_out) key_out << json{{"task_id", task.task_id}, {"gold", task.gold}}.dump() << "\n";
        for (int j = 0; j < group; ++j) {
          tools::Session session = rollout::make_session(task, task.task_id + "#" + std::to_string(j));
          const auto tr = rollout::run_episode(*policy, task, session, limits,
                                               mix_seed(seed ^ 0x5eedULL, static_cast<std::uint64_t>(i * group + j)),
                                               backend);
          writer.write(tr);
          const auto scored = reward::compute_reward(tr, task.gold);
          ++total;
          answered += tr.terminal == Terminal::Answered;
          correct += scored.reward > 0;
        }
      }
      std::cout << "episodes " << total << " answered " << answered << " reward+1 " << correct << "\n";
      return 0;
    }

    if (train_grpo->parsed()) {
      if (config_path.empty()) {
        if (const char* p = std::getenv("REVPT_CONFIG"); p != nullptr) config_path = p;
      }
      grpo::TrainConfig cfg = config_path.empty() ? grpo::TrainConfig{} : grpo::load_train_config(config_path);
      for (const auto& kv : overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw std::invalid_argument("--set expects key=value");
        grpo::apply_config_value(cfg, trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
      }
      cfg.seed = env_seed_or(cfg.seed);
      cfg.validate();
      toygym::ToyPolicy policy(toygym::ToyPolicyConfig{cfg.tool_access, cfg.emit_malformed_prob});
      if (!weights.empty()) policy.set_parameters(load_weights(weights));
      const auto kind = parse_template(cfg.task_template);
      const toygym::TaskSpec spec{cfg.n_options};
      const std::uint64_t task_seed = cfg.seed;
      grpo::TaskSampler sampler = [kind, spec, task_seed](std::uint64_t i) {
        return toygym::sample_task(mix_seed(task_seed, 1000 + i), kind, {}, spec);
      };
      std::ofstream metrics;
      if (!metrics_path.empty()) metrics.open(metrics_path);
      const auto report = grpo::train_grpo(policy, sampler, cfg, backend, metrics_path.empty() ? &std::cout : &metrics);
      if (!report.steps.empty()) {
        const auto& last = report.steps.back();
        std::cerr << "groups " << last.groups_seen << " moving average reward " << last.moving_average_reward << "\n";
      }
      if (!weights_out.empty()) save_weights(weights_out, policy.parameters());
      return 0;
    }

    if (train_sft->parsed() || sft_check->parsed()) {
      toygym::ToyPolicy policy;
      if (!weights.empty()) policy.set_parameters(load_weights(weights));
      const auto batch = sft::make_batch(read_trajectories(traj_path));
      if (sft_check->parsed()) {
        const auto res = sft::sft_loss(policy, batch);
        std::cout << json{{"items", batch.items.size()}, {"loss", res.loss}}.dump() << "\n";
        return 0;
      }
      const auto losses = sft::train_sft(policy, batch, sft_steps, sft_lr);
      for (std::size_t i = 0; i < losses.size(); ++i) {
        std::cout << json{{"step", i}, {"loss", losses[i]}}.dump() << "\n";
      }
      if (!weights_out.empty()) save_weights(weights_out, policy.parameters());
      return 0;
    }

    if (verify->parsed()) {
      const auto key = read_answer_key(answers);
      int n = 0, ok = 0, missing = 0;
      for (const auto& tr : read_trajectories(traj_path)) {
        const auto it = key.find(tr.task_id);
        if (it == key.end()) {
          ++missing;
          std::cerr << "warning: no gold for task " << tr.task_id << "\n";
          continue;
        }
        const auto s = reward::compute_reward(tr, it->second);
        ++n;
        ok += s.reward > 0;
        std::cout << json{{"task_id", tr.task_id},
                          {"gold", it->second},
                          {"final_answer", tr.final_answer ? json(*tr.final_answer) : json(nullptr)},
                          {"terminal", terminal_name(tr.terminal)},
                          {"format_ok", s.format_ok},
                          {"answer_ok", s.answer_ok},
                          {"reward", s.reward}}
                         .dump()
                  << "\n";
      }
      std::cout << json{{"trajectories", n}, {"correct", ok}, {"accuracy", n == 0 ? 0.0 : double(ok) / n},
                        {"missing_gold", missing}}
                       .dump()
                << "\n";
      return 0;
    }

    if (filter->parsed()) {
      const auto items = datapipe::read_dataset(in_path);
      const auto policy = make_policy(solver, "", weights, url, true, 0.0);
      const auto records = datapipe::estimate_pass_rates(*policy, items, k, env_seed_or(seed), {}, backend, 4);
      const auto res = datapipe::filter_dataset(items, records, datapipe::parse_keep_range(keep_range));
      for (const auto& w : res.warnings) std::cerr << "warning: " << w << "\n";
      for (const auto& r : records) {
        std::cerr << r.item_id << " pass " << r.correct << "/" << r.trials << "\n";
      }
      write_dataset_or_print(out_path, res.kept);
      return 0;
    }

    if (mcqa->parsed()) {
      datapipe::NumericNeighborSynthesizer synth;
      std::vector<datapipe::DatasetItem> outv;
      for (const auto& item : datapipe::read_dataset(in_path)) {
        outv.push_back(datapipe::to_mcqa(item, synth, n_options, env_seed_or(seed)));
      }
      write_dataset_or_print(out_path, outv);
      return 0;
    }

    if (split_cmd->parsed()) {
      const auto s = datapipe::split_dataset(datapipe::read_dataset(in_path), fraction, env_seed_or(seed));
      write_dataset_or_print(cold_out, s.cold_start);
      write_dataset_or_print(rl_out, s.rl);
      return 0;
    }

    if (coldstart->parsed()) {
      toygym::OraclePolicy oracle;
      const auto res = datapipe::synthesize_coldstart(oracle, datapipe::read_dataset(in_path), env_seed_or(seed), {},
                                                      backend);
      TrajectoryWriter writer(out_path);
      for (const auto& t : res.accepted) writer.write(t);
      std::cout << "attempted " << res.attempted << " accepted " << res.accepted.size() << " rejected "
                << res.rejected << "\n";
      return 0;
    }

    if (export_cmd->parsed()) {
      const auto kind = parse_template(tmpl);
      std::vector<datapipe::DatasetItem> items;
      for (int i = 0; i < n_tasks; ++i) {
        items.push_back(datapipe::item_from_task(toygym::sample_task(
            mix_seed(env_seed_or(seed), static_cast<std::uint64_t>(i)), kind, {}, toygym::TaskSpec{n_options})));
      }
      write_dataset_or_print(out_path, items);
      return 0;
    }

    if (tool->parsed()) {
      std::optional<Scene> scene;
      if (!scene_path.empty()) scene = json::parse(read_file(scene_path)).get<Scene>();
      std::vector<imaging::Image> imgs{imaging::load_png(image_path)};
      tools::Session session = tools::Session::from_images("cli", std::move(imgs), scene);
      protocol::ToolCallSpec call;
      call.arguments = json::object();
      call.arguments["image_id"] = 0;
      if (tool_name == "edge") {
        call.name = tools::kEdgeDetection;
      } else if (tool_name == "depth") {
        call.name = tools::kDepthEstimation;
      } else if (tool_name == "zoom") {
        call.name = tools::kZoomIn;
        const auto b = parse_bbox(bbox_text);
        call.arguments["bbox"] = {b.x1, b.y1, b.x2, b.y2};
        if (factor == static_cast<int>(factor)) {
          call.arguments["factor"] = static_cast<int>(factor);
        } else {
          call.arguments["factor"] = factor;
        }
      } else {
        call.name = tools::kObjectDetection;
        nlohmann::ordered_json objs = nlohmann::ordered_json::array();
        for (const auto& o : split(objects_text, ',')) {
          if (!trim(o).empty()) objs.push_back(trim(o));
        }
        call.arguments["objects"] = objs;
      }
      const auto outcome = tools::execute_tool(session, call, backend);
      std::cout << outcome.result_text << "\n";
      if (!outcome.new_images.empty() && !tool_out.empty()) imaging::save_png(outcome.new_images.front(), tool_out);
      return outcome.error == tools::ToolError::None ? 0 : 2;
    }

    if (plot_cmd->parsed()) {
      auto series = plot::metric_series(metrics_path, metric_key);
      plot::PlotOptions opts;
      opts.y_lo = -1.0;
      opts.y_hi = 1.0;
      opts.reference_lines = {0.0};
      imaging::save_png(plot::line_chart({series}, opts), out_path);
      const double xmax = series.x.empty() ? 0.0 : series.x.back();
      std::cout << out_path << ": " << metric_key << " vs groups seen, x in [0, " << xmax << "], y in [-1, 1]\n";
      return 0;
    }

    if (descriptors->parsed()) {
      std::cout << tools::tool_descriptors().dump(2) << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
