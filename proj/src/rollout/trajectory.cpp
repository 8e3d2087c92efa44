#include "toolrl/trajectory.hpp"

#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>

#include "toolrl/common.hpp"

namespace toolrl {

namespace fs = std::filesystem;

std::string_view role_name(Role r) {
  switch (r) {
    case Role::System:
      return "system";
    case Role::User:
      return "user";
    case Role::Assistant:
      return "assistant";
    case Role::Observation:
      return "observation";
  }
  return "user";
}

Role parse_role(std::string_view s) {
  if (s == "system") return Role::System;
  if (s == "user") return Role::User;
  if (s == "assistant") return Role::Assistant;
  if (s == "observation") return Role::Observation;
  throw std::invalid_argument("unknown role '" + std::string(s) + "'");
}

std::string_view terminal_name(Terminal t) {
  switch (t) {
    case Terminal::Answered:
      return "Answered";
    case Terminal::TurnBudgetExhausted:
      return "TurnBudgetExhausted";
    case Terminal::PolicyAbort:
      return "PolicyAbort";
  }
  return "PolicyAbort";
}

Terminal parse_terminal(std::string_view s) {
  if (s == "Answered") return Terminal::Answered;
  if (s == "TurnBudgetExhausted") return Terminal::TurnBudgetExhausted;
  if (s == "PolicyAbort") return Terminal::PolicyAbort;
  throw std::invalid_argument("unknown terminal '" + std::string(s) + "'");
}

std::size_t Trajectory::assistant_turns() const {
  std::size_t n = 0;
  for (const auto& t : turns) n += t.role == Role::Assistant;
  return n;
}

bool Trajectory::same_as(const Trajectory& o) const {
  if (task_id != o.task_id || turns != o.turns || terminal != o.terminal ||
      final_answer != o.final_answer ||
      token_count_per_assistant_turn != o.token_count_per_assistant_turn ||
      images.size() != o.images.size()) {
    return false;
  }
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (!(*images[i] == *o.images[i])) return false;
  }
  return true;
}

nlohmann::json trajectory_to_json(const Trajectory& t, const std::vector<std::string>& image_hashes) {
  nlohmann::json turns = nlohmann::json::array();
  for (const auto& turn : t.turns) {
    turns.push_back({{"role", role_name(turn.role)}, {"text", turn.text}, {"image_ids", turn.image_ids}});
  }
  nlohmann::json j{{"task_id", t.task_id},
                   {"turns", std::move(turns)},
                   {"terminal", terminal_name(t.terminal)},
                   {"final_answer", nullptr},
                   {"token_count_per_assistant_turn", t.token_count_per_assistant_turn},
                   {"images", image_hashes}};
  if (t.final_answer) j["final_answer"] = *t.final_answer;
  return j;
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

}  // namespace

Trajectory trajectory_from_json(const nlohmann::json& j, const std::string& image_dir) {
  if (!j.is_object()) throw std::invalid_argument("trajectory record is not an object");
  Trajectory t;
  t.task_id = field<std::string>(j, "task_id");
  if (!j.contains("turns") || !j.at("turns").is_array()) {
    throw std::invalid_argument("field 'turns' must be an array");
  }
  for (const auto& jt : j.at("turns")) {
    Turn turn;
    turn.role = parse_role(field<std::string>(jt, "role"));
    turn.text = field<std::string>(jt, "text");
    turn.image_ids = field<std::vector<int>>(jt, "image_ids");
    t.turns.push_back(std::move(turn));
  }
  t.terminal = parse_terminal(field<std::string>(j, "terminal"));
  if (j.contains("final_answer") && !j.at("final_answer").is_null()) {
    t.final_answer = field<std::string>(j, "final_answer");
  }
  t.token_count_per_assistant_turn = field<std::vector<int>>(j, "token_count_per_assistant_turn");
  for (const auto& hash : field<std::vector<std::string>>(j, "images")) {
    const std::string path = (fs::path(image_dir) / (hash + ".png")).string();
    t.images.push_back(std::make_shared<const imaging::Image>(imaging::load_png(path)));
  }
  return t;
}

std::string image_dir_for(const std::string& jsonl_path) {
  fs::path p(jsonl_path);
  return (p.parent_path() / "images").string();
}

std::string store_image(const imaging::Image& img, const std::string& image_dir) {
  const auto png = imaging::encode_png(img);
  const std::string hash = sha256_hex(png);
  fs::create_directories(image_dir);
  const fs::path path = fs::path(image_dir) / (hash + ".png");
  if (!fs::exists(path)) {
    write_file(path.string(), std::string_view(reinterpret_cast<const char*>(png.data()), png.size()));
  }
  return hash;
}

TrajectoryWriter::TrajectoryWriter(const std::string& jsonl_path)
    : path_(jsonl_path), image_dir_(image_dir_for(jsonl_path)) {
  const auto parent = fs::path(jsonl_path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
  std::ofstream truncate(path_, std::ios::trunc);
  if (!truncate) throw std::runtime_error("cannot write " + path_);
}

void TrajectoryWriter::write(const Trajectory& t) {
  std::vector<std::string> hashes;
  hashes.reserve(t.images.size());
  for (const auto& img : t.images) hashes.push_back(store_image(*img, image_dir_));
  std::ofstream out(path_, std::ios::app);
  out << trajectory_to_json(t, hashes).dump() << '\n';
}

std::vector<Trajectory> read_trajectories(const std::string& jsonl_path) {
  std::ifstream in(jsonl_path);
  if (!in) throw std::runtime_error("cannot open " + jsonl_path);
  const std::string dir = image_dir_for(jsonl_path);
  std::vector<Trajectory> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      out.push_back(trajectory_from_json(nlohmann::json::parse(line), dir));
    } catch (const std::exception& e) {
      throw std::invalid_argument(jsonl_path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace toolrl
