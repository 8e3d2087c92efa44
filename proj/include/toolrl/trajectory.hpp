#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "toolrl/imaging.hpp"

namespace toolrl {

enum class Role { System, User, Assistant, Observation };
enum class Terminal { Answered, TurnBudgetExhausted, PolicyAbort };

std::string_view role_name(Role r);
Role parse_role(std::string_view s);
std::string_view terminal_name(Terminal t);
Terminal parse_terminal(std::string_view s);

struct Turn {
  Role role = Role::User;
  std::string text;
  std::vector<int> image_ids;

  friend bool operator==(const Turn&, const Turn&) = default;
};

using ImagePtr = std::shared_ptr<const imaging::Image>;

// One rollout. `images` is the session image list at the end of the episode
// (index = image_id); images are shared and never mutated.
struct Trajectory {
  std::string task_id;
  std::vector<Turn> turns;
  Terminal terminal = Terminal::PolicyAbort;
  std::optional<std::string> final_answer;
  std::vector<int> token_count_per_assistant_turn;
  std::vector<ImagePtr> images;

  std::size_t assistant_turns() const;
  // Compares everything, images by pixel content.
  bool same_as(const Trajectory& other) const;
};

// Line-delimited trajectory files. Images are written once each as
// <dir>/images/<sha256 of png>.png next to the .jsonl file; lines reference
// them by hash.
class TrajectoryWriter {
 public:
  explicit TrajectoryWriter(const std::string& jsonl_path);
  void write(const Trajectory& t);

 private:
  std::string path_;
  std::string image_dir_;
};

std::vector<Trajectory> read_trajectories(const std::string& jsonl_path);

// JSON record for one trajectory; `image_hashes` must list the stored hash of
// each image in order.
nlohmann::json trajectory_to_json(const Trajectory& t, const std::vector<std::string>& image_hashes);
// Throws std::invalid_argument naming the offending field.
Trajectory trajectory_from_json(const nlohmann::json& j, const std::string& image_dir);

std::string image_dir_for(const std::string& jsonl_path);
// Stores the image under its content hash; returns the hash.
std::string store_image(const imaging::Image& img, const std::string& image_dir);

}  // namespace toolrl
