#pragma once

#include <optional>
#include <string>
#include <vector>

#include "toolrl/imaging.hpp"
#include "toolrl/scene.hpp"

namespace toolrl {

enum class TaskTemplate { Count, RelativeDepth, SpatialRelation, Other };

std::string_view template_name(TaskTemplate t);
TaskTemplate parse_template(std::string_view s);

struct Option {
  char letter = 'A';
  std::string text;

  friend bool operator==(const Option&, const Option&) = default;
};

// A verifiable multiple-choice (or free-form) question with its images.
struct Task {
  std::string task_id;
  TaskTemplate template_kind = TaskTemplate::Other;
  std::string question_text;
  std::vector<Option> options;
  std::string gold;
  std::optional<Scene> scene;
  std::vector<imaging::Image> initial_images;

  const Option* option(char letter) const;
};

// "(A) 3 (B) 4 ..."
std::string render_options(const std::vector<Option>& options);

}  // namespace toolrl
