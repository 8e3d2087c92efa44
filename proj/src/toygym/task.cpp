#include "toolrl/task.hpp"

#include <stdexcept>

namespace toolrl {

std::string_view template_name(TaskTemplate t) {
  switch (t) {
    case TaskTemplate::Count: return "count";
    case TaskTemplate::RelativeDepth: return "relative_depth";
    case TaskTemplate::SpatialRelation: return "spatial_relation";
    case TaskTemplate::Other: return "other";
  }
  return "other";
}

TaskTemplate parse_template(std::string_view s) {
  if (s == "count") return TaskTemplate::Count;
  if (s == "relative_depth") return TaskTemplate::RelativeDepth;
  if (s == "spatial_relation") return TaskTemplate::SpatialRelation;
  if (s == "other") return TaskTemplate::Other;
  throw std::invalid_argument("unknown task template '" + std::string(s) + "'");
}

const Option* Task::option(char letter) const {
  for (const auto& o : options) {
    if (o.letter == letter) return &o;
  }
  return nullptr;
}

std::string render_options(const std::vector<Option>& options) {
  std::string out;
  for (const auto& o : options) {
    if (!out.empty()) out += ' ';
    out += '(';
    out += o.letter;
    out += ") " + o.text;
  }
  return out;
}

}  // namespace toolrl
