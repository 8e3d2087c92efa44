#include "toolrl/toygym.hpp"

#include <algorithm>
#include <cmath>
#include <regex>
#include <stdexcept>

#include "toolrl/common.hpp"
#include "toolrl/protocol.hpp"
#include "toolrl/tools.hpp"

namespace toolrl::toygym {

using imaging::BBox;
using imaging::Rgb;

void SceneSpec::validate() const {
  if (min_objects < 0 || max_objects < min_objects) throw std::invalid_argument("SceneSpec: bad object range");
  if (width < 3 || height < 3) throw std::invalid_argument("SceneSpec: image must be at least 3x3");
  if (min_size < 3 || max_size < min_size || max_size > std::min(width, height)) {
    throw std::invalid_argument("SceneSpec: bad object size range");
  }
  if (!(min_depth > 0.0) || max_depth < min_depth || !(background_depth > max_depth)) {
    throw std::invalid_argument("SceneSpec: depths must satisfy 0 < min <= max < background");
  }
}

namespace {

constexpr std::array<Rgb, 6> kPalette = {{
    {200, 40, 40}, {40, 90, 200}, {40, 160, 60}, {220, 160, 30}, {150, 60, 170}, {30, 170, 170},
}};

constexpr std::array<Shape, 3> kShapes = {Shape::Square, Shape::Circle, Shape::Triangle};

std::pair<int, int> center2(const BBox& b) { return {b.x1 + b.x2, b.y1 + b.y2}; }

}  // namespace

Scene generate_scene(std::uint64_t seed, const SceneSpec& spec) {
  spec.validate();
  Rng rng(mix_seed(seed, hash_string("scene")));
  Scene scene;
  scene.width = spec.width;
  scene.height = spec.height;
  scene.background_depth = spec.background_depth;
  const int n = static_cast<int>(rng.between(spec.min_objects, spec.max_objects));

  // Distinct depths on a half-metre grid (finer when the range is small).
  std::vector<double> depths;
  const int slots = std::max(n, static_cast<int>(std::floor((spec.max_depth - spec.min_depth) / 0.5)) + 1);
  for (int i = 0; i < slots; ++i) {
    depths.push_back(slots == 1 ? spec.min_depth
                                : spec.min_depth + (spec.max_depth - spec.min_depth) * i / (slots - 1));
  }
  rng.shuffle(depths);

  std::array<int, 3> per_shape{};
  for (int i = 0; i < n; ++i) {
    SceneObject obj;
    const int s = static_cast<int>(rng.below(3));
    obj.shape = kShapes[static_cast<std::size_t>(s)];
    obj.category = std::string(shape_name(obj.shape));
    obj.label = obj.category + std::to_string(++per_shape[static_cast<std::size_t>(s)]);
    obj.color = kPalette[rng.below(kPalette.size())];
    obj.depth = depths[static_cast<std::size_t>(i)];
    const int size = static_cast<int>(rng.between(spec.min_size, spec.max_size));
    bool placed = false;
    for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
      const int x = static_cast<int>(rng.between(0, spec.width - size));
      const int y = static_cast<int>(rng.between(0, spec.height - size));
      obj.box = BBox{x, y, x + size, y + size};
      placed = true;
      if (spec.non_overlapping) {
        for (const auto& o : scene.objects) {
          if (o.box.intersects(obj.box)) {
            placed = false;
            break;
          }
        }
      }
    }
    if (!placed) {
      throw std::runtime_error("generate_scene: cannot place " + std::to_string(n) + " objects in a " +
                               std::to_string(spec.width) + "x" + std::to_string(spec.height) + " image");
    }
    scene.objects.push_back(std::move(obj));
  }
  validate_scene(scene);
  return scene;
}

namespace {

std::vector<Option> lettered(const std::vector<std::string>& texts) {
  std::vector<Option> out;
  for (std::size_t i = 0; i < texts.size(); ++i) out.push_back({static_cast<char>('A' + i), texts[i]});
  return out;
}

std::string gold_letter(const std::vector<Option>& options, const std::string& text) {
  for (const auto& o : options) {
    if (o.text == text) return std::string(1, o.letter);
  }
  throw std::logic_error("gold option missing");
}

}  // namespace

Task generate_task(const Scene& scene, TaskTemplate kind, std::uint64_t seed, const TaskSpec& spec) {
  validate_scene(scene);
  Task task;
  task.template_kind = kind;
  task.task_id = std::string(template_name(kind)) + "-" + std::to_string(seed);
  task.scene = scene;
  std::vector<std::string> texts;
  std::string truth;
  Rng rng(mix_seed(seed, hash_string(template_name(kind))));
  switch (kind) {
    case TaskTemplate::Count: {
      if (spec.n_options < 2 || spec.n_options > 6) throw std::invalid_argument("Count tasks need 2 to 6 options");
      const Shape asked = kShapes[rng.below(3)];
      int c = 0;
      for (const auto& o : scene.objects) c += o.shape == asked ? 1 : 0;
      const int n = spec.n_options;
      const int start = std::max(0, c - static_cast<int>(rng.below(static_cast<std::uint64_t>(n))));
      for (int v = start; v < start + n; ++v) texts.push_back(std::to_string(v));
      truth = std::to_string(c);
      task.question_text = "How many " + std::string(shape_name(asked)) + "s are in the image?";
      break;
    }
    case TaskTemplate::RelativeDepth:
    case TaskTemplate::SpatialRelation: {
      if (scene.objects.size() < 2) {
        throw std::invalid_argument(std::string(template_name(kind)) + " tasks need at least two objects");
      }
      const std::size_t n = scene.objects.size();
      std::size_t i = rng.below(n);
      std::size_t j = rng.below(n - 1);
      if (j >= i) ++j;
      const auto& a = scene.objects[i];
      const auto& b = scene.objects[j];
      if (kind == TaskTemplate::RelativeDepth) {
        if (a.depth == b.depth) throw std::invalid_argument("RelativeDepth tasks need distinct depths");
        task.question_text = "Which object is closer to the camera, " + a.label + " at " + a.box.to_string() +
                             " or " + b.label + " at " + b.box.to_string() + "?";
        texts = {a.label, b.label};
        truth = a.depth < b.depth ? a.label : b.label;
      } else {
        if (center2(a.box).first == center2(b.box).first) {
          throw std::invalid_argument("SpatialRelation tasks need horizontally separated objects");
        }
        task.question_text = "Is " + a.label + " at " + a.box.to_string() + " left of " + b.label + " at " +
                             b.box.to_string() + "?";
        texts = {"Yes", "No"};
        truth = center2(a.box).first < center2(b.box).first ? "Yes" : "No";
      }
      break;
    }
    case TaskTemplate::Other:
      throw std::invalid_argument("the toy gym does not generate 'other' tasks");
  }
  rng.shuffle(texts);
  task.options = lettered(texts);
  task.gold = gold_letter(task.options, truth);
  task.initial_images.push_back(render_scene(scene));
  return task;
}

Task sample_task(std::uint64_t seed, TaskTemplate kind, const SceneSpec& scene_spec, const TaskSpec& task_spec) {
  SceneSpec spec = scene_spec;
  if (kind != TaskTemplate::Count) spec.min_objects = std::max(2, spec.min_objects);
  // Spatial questions need distinct box centres; redraw the pair seed if not.
  for (std::uint64_t k = 0;; ++k) {
    const std::uint64_t s = k == 0 ? seed : mix_seed(seed, k);
    const Scene scene = generate_scene(s, spec);
    try {
      Task t = generate_task(scene, kind, s, task_spec);
      t.task_id = std::string(template_name(kind)) + "-" + std::to_string(seed);
      return t;
    } catch (const std::invalid_argument&) {
      if (k > 100) throw;
    }
  }
}

// ---------------------------------------------------------------------------
// Policy features

namespace {

enum Feature : int {
  kBias = 0,
  kTplCount = 1,
  kTplDepth = 2,
  kTplSpatial = 3,
  kAsked = 4,  // + shape index
  kHasEvidence = 7,
  kDetectedAsked = 8,
  kDepthDone = 9,
  kOtherTool = 10,
  kLastError = 11,
  kTurn = 12,  // + assistant turn index, capped at 4
};

const std::regex& count_re() {
  static const std::regex re(R"(How many (square|circle|triangle)s are in the image\?)");
  return re;
}
const std::regex& depth_re() {
  static const std::regex re(R"(Which object is closer to the camera, (\w+) at (\[[^\]]*\]) or (\w+) at (\[[^\]]*\])\?)");
  return re;
}
const std::regex& spatial_re() {
  static const std::regex re(R"(Is (\w+) at (\[[^\]]*\]) left of (\w+) at (\[[^\]]*\])\?)");
  return re;
}
const std::regex& option_re() {
  static const std::regex re(R"(\(([A-F])\) (.*?)(?= \([A-F]\) |$))");
  return re;
}
const std::regex& detection_entry_re() {
  static const std::regex re(R"(\d+\. ([^(]+)\((\d+\.\d+)\): \[)");
  return re;
}

std::optional<BBox> parse_box(const std::string& s) {
  static const std::regex re(R"(\[(-?\d+), (-?\d+), (-?\d+), (-?\d+)\])");
  std::smatch m;
  if (!std::regex_match(s, m, re)) return std::nullopt;
  return BBox{std::stoi(m[1]), std::stoi(m[2]), std::stoi(m[3]), std::stoi(m[4])};
}

std::string observation_body(std::string_view text) {
  std::string s(text);
  if (starts_with(s, "<image>\n")) s.erase(0, 8);
  if (starts_with(s, "<result>")) s.erase(0, 8);
  if (s.size() >= 9 && s.compare(s.size() - 9, 9, "</result>") == 0) s.erase(s.size() - 9);
  return s;
}

struct Question {
  TaskTemplate kind = TaskTemplate::Other;
  int asked_shape = -1;
  std::string label_a, label_b;
  std::optional<BBox> box_a, box_b;
  std::vector<Option> options;
};

Question parse_question(const std::string& user_text) {
  Question q;
  std::smatch m;
  if (std::regex_search(user_text, m, count_re())) {
    q.kind = TaskTemplate::Count;
    q.asked_shape = static_cast<int>(*parse_shape(m[1].str()));
  } else if (std::regex_search(user_text, m, depth_re())) {
    q.kind = TaskTemplate::RelativeDepth;
  } else if (std::regex_search(user_text, m, spatial_re())) {
    q.kind = TaskTemplate::SpatialRelation;
  }
  if (q.kind == TaskTemplate::RelativeDepth || q.kind == TaskTemplate::SpatialRelation) {
    q.label_a = m[1];
    q.box_a = parse_box(m[2]);
    q.label_b = m[3];
    q.box_b = parse_box(m[4]);
  }
  const auto nl = user_text.rfind('\n');
  const std::string last = nl == std::string::npos ? std::string() : user_text.substr(nl + 1);
  for (auto it = std::sregex_iterator(last.begin(), last.end(), option_re()); it != std::sregex_iterator(); ++it) {
    q.options.push_back({(*it)[1].str()[0], trim((*it)[2].str())});
  }
  return q;
}

std::optional<double> ramp_at_center(const Trajectory& t, int image_id, const BBox& box) {
  if (image_id < 0 || static_cast<std::size_t>(image_id) >= t.images.size() || !t.images[image_id]) {
    return std::nullopt;
  }
  const auto& img = *t.images[static_cast<std::size_t>(image_id)];
  const int x = (box.x1 + box.x2 - 1) / 2;
  const int y = (box.y1 + box.y2 - 1) / 2;
  if (x < 0 || y < 0 || x >= img.width() || y >= img.height()) return std::nullopt;
  return imaging::ramp_position(img.at(x, y));
}

}  // namespace

std::string action_name(int action) {
  static const char* names[] = {"detect_square", "detect_circle", "detect_triangle", "depth",
                                "zoom_top_left", "zoom_top_right", "zoom_bottom_left", "zoom_bottom_right",
                                "edge"};
  if (action >= 0 && action < kAnswerA) return names[action];
  if (action >= kAnswerA && action < kNumActions) return std::string("answer_") + static_cast<char>('A' + action - kAnswerA);
  throw std::out_of_range("no action " + std::to_string(action));
}

ToyState extract_state(const Trajectory& traj, std::size_t turn_index, bool tool_access) {
  ToyState st;
  auto& phi = st.phi;
  phi[kBias] = 1.0;
  if (!traj.images.empty() && traj.images[0]) {
    st.image_width = traj.images[0]->width();
    st.image_height = traj.images[0]->height();
  }
  Question q;
  for (std::size_t i = 0; i < std::min(turn_index, traj.turns.size()); ++i) {
    if (traj.turns[i].role == Role::User) {
      q = parse_question(traj.turns[i].text);
      break;
    }
  }
  if (q.kind == TaskTemplate::Count) phi[kTplCount] = 1.0;
  if (q.kind == TaskTemplate::RelativeDepth) phi[kTplDepth] = 1.0;
  if (q.kind == TaskTemplate::SpatialRelation) phi[kTplSpatial] = 1.0;
  if (q.asked_shape >= 0) phi[static_cast<std::size_t>(kAsked + q.asked_shape)] = 1.0;

  std::optional<std::string> supported;  // option text backed by evidence
  if (q.kind == TaskTemplate::SpatialRelation && q.box_a && q.box_b) {
    const int ca = q.box_a->x1 + q.box_a->x2, cb = q.box_b->x1 + q.box_b->x2;
    if (ca != cb) supported = ca < cb ? "Yes" : "No";
  }

  int assistant_before = 0;
  const std::size_t end = std::min(turn_index, traj.turns.size());
  for (std::size_t i = 0; i < end; ++i) {
    if (traj.turns[i].role != Role::Assistant) continue;
    ++assistant_before;
    if (i + 1 >= end || traj.turns[i + 1].role != Role::Observation) continue;
    const auto parsed = protocol::parse_assistant_turn(traj.turns[i].text);
    if (!parsed.ok() || !parsed.turn->is_tool_call()) continue;
    const auto& call = parsed.turn->tool_call();
    const Turn& obs = traj.turns[i + 1];
    const std::string body = observation_body(obs.text);
    const bool error = starts_with(body, "Error:");
    phi[kLastError] = error ? 1.0 : 0.0;
    if (error) continue;
    if (call.name == tools::kObjectDetection) {
      bool asked_queried = false;
      const auto& objs = call.arguments.contains("objects") ? call.arguments["objects"] : nlohmann::ordered_json();
      if (q.asked_shape >= 0 && objs.is_array()) {
        const std::string asked(shape_name(kShapes[static_cast<std::size_t>(q.asked_shape)]));
        for (const auto& o : objs) {
          if (o.is_string() && tools::fold_label(o.get<std::string>()) == asked) asked_queried = true;
        }
        if (asked_queried) {
          int count = 0;
          for (auto it = std::sregex_iterator(body.begin(), body.end(), detection_entry_re());
               it != std::sregex_iterator(); ++it) {
            if (tools::fold_label(trim((*it)[1].str())) == asked) ++count;
          }
          phi[kDetectedAsked] = 1.0;
          supported = std::to_string(count);
        }
      }
      if (!asked_queried) phi[kOtherTool] = 1.0;
    } else if (call.name == tools::kDepthEstimation) {
      phi[kDepthDone] = 1.0;
      if (q.kind == TaskTemplate::RelativeDepth && q.box_a && q.box_b && !obs.image_ids.empty()) {
        const auto ta = ramp_at_center(traj, obs.image_ids.front(), *q.box_a);
        const auto tb = ramp_at_center(traj, obs.image_ids.front(), *q.box_b);
        if (ta && tb && *ta != *tb) supported = *ta > *tb ? q.label_a : q.label_b;
      }
    } else {
      phi[kOtherTool] = 1.0;
    }
  }
  phi[static_cast<std::size_t>(kTurn + std::min(assistant_before, 4))] = 1.0;

  if (supported) {
    for (const auto& o : q.options) {
      if (o.text == *supported) {
        st.support[static_cast<std::size_t>(o.letter - 'A')] = 1.0;
        phi[kHasEvidence] = 1.0;
      }
    }
  }

  if (tool_access) {
    for (int a = 0; a < kAnswerA; ++a) st.allowed[static_cast<std::size_t>(a)] = true;
    if (st.image_width < 2 || st.image_height < 2) {
      for (int a = kZoomTopLeft; a <= kZoomBottomRight; ++a) st.allowed[static_cast<std::size_t>(a)] = false;
    }
  }
  if (q.options.empty()) {
    for (int a = kAnswerA; a < kNumActions; ++a) st.allowed[static_cast<std::size_t>(a)] = true;
  } else {
    for (const auto& o : q.options) st.allowed[static_cast<std::size_t>(kAnswerA + (o.letter - 'A'))] = true;
  }
  return st;
}

namespace {

BBox zoom_cell(int action, int w, int h) {
  const int mx = w / 2, my = h / 2;
  switch (action) {
    case kZoomTopLeft: return {0, 0, mx, my};
    case kZoomTopRight: return {mx, 0, w, my};
    case kZoomBottomLeft: return {0, my, mx, h};
    default: return {mx, my, w, h};
  }
}

}  // namespace

std::string render_action(int action, const ToyState& st) {
  protocol::ParsedTurn turn;
  if (action >= kAnswerA && action < kNumActions) {
    const char letter = static_cast<char>('A' + action - kAnswerA);
    turn.think_text = std::string("Based on what I have seen, the answer is option ") + letter + ".";
    turn.action = protocol::AnswerAction{std::string("The answer is \\boxed{") + letter + "}.", std::string(1, letter)};
    return protocol::render_turn(turn);
  }
  protocol::ToolCallSpec call;
  call.arguments["image_id"] = 0;
  switch (action) {
    case kDetectSquare:
    case kDetectCircle:
    case kDetectTriangle: {
      const std::string shape(shape_name(kShapes[static_cast<std::size_t>(action)]));
      turn.think_text = "I should locate every " + shape + " in the image.";
      call.name = tools::kObjectDetection;
      call.arguments["objects"] = nlohmann::ordered_json::array({shape});
      break;
    }
    case kDepth:
      turn.think_text = "A depth map will show which objects are closer.";
      call.name = tools::kDepthEstimation;
      break;
    case kZoomTopLeft:
    case kZoomTopRight:
    case kZoomBottomLeft:
    case kZoomBottomRight: {
      if (st.image_width < 2 || st.image_height < 2) throw std::invalid_argument("zoom needs the image size");
      const BBox b = zoom_cell(action, st.image_width, st.image_height);
      turn.think_text = "Let me look at this part of the image more closely.";
      call.name = tools::kZoomIn;
      call.arguments["bbox"] = nlohmann::ordered_json::array({b.x1, b.y1, b.x2, b.y2});
      call.arguments["factor"] = 2;
      break;
    }
    case kEdge:
      turn.think_text = "The edge map may make the outlines clearer.";
      call.name = tools::kEdgeDetection;
      break;
    default:
      throw std::out_of_range("no action " + std::to_string(action));
  }
  turn.action = std::move(call);
  return protocol::render_turn(turn);
}

std::optional<int> decode_action(std::string_view text) {
  const auto open = text.find("<tool_call>");
  if (open != std::string_view::npos) {
    const auto close = text.find("</tool_call>", open);
    if (close == std::string_view::npos) return std::nullopt;
    const auto parsed = protocol::parse_tool_call_json(text.substr(open + 11, close - open - 11));
    if (!std::holds_alternative<protocol::ToolCallSpec>(parsed)) return std::nullopt;
    const auto& call = std::get<protocol::ToolCallSpec>(parsed);
    const auto& args = call.arguments;
    if (call.name == tools::kObjectDetection) {
      if (!args.contains("objects") || !args["objects"].is_array() || args["objects"].size() != 1 ||
          !args["objects"][0].is_string()) {
        return std::nullopt;
      }
      const auto shape = parse_shape(tools::fold_label(args["objects"][0].get<std::string>()));
      if (!shape) return std::nullopt;
      return static_cast<int>(*shape);
    }
    if (call.name == tools::kDepthEstimation) return kDepth;
    if (call.name == tools::kEdgeDetection) return kEdge;
    if (call.name == tools::kZoomIn) {
      if (!args.contains("bbox") || !args["bbox"].is_array() || args["bbox"].size() != 4) return std::nullopt;
      const bool left = args["bbox"][0] == 0;
      const bool top = args["bbox"][1] == 0;
      if (top) return left ? kZoomTopLeft : kZoomTopRight;
      return left ? kZoomBottomLeft : kZoomBottomRight;
    }
    return std::nullopt;
  }
  const auto boxed = protocol::extract_boxed_answer(text);
  if (boxed && boxed->size() == 1 && (*boxed)[0] >= 'A' && (*boxed)[0] <= 'F') return kAnswerA + ((*boxed)[0] - 'A');
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// ToyPolicy

ToyPolicy::ToyPolicy(ToyPolicyConfig cfg)
    : cfg_(cfg), weights_(static_cast<std::size_t>(kNumParams), 0.0) {
  if (cfg_.emit_malformed_prob < 0.0 || cfg_.emit_malformed_prob > 1.0) {
    throw std::invalid_argument("emit_malformed_prob must lie in [0, 1]");
  }
}

void ToyPolicy::set_parameters(std::span<const double> params) {
  if (params.size() != weights_.size()) {
    throw std::invalid_argument("ToyPolicy expects " + std::to_string(weights_.size()) + " parameters");
  }
  weights_.assign(params.begin(), params.end());
}

std::unique_ptr<rollout::TrainablePolicy> ToyPolicy::clone() const { return std::make_unique<ToyPolicy>(*this); }

std::array<double, kNumActions> ToyPolicy::logits(const ToyState& st, double* max_logit) const {
  std::array<double, kNumActions> z{};
  double hi = -INFINITY;
  for (int a = 0; a < kNumActions; ++a) {
    if (!st.allowed[static_cast<std::size_t>(a)]) continue;
    double v = 0.0;
    for (int f = 0; f < kNumFeatures; ++f) v += weights_[index(a, f)] * st.phi[static_cast<std::size_t>(f)];
    if (a >= kAnswerA) v += weights_[support_index()] * st.support[static_cast<std::size_t>(a - kAnswerA)];
    z[static_cast<std::size_t>(a)] = v;
    hi = std::max(hi, v);
  }
  if (max_logit) *max_logit = hi;
  return z;
}

double ToyPolicy::log_softmax_at(const ToyState& st, int action) const {
  double hi = 0.0;
  const auto z = logits(st, &hi);
  double sum = 0.0;
  for (int a = 0; a < kNumActions; ++a) {
    if (st.allowed[static_cast<std::size_t>(a)]) sum += std::exp(z[static_cast<std::size_t>(a)] - hi);
  }
  return z[static_cast<std::size_t>(action)] - hi - std::log(sum);
}

std::array<double, kNumActions> ToyPolicy::probabilities(const ToyState& st) const {
  double hi = 0.0;
  const auto logits = this->logits(st, &hi);
  std::array<double, kNumActions> p{};
  double sum = 0.0;
  for (int a = 0; a < kNumActions; ++a) {
    if (!st.allowed[static_cast<std::size_t>(a)]) continue;
    p[static_cast<std::size_t>(a)] = std::exp(logits[static_cast<std::size_t>(a)] - hi);
    sum += p[static_cast<std::size_t>(a)];
  }
  for (double& v : p) v /= sum;
  return p;
}

namespace {

std::string corrupt(const std::string& text, Rng& rng) {
  switch (rng.below(3)) {
    case 0: {  // drop the closing think tag
      std::string s = text;
      s.erase(s.find("</think>"), 8);
      return s;
    }
    case 1:  // stray text after the action
      return text + " Done.";
    default: {  // no think block at all
      const auto close = text.find("</think>");
      return trim(text.substr(close + 8));
    }
  }
}

}  // namespace

std::string ToyPolicy::generate(const rollout::PolicyContext& ctx, int, std::uint64_t seed) const {
  const ToyState st = extract_state(ctx.trajectory, ctx.trajectory.turns.size(), cfg_.tool_access);
  const auto p = probabilities(st);
  Rng rng(seed);
  const double u = rng.uniform();
  int action = -1;
  double acc = 0.0;
  for (int a = 0; a < kNumActions; ++a) {
    if (!st.allowed[static_cast<std::size_t>(a)]) continue;
    action = a;
    acc += p[static_cast<std::size_t>(a)];
    if (u < acc) break;
  }
  std::string text = render_action(action, st);
  if (cfg_.emit_malformed_prob > 0.0 && rng.bernoulli(cfg_.emit_malformed_prob)) text = corrupt(text, rng);
  return text;
}

rollout::Decision ToyPolicy::score_turn(const Trajectory& traj, std::size_t turn_index, std::string_view text,
                                        bool with_grad) const {
  const ToyState st = extract_state(traj, turn_index, cfg_.tool_access);
  const auto action = decode_action(text);
  if (!action) throw std::invalid_argument("turn " + std::to_string(turn_index) + " is not a toy-policy action");
  if (!st.allowed[static_cast<std::size_t>(*action)]) {
    throw std::invalid_argument("action " + action_name(*action) + " is outside the action space at turn " +
                                std::to_string(turn_index));
  }
  const auto p = probabilities(st);
  rollout::Decision d;
  d.turn_index = turn_index;
  d.mask = true;
  d.logp = log_softmax_at(st, *action);
  if (with_grad) {
    d.grad.assign(weights_.size(), 0.0);
    double expected_support = 0.0;
    for (int a = 0; a < kNumActions; ++a) {
      if (!st.allowed[static_cast<std::size_t>(a)]) continue;
      const double coeff = (a == *action ? 1.0 : 0.0) - p[static_cast<std::size_t>(a)];
      for (int f = 0; f < kNumFeatures; ++f) d.grad[index(a, f)] = coeff * st.phi[static_cast<std::size_t>(f)];
      if (a >= kAnswerA) expected_support += p[static_cast<std::size_t>(a)] * st.support[static_cast<std::size_t>(a - kAnswerA)];
    }
    const double own = *action >= kAnswerA ? st.support[static_cast<std::size_t>(*action - kAnswerA)] : 0.0;
    d.grad[support_index()] = own - expected_support;
  }
  return d;
}

// ---------------------------------------------------------------------------
// OraclePolicy

std::string OraclePolicy::generate(const rollout::PolicyContext& ctx, int, std::uint64_t) const {
  const ToyState st = extract_state(ctx.trajectory, ctx.trajectory.turns.size(), true);
  const auto& phi = st.phi;
  const bool last = ctx.turn_index + 1 >= ctx.max_turns;
  int action = -1;
  if (!last && phi[kTplCount] > 0 && phi[kDetectedAsked] == 0) {
    for (int s = 0; s < 3; ++s) {
      if (phi[static_cast<std::size_t>(kAsked + s)] > 0) action = kDetectSquare + s;
    }
  } else if (!last && phi[kTplDepth] > 0 && phi[kDepthDone] == 0) {
    action = kDepth;
  }
  if (action < 0) {
    for (int k = 0; k < 6 && action < 0; ++k) {
      if (st.support[static_cast<std::size_t>(k)] > 0) action = kAnswerA + k;
    }
  }
  if (action < 0) {
    for (int a = kAnswerA; a < kNumActions && action < 0; ++a) {
      if (st.allowed[static_cast<std::size_t>(a)]) action = a;
    }
  }
  return render_action(action, st);
}

std::vector<double> OraclePolicy::log_probs(const Trajectory& trajectory) const {
  return std::vector<double>(trajectory.assistant_turns(), 0.0);
}

}  // namespace toolrl::toygym
