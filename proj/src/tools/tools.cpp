#include "toolrl/tools.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <stdexcept>

#include "toolrl/common.hpp"

namespace toolrl::tools {

using nlohmann::ordered_json;

Session Session::from_images(std::string id, std::vector<imaging::Image> images,
                             std::optional<Scene> scene) {
  Session s;
  s.session_id = std::move(id);
  for (auto& img : images) s.images.push_back(std::make_shared<const imaging::Image>(std::move(img)));
  s.scene = std::move(scene);
  s.scene_image_count = s.scene ? static_cast<int>(s.images.size()) : 0;
  return s;
}

std::string fold_label(std::string_view label) {
  std::string s;
  for (char c : trim(label)) s.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  auto ends = [&](std::string_view suf) {
    return s.size() > suf.size() && s.compare(s.size() - suf.size(), suf.size(), suf) == 0;
  };
  if (ends("ches") || ends("shes") || ends("xes") || ends("zes") || ends("sses")) {
    s.resize(s.size() - 2);
  } else if (ends("s") && !ends("ss")) {
    s.pop_back();
  }
  return s;
}

std::vector<Detection> mock_detect(const Scene& scene, const std::vector<std::string>& queries,
                                   const NoiseSpec& noise, std::uint64_t seed) {
  std::vector<std::string> folded;
  std::string joined;
  for (const auto& q : queries) {
    folded.push_back(fold_label(q));
    joined += q + '\n';
  }
  Rng rng(mix_seed(seed, hash_string(joined)));

  std::vector<Detection> out;
  for (const auto& obj : scene.objects) {
    const std::string category = fold_label(obj.category.empty() ? shape_name(obj.shape) : obj.category);
    const bool match = std::find(folded.begin(), folded.end(), category) != folded.end();
    // Draw every variate for every object so outcomes of one object do not
    // shift the stream seen by the next.
    const bool miss = rng.bernoulli(noise.p_miss);
    const bool confuse = rng.bernoulli(noise.p_confuse);
    const double noisy_score = rng.uniform(0.30, 0.95);
    int shift[4];
    for (int& s : shift) s = noise.jitter > 0 ? static_cast<int>(rng.between(-noise.jitter, noise.jitter)) : 0;

    Detection d;
    bool confused = false;
    if (match && !miss) {
      d.label = obj.category.empty() ? std::string(shape_name(obj.shape)) : obj.category;
    } else if (!match && confuse && !queries.empty()) {
      d.label = queries.front();
      confused = true;
    } else {
      continue;
    }
    d.box = obj.box;
    if (noise.jitter > 0) {
      imaging::BBox j{std::clamp(obj.box.x1 + shift[0], 0, scene.width - 1),
                      std::clamp(obj.box.y1 + shift[1], 0, scene.height - 1),
                      std::clamp(obj.box.x2 + shift[2], 1, scene.width),
                      std::clamp(obj.box.y2 + shift[3], 1, scene.height)};
      if (j.valid_for(scene.width, scene.height)) d.box = j;
    }
    d.score = (confused || noise.jitter > 0) ? noisy_score : obj.detect_score.value_or(0.90);
    out.push_back(std::move(d));
  }
  return out;
}

imaging::DepthField mock_depth(const Scene& scene) {
  imaging::DepthField field(scene.width, scene.height, scene.background_depth);
  for (const auto& obj : scene.objects) {
    for (int y = obj.box.y1; y < obj.box.y2; ++y) {
      for (int x = obj.box.x1; x < obj.box.x2; ++x) {
        if (covers(obj, x, y) && obj.depth < field.at(x, y)) field.set(x, y, obj.depth);
      }
    }
  }
  return field;
}

std::optional<std::vector<Detection>> MockBackend::detect(const imaging::Image& image,
                                                          const Scene* scene,
                                                          const std::vector<std::string>& queries) const {
  if (scene == nullptr || scene->width != image.width() || scene->height != image.height()) {
    return std::nullopt;
  }
  return mock_detect(*scene, queries, noise_, seed_);
}

std::optional<imaging::DepthField> MockBackend::depth(const imaging::Image& image,
                                                      const Scene* scene) const {
  if (scene == nullptr || scene->width != image.width() || scene->height != image.height()) {
    return std::nullopt;
  }
  return mock_depth(*scene);
}

std::string render_detection_result(int image_id, const std::vector<std::string>& queries,
                                    const std::vector<Detection>& dets) {
  const std::string id = std::to_string(image_id);
  if (dets.empty()) {
    std::string joined;
    for (const auto& q : queries) {
      if (!joined.empty()) joined += ' ';
      joined += q + '.';
    }
    return "No objects matching '" + joined + "' detected in image " + id + ".";
  }
  std::string out = "Detected " + std::to_string(dets.size()) + " object(s) in image " + id + ":";
  for (std::size_t i = 0; i < dets.size(); ++i) {
    char score[32];
    std::snprintf(score, sizeof(score), "%.2f", dets[i].score);
    out += " " + std::to_string(i + 1) + ". " + dets[i].label + "(" + score + "): " + dets[i].box.to_string();
  }
  return out;
}

void ToolRegistry::add(std::string name, Handler handler) {
  handlers_[std::move(name)] = std::move(handler);
}

std::vector<std::string> ToolRegistry::names() const {
  std::vector<std::string> out;
  for (const auto& [name, _] : handlers_) out.push_back(name);
  return out;
}

const ToolRegistry::Handler* ToolRegistry::find(const std::string& name) const {
  auto it = handlers_.find(name);
  return it == handlers_.end() ? nullptr : &it->second;
}

namespace {

struct ArgError {
  ToolError kind;
  std::string message;
};

ToolOutcome error_outcome(ToolError kind, const std::string& message) {
  ToolOutcome out;
  out.result_text = "Error: " + message;
  out.error = kind;
  return out;
}

void check_known_args(const protocol::ToolCallSpec& call, std::initializer_list<std::string_view> allowed) {
  for (const auto& [key, _] : call.arguments.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw ArgError{ToolError::BadArguments,
                     "unexpected argument '" + key + "' for " + call.name};
    }
  }
}

const ordered_json& require(const protocol::ToolCallSpec& call, const char* key) {
  if (!call.arguments.contains(key)) {
    throw ArgError{ToolError::BadArguments, "missing argument '" + std::string(key) + "' for " + call.name};
  }
  return call.arguments.at(key);
}

int image_id_arg(const Session& session, const protocol::ToolCallSpec& call) {
  const auto& v = require(call, "image_id");
  if (!v.is_number_integer()) {
    throw ArgError{ToolError::BadArguments, "argument 'image_id' must be an integer"};
  }
  const auto id = v.get<std::int64_t>();
  if (id < 0 || id >= static_cast<std::int64_t>(session.images.size())) {
    throw ArgError{ToolError::BadImageId, "image_id " + std::to_string(id) + " does not exist (session has " +
                                              std::to_string(session.images.size()) + " image(s))"};
  }
  return static_cast<int>(id);
}

const Scene* scene_for(const Session& session, int image_id) {
  return session.scene && image_id < session.scene_image_count ? &*session.scene : nullptr;
}

ToolOutcome run_detection(const Session& session, const protocol::ToolCallSpec& call,
                          const PerceptionBackend& backend) {
  check_known_args(call, {"image_id", "objects"});
  const int id = image_id_arg(session, call);
  const auto& objs = require(call, "objects");
  std::vector<std::string> queries;
  if (objs.is_string()) {
    queries.push_back(objs.get<std::string>());
  } else if (objs.is_array()) {
    for (const auto& q : objs) {
      if (!q.is_string()) throw ArgError{ToolError::BadArguments, "argument 'objects' must list strings"};
      queries.push_back(q.get<std::string>());
    }
  }
  if (queries.empty()) {
    throw ArgError{ToolError::BadArguments, "argument 'objects' must be a non-empty list of strings"};
  }
  const auto& image = *session.images[id];
  auto dets = backend.detect(image, scene_for(session, id), queries);
  if (!dets) {
    throw ArgError{ToolError::BackendUnavailable,
                   "object detection is not available for image " + std::to_string(id)};
  }
  ToolOutcome out;
  out.result_text = render_detection_result(id, queries, *dets);
  if (!dets->empty()) {
    std::vector<imaging::LabeledBox> boxes;
    for (const auto& d : *dets) boxes.push_back({d.box, d.label, d.score});
    out.new_images.push_back(imaging::draw_boxes(image, boxes));
  }
  out.detections = std::move(*dets);
  return out;
}

ToolOutcome run_zoom(const Session& session, const protocol::ToolCallSpec& call, const PerceptionBackend&) {
  check_known_args(call, {"image_id", "bbox", "factor"});
  const int id = image_id_arg(session, call);
  const auto& jb = require(call, "bbox");
  if (!jb.is_array() || jb.size() != 4 ||
      !std::all_of(jb.begin(), jb.end(), [](const ordered_json& v) { return v.is_number_integer(); })) {
    throw ArgError{ToolError::BadArguments, "argument 'bbox' must be [x1, y1, x2, y2] integers"};
  }
  const imaging::BBox box{jb[0].get<int>(), jb[1].get<int>(), jb[2].get<int>(), jb[3].get<int>()};
  const auto& jf = require(call, "factor");
  if (!jf.is_number()) throw ArgError{ToolError::BadArguments, "argument 'factor' must be a number"};
  const double factor = jf.get<double>();
  const auto& image = *session.images[id];
  ToolOutcome out;
  try {
    out.new_images.push_back(imaging::crop_and_zoom(image, box, factor));
  } catch (const std::invalid_argument& e) {
    throw ArgError{ToolError::BadArguments, e.what()};
  }
  const std::string factor_text = jf.is_number_integer() ? std::to_string(jf.get<std::int64_t>()) : format_real(factor);
  out.result_text = "Zoomed image " + std::to_string(id) + " on " + box.to_string() + " with " + factor_text +
                    "x magnification.";
  return out;
}

ToolOutcome run_edges(const Session& session, const protocol::ToolCallSpec& call, const PerceptionBackend&) {
  check_known_args(call, {"image_id"});
  const int id = image_id_arg(session, call);
  ToolOutcome out;
  try {
    out.new_images.push_back(imaging::scharr_edge_map(*session.images[id]));
  } catch (const std::invalid_argument& e) {
    throw ArgError{ToolError::BadArguments, e.what()};
  }
  out.result_text = "The edge map for image " + std::to_string(id) + ".";
  return out;
}

ToolOutcome run_depth(const Session& session, const protocol::ToolCallSpec& call,
                      const PerceptionBackend& backend) {
  check_known_args(call, {"image_id"});
  const int id = image_id_arg(session, call);
  auto field = backend.depth(*session.images[id], scene_for(session, id));
  if (!field) {
    throw ArgError{ToolError::BackendUnavailable,
                   "depth estimation is not available for image " + std::to_string(id)};
  }
  ToolOutcome out;
  out.new_images.push_back(imaging::colorize_depth(*field));
  out.result_text = "The colored depth map for image " + std::to_string(id) + ".";
  return out;
}

ToolRegistry make_default_registry() {
  ToolRegistry r;
  r.add(std::string(kObjectDetection), run_detection);
  r.add(std::string(kZoomIn), run_zoom);
  r.add(std::string(kEdgeDetection), run_edges);
  r.add(std::string(kDepthEstimation), run_depth);
  return r;
}

}  // namespace

const ToolRegistry& default_registry() {
  static const ToolRegistry registry = make_default_registry();
  return registry;
}

ToolOutcome execute_tool(Session& session, const protocol::ToolCallSpec& call,
                         const PerceptionBackend& backend, const ToolRegistry& registry) {
  const auto* handler = registry.find(call.name);
  if (handler == nullptr) return error_outcome(ToolError::UnknownTool, "unknown tool '" + call.name + "'");
  ToolOutcome out;
  try {
    out = (*handler)(session, call, backend);
  } catch (const ArgError& e) {
    return error_outcome(e.kind, e.message);
  }
  for (const auto& img : out.new_images) session.images.push_back(std::make_shared<const imaging::Image>(img));
  return out;
}

nlohmann::json tool_descriptors() {
  using nlohmann::json;
  const json image_id = {{"type", "integer"}, {"minimum", 0}, {"required", true}};
  return json{
      {"version", 1},
      {"tools",
       json::array({
           json{{"name", kObjectDetection},
                {"description", "Locate instances of the named object classes in an image."},
                {"arguments",
                 {{"image_id", image_id},
                  {"objects", {{"type", "array"}, {"items", "string"}, {"min_items", 1}, {"required", true}}}}},
                {"output", {{"images", "annotated copy when at least one object is found"}, {"text", "detections"}}}},
           json{{"name", kZoomIn},
                {"description", "Crop a pixel region and magnify it with nearest-neighbor sampling."},
                {"arguments",
                 {{"image_id", image_id},
                  {"bbox", {{"type", "array"}, {"items", "integer"}, {"length", 4}, {"required", true}}},
                  {"factor", {{"type", "number"}, {"minimum", 1}, {"maximum", 8}, {"required", true}}}}},
                {"output", {{"images", "cropped and magnified region"}, {"text", "confirmation"}}}},
           json{{"name", kEdgeDetection},
                {"description", "Scharr gradient-magnitude edge map."},
                {"arguments", {{"image_id", image_id}}},
                {"output", {{"images", "edge map"}, {"text", "confirmation"}}}},
           json{{"name", kDepthEstimation},
                {"description", "Per-pixel depth rendered as a colormap, warmer is closer."},
                {"arguments", {{"image_id", image_id}}},
                {"output", {{"images", "colored depth map"}, {"text", "confirmation"}}}},
       })}};
}

}  // namespace toolrl::tools
