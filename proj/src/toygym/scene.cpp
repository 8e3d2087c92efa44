#include "toolrl/scene.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <stdexcept>

namespace toolrl {

std::string_view shape_name(Shape s) {
  switch (s) {
    case Shape::Square:
      return "square";
    case Shape::Circle:
      return "circle";
    case Shape::Triangle:
      return "triangle";
  }
  return "square";
}

std::optional<Shape> parse_shape(std::string_view name) {
  if (name == "square") return Shape::Square;
  if (name == "circle") return Shape::Circle;
  if (name == "triangle") return Shape::Triangle;
  return std::nullopt;
}

void validate_scene(const Scene& scene) {
  if (scene.width <= 0 || scene.height <= 0) throw std::invalid_argument("scene: empty frame");
  if (!(scene.background_depth > 0.0) || !std::isfinite(scene.background_depth)) {
    throw std::invalid_argument("scene: background depth must be positive");
  }
  std::set<std::string> labels;
  for (const auto& o : scene.objects) {
    if (!o.box.valid_for(scene.width, scene.height)) {
      throw std::invalid_argument("scene: object " + o.label + " box " + o.box.to_string() +
                                  " is out of bounds");
    }
    if (!(o.depth > 0.0) || !std::isfinite(o.depth)) {
      throw std::invalid_argument("scene: object " + o.label + " has a non-positive depth");
    }
    if (!labels.insert(o.label).second) {
      throw std::invalid_argument("scene: duplicate label " + o.label);
    }
  }
}

bool covers(const SceneObject& obj, int x, int y) {
  const auto& b = obj.box;
  if (x < b.x1 || x >= b.x2 || y < b.y1 || y >= b.y2) return false;
  // Doubled coordinates: pixel centers at odd values, box edges at even ones.
  const std::int64_t px = 2 * x + 1, py = 2 * y + 1;
  const std::int64_t left = 2 * b.x1, right = 2 * b.x2, top = 2 * b.y1, bottom = 2 * b.y2;
  switch (obj.shape) {
    case Shape::Square:
      return true;
    case Shape::Circle: {
      const std::int64_t w = right - left, h = bottom - top;
      const std::int64_t dx = 2 * px - (left + right), dy = 2 * py - (top + bottom);
      return dx * dx * h * h + dy * dy * w * w <= w * w * h * h;
    }
    case Shape::Triangle: {
      // Apex at the top center, base along the bottom edge.
      const std::int64_t ax2 = left + right;  // apex x, doubled again
      const std::int64_t ay = top;
      auto side = [](std::int64_t x0, std::int64_t y0, std::int64_t x1, std::int64_t y1,
                     std::int64_t qx, std::int64_t qy) {
        return (x1 - x0) * (qy - y0) - (y1 - y0) * (qx - x0);
      };
      // Work in 2x coordinates so the apex lands on an integer.
      const std::int64_t qx = 2 * px, qy = 2 * py;
      const std::int64_t s1 = side(ax2, 2 * ay, 2 * left, 2 * bottom, qx, qy);
      const std::int64_t s2 = side(2 * right, 2 * bottom, ax2, 2 * ay, qx, qy);
      return s1 <= 0 && s2 <= 0;
    }
  }
  return false;
}

imaging::Image render_scene(const Scene& scene) {
  imaging::Image img(scene.width, scene.height, scene.background);
  std::vector<std::size_t> order(scene.objects.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scene.objects[a].depth > scene.objects[b].depth;
  });
  for (std::size_t idx : order) {
    const auto& o = scene.objects[idx];
    for (int y = o.box.y1; y < o.box.y2; ++y) {
      for (int x = o.box.x1; x < o.box.x2; ++x) {
        if (covers(o, x, y)) img.set(x, y, o.color);
      }
    }
  }
  return img;
}

void to_json(nlohmann::json& j, const Scene& scene) {
  j = nlohmann::json{{"width", scene.width},
                     {"height", scene.height},
                     {"background_depth", scene.background_depth},
                     {"background", {scene.background.r, scene.background.g, scene.background.b}},
                     {"objects", nlohmann::json::array()}};
  for (const auto& o : scene.objects) {
    nlohmann::json obj{{"shape", shape_name(o.shape)},
                       {"category", o.category},
                       {"label", o.label},
                       {"color", {o.color.r, o.color.g, o.color.b}},
                       {"box", {o.box.x1, o.box.y1, o.box.x2, o.box.y2}},
                       {"depth", o.depth}};
    if (o.detect_score) obj["detect_score"] = *o.detect_score;
    j["objects"].push_back(std::move(obj));
  }
}

void from_json(const nlohmann::json& j, Scene& scene) {
  scene = Scene{};
  scene.width = j.at("width").get<int>();
  scene.height = j.at("height").get<int>();
  scene.background_depth = j.at("background_depth").get<double>();
  if (j.contains("background")) {
    const auto& c = j.at("background");
    scene.background = {c.at(0).get<std::uint8_t>(), c.at(1).get<std::uint8_t>(),
                        c.at(2).get<std::uint8_t>()};
  }
  for (const auto& jo : j.at("objects")) {
    SceneObject o;
    const auto shape = parse_shape(jo.at("shape").get<std::string>());
    if (!shape) throw std::invalid_argument("scene: unknown shape " + jo.at("shape").dump());
    o.shape = *shape;
    o.category = jo.value("category", std::string(shape_name(o.shape)));
    o.label = jo.at("label").get<std::string>();
    const auto& c = jo.at("color");
    o.color = {c.at(0).get<std::uint8_t>(), c.at(1).get<std::uint8_t>(), c.at(2).get<std::uint8_t>()};
    const auto& b = jo.at("box");
    o.box = {b.at(0).get<int>(), b.at(1).get<int>(), b.at(2).get<int>(), b.at(3).get<int>()};
    o.depth = jo.at("depth").get<double>();
    if (jo.contains("detect_score")) o.detect_score = jo.at("detect_score").get<double>();
    scene.objects.push_back(std::move(o));
  }
  validate_scene(scene);
}

}  // namespace toolrl
