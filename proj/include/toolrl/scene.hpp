#pragma once

#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "toolrl/imaging.hpp"

namespace toolrl {

enum class Shape { Square, Circle, Triangle };

std::string_view shape_name(Shape s);
std::optional<Shape> parse_shape(std::string_view name);

struct SceneObject {
  Shape shape = Shape::Square;
  // Detector class name; defaults to the shape name.
  std::string category;
  // Unique within a scene.
  std::string label;
  imaging::Rgb color;
  imaging::BBox box;
  double depth = 1.0;
  // Confidence reported by noiseless mock detection; 0.90 when unset.
  std::optional<double> detect_score;

  friend bool operator==(const SceneObject&, const SceneObject&) = default;
};

// Ground-truth scene graph for the synthetic environment.
struct Scene {
  int width = 64;
  int height = 64;
  double background_depth = 10.0;
  imaging::Rgb background{235, 235, 235};
  std::vector<SceneObject> objects;

  friend bool operator==(const Scene&, const Scene&) = default;
};

// Throws std::invalid_argument when boxes leave the frame, depths are not
// positive, or labels repeat.
void validate_scene(const Scene& scene);

// Whether the pixel (x, y) lies inside the object's silhouette. Integer
// geometry on doubled pixel-center coordinates, so render and depth agree.
bool covers(const SceneObject& obj, int x, int y);

// Objects painted far-to-near; nearer objects win overlaps.
imaging::Image render_scene(const Scene& scene);

void to_json(nlohmann::json& j, const Scene& scene);
void from_json(const nlohmann::json& j, Scene& scene);

}  // namespace toolrl
