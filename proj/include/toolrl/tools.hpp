#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "toolrl/imaging.hpp"
#include "toolrl/protocol.hpp"
#include "toolrl/scene.hpp"
#include "toolrl/trajectory.hpp"

namespace toolrl::tools {

inline constexpr std::string_view kObjectDetection = "object_detection";
inline constexpr std::string_view kZoomIn = "zoom_in";
inline constexpr std::string_view kEdgeDetection = "edge_detection";
inline constexpr std::string_view kDepthEstimation = "depth_estimation";

// Image registry for one rollout. Images are append-only; the scene, when
// present, describes the first `scene_image_count` images.
struct Session {
  std::string session_id;
  std::vector<ImagePtr> images;
  std::optional<Scene> scene;
  int scene_image_count = 0;

  static Session from_images(std::string id, std::vector<imaging::Image> images,
                             std::optional<Scene> scene = std::nullopt);
};

struct Detection {
  std::string label;
  double score = 0.0;
  imaging::BBox box;

  friend bool operator==(const Detection&, const Detection&) = default;
};

enum class ToolError { None, UnknownTool, BadArguments, BadImageId, BackendUnavailable };

struct ToolOutcome {
  std::string result_text;
  std::vector<imaging::Image> new_images;
  std::optional<std::vector<Detection>> detections;
  ToolError error = ToolError::None;
};

struct NoiseSpec {
  double p_miss = 0.0;
  // Probability that a non-matching object is reported under the first query.
  double p_confuse = 0.0;
  int jitter = 0;

  bool noiseless() const { return p_miss == 0.0 && p_confuse == 0.0 && jitter == 0; }
};

// Stand-in for neural perception. nullopt means the backend cannot serve the
// image (e.g. a mock asked about an image with no scene graph).
class PerceptionBackend {
 public:
  virtual ~PerceptionBackend() = default;
  virtual std::optional<std::vector<Detection>> detect(const imaging::Image& image,
                                                       const Scene* scene,
                                                       const std::vector<std::string>& queries) const = 0;
  virtual std::optional<imaging::DepthField> depth(const imaging::Image& image,
                                                   const Scene* scene) const = 0;
};

// Scene-graph backed perception, deterministic per (scene, queries, seed).
class MockBackend final : public PerceptionBackend {
 public:
  explicit MockBackend(NoiseSpec noise = {}, std::uint64_t seed = 0) : noise_(noise), seed_(seed) {}

  std::optional<std::vector<Detection>> detect(const imaging::Image& image, const Scene* scene,
                                               const std::vector<std::string>& queries) const override;
  std::optional<imaging::DepthField> depth(const imaging::Image& image,
                                           const Scene* scene) const override;

  std::uint64_t seed() const { return seed_; }

 private:
  NoiseSpec noise_;
  std::uint64_t seed_;
};

// Lowercase, then fold a plural suffix ("squares" -> "square", "boxes" -> "box").
std::string fold_label(std::string_view label);

std::vector<Detection> mock_detect(const Scene& scene, const std::vector<std::string>& queries,
                                   const NoiseSpec& noise, std::uint64_t seed);
imaging::DepthField mock_depth(const Scene& scene);

// "Detected 2 object(s) in image 0: 1. square(0.90): [..] 2. ..." or the
// no-match sentence. Queries are joined as "a. b." in the no-match case.
std::string render_detection_result(int image_id, const std::vector<std::string>& queries,
                                    const std::vector<Detection>& dets);

class ToolRegistry {
 public:
  using Handler = std::function<ToolOutcome(const Session&, const protocol::ToolCallSpec&,
                                            const PerceptionBackend&)>;

  void add(std::string name, Handler handler);
  bool contains(const std::string& name) const { return handlers_.count(name) > 0; }
  std::vector<std::string> names() const;
  const Handler* find(const std::string& name) const;

 private:
  std::map<std::string, Handler> handlers_;
};

// The four visual tools.
const ToolRegistry& default_registry();

// Runs the call and appends produced images to the session. Tool failures are
// returned as "Error: ..." outcomes, never thrown.
ToolOutcome execute_tool(Session& session, const protocol::ToolCallSpec& call,
                         const PerceptionBackend& backend,
                         const ToolRegistry& registry = default_registry());

// Machine-readable argument schemas for every tool.
nlohmann::json tool_descriptors();

}  // namespace toolrl::tools
