#pragma once

#include <chrono>
#include <cstdint>
#include <memory>
#include <string>

#include "toolrl/rollout.hpp"
#include "toolrl/tools.hpp"

namespace toolrl::service {

struct ServiceConfig {
  std::size_t max_image_bytes = 8u << 20;  // per uploaded PNG
  std::chrono::seconds session_ttl{15 * 60};
  tools::NoiseSpec noise;
  std::uint64_t backend_seed = 0;
};

// Tool controller daemon.
//   POST   /v1/sessions                  JSON {"images": [base64 PNG, ...], "scene": {...}?}
//                                         or a raw image/png body
//   POST   /v1/sessions/{id}/execute     {"name": ..., "arguments": {...}}
//   GET    /v1/sessions/{id}/images/{n}  image/png
//   DELETE /v1/sessions/{id}
//   GET    /v1/tools                     tool descriptors
//   GET    /healthz
class ToolServer {
 public:
  explicit ToolServer(ServiceConfig cfg = {});
  ~ToolServer();
  ToolServer(const ToolServer&) = delete;
  ToolServer& operator=(const ToolServer&) = delete;

  // Binds (port 0 picks a free port) and serves on a background thread.
  // Returns the bound port.
  int start(const std::string& host = "127.0.0.1", int port = 0);
  // Binds and serves on the calling thread until stop() is called.
  void serve(const std::string& host, int port);
  void stop();

  std::size_t session_count() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// Policy served over HTTP. POST {base_url}/v1/generate with
//   {"task_id", "turn_index", "max_turns", "max_tokens", "seed", "turns": [{"role", "text", "image_ids"}],
//    "images": [base64 PNG, indexed by image id]}
// expecting {"text": "..."}. Transport failures and non-200 replies throw,
// which the rollout engine records as PolicyAbort.
class RemotePolicy final : public rollout::Policy {
 public:
  explicit RemotePolicy(std::string base_url, int timeout_seconds = 60);
  std::string generate(const rollout::PolicyContext& ctx, int max_tokens, std::uint64_t seed) const override;

 private:
  std::string base_url_;
  int timeout_seconds_;
};

}  // namespace toolrl::service
