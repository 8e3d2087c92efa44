#include "toolrl/service.hpp"

#include <atomic>
#include <cstdio>
#include <map>
#include <mutex>
#include <random>
#include <stdexcept>
#include <thread>

#include "httplib.h"
#include "json.hpp"
#include "toolrl/common.hpp"
#include "toolrl/protocol.hpp"

namespace toolrl::service {

using Clock = std::chrono::steady_clock;
using nlohmann::json;

namespace {

struct Entry {
  std::mutex mu;
  tools::Session session;
  std::chrono::system_clock::time_point created_at;
  Clock::time_point last_used;
};

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& message) {
  send_json(res, status, json{{"error", message}});
}

std::string iso8601(std::chrono::system_clock::time_point t) {
  const std::time_t tt = std::chrono::system_clock::to_time_t(t);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct BadRequest : std::runtime_error {
  int status;
  BadRequest(int s, const std::string& m) : std::runtime_error(m), status(s) {}
};

}  // namespace

struct ToolServer::Impl {
  ServiceConfig cfg;
  tools::MockBackend backend;
  httplib::Server server;
  std::thread thread;

  mutable std::mutex store_mu;
  std::map<std::string, std::shared_ptr<Entry>> sessions;
  std::atomic<std::uint64_t> counter{0};
  std::uint64_t nonce;

  explicit Impl(ServiceConfig c) : cfg(c), backend(c.noise, c.backend_seed), nonce(std::random_device{}()) {
    server.set_payload_max_length(64u * cfg.max_image_bytes + (1u << 20));
    server.new_task_queue = [] { return new httplib::ThreadPool(32); };
    routes();
  }

  std::string new_id() {
    char buf[24];
    std::snprintf(buf, sizeof(buf), "s%016llx",
                  static_cast<unsigned long long>(mix_seed(nonce, counter.fetch_add(1))));
    return buf;
  }

  void sweep() {
    const auto now = Clock::now();
    std::lock_guard<std::mutex> lock(store_mu);
    for (auto it = sessions.begin(); it != sessions.end();) {
      if (now - it->second->last_used > cfg.session_ttl) {
        it = sessions.erase(it);
      } else {
        ++it;
      }
    }
  }

  std::shared_ptr<Entry> find(const std::string& id) {
    std::lock_guard<std::mutex> lock(store_mu);
    const auto it = sessions.find(id);
    if (it == sessions.end()) return nullptr;
    if (Clock::now() - it->second->last_used > cfg.session_ttl) {
      sessions.erase(it);
      return nullptr;
    }
    return it->second;
  }

  imaging::Image decode_upload(const std::vector<std::uint8_t>& png, std::size_t index) {
    if (png.size() > cfg.max_image_bytes) {
      throw BadRequest(413, "image " + std::to_string(index) + " exceeds " + std::to_string(cfg.max_image_bytes) +
                                " bytes");
    }
    try {
      return imaging::decode_png(png);
    } catch (const std::exception& e) {
      throw BadRequest(400, "image " + std::to_string(index) + " is not a decodable PNG: " + e.what());
    }
  }

  void create(const httplib::Request& req, httplib::Response& res) {
    sweep();
    std::vector<imaging::Image> images;
    std::optional<Scene> scene;
    try {
      const std::string type = req.get_header_value("Content-Type");
      if (starts_with(type, "image/png")) {
        images.push_back(decode_upload(std::vector<std::uint8_t>(req.body.begin(), req.body.end()), 0));
      } else {
        json body;
        try {
          body = json::parse(req.body);
        } catch (const json::exception&) {
          throw BadRequest(400, "body must be JSON or image/png");
        }
        if (!body.is_object() || !body.contains("images") || !body["images"].is_array()) {
          throw BadRequest(400, "expected {\"images\": [base64 PNG, ...]}");
        }
        std::size_t i = 0;
        for (const auto& b64 : body["images"]) {
          if (!b64.is_string()) throw BadRequest(400, "image " + std::to_string(i) + " must be a base64 string");
          std::vector<std::uint8_t> png;
          try {
            png = base64_decode(b64.get<std::string>());
          } catch (const std::exception&) {
            throw BadRequest(400, "image " + std::to_string(i) + " is not valid base64");
          }
          images.push_back(decode_upload(png, i));
          ++i;
        }
        if (body.contains("scene") && !body["scene"].is_null()) {
          try {
            Scene s;
            from_json(body["scene"], s);
            validate_scene(s);
            scene = s;
          } catch (const std::exception& e) {
            throw BadRequest(400, std::string("invalid scene: ") + e.what());
          }
        }
      }
      if (images.empty()) throw BadRequest(400, "at least one image is required");
      if (scene && (scene->width != images[0].width() || scene->height != images[0].height())) {
        throw BadRequest(400, "scene size does not match image 0");
      }
    } catch (const BadRequest& e) {
      send_error(res, e.status, e.what());
      return;
    }
    auto entry = std::make_shared<Entry>();
    const std::string id = new_id();
    entry->session = tools::Session::from_images(id, std::move(images), std::move(scene));
    entry->created_at = std::chrono::system_clock::now();
    entry->last_used = Clock::now();
    const std::size_t n = entry->session.images.size();
    {
      std::lock_guard<std::mutex> lock(store_mu);
      sessions[id] = entry;
    }
    json ids = json::array();
    for (std::size_t i = 0; i < n; ++i) ids.push_back(i);
    send_json(res, 201,
              json{{"session_id", id}, {"created_at", iso8601(entry->created_at)}, {"image_count", n}, {"image_ids", ids}});
  }

  void execute(const httplib::Request& req, httplib::Response& res) {
    const auto entry = find(req.path_params.at("id"));
    if (!entry) return send_error(res, 404, "unknown session");
    const auto parsed = protocol::parse_tool_call_json(req.body);
    if (const auto* err = std::get_if<std::string>(&parsed)) return send_error(res, 400, "bad tool call: " + *err);
    const auto& call = std::get<protocol::ToolCallSpec>(parsed);
    std::lock_guard<std::mutex> lock(entry->mu);
    const std::size_t before = entry->session.images.size();
    const auto outcome = tools::execute_tool(entry->session, call, backend);
    entry->last_used = Clock::now();
    json ids = json::array();
    for (std::size_t i = before; i < entry->session.images.size(); ++i) ids.push_back(i);
    send_json(res, 200, json{{"result_text", outcome.result_text}, {"new_image_ids", ids}});
  }

  void get_image(const httplib::Request& req, httplib::Response& res) {
    const auto entry = find(req.path_params.at("id"));
    if (!entry) return send_error(res, 404, "unknown session");
    const std::string& n_text = req.path_params.at("n");
    std::size_t n = 0, pos = 0;
    try {
      n = std::stoul(n_text, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    ImagePtr img;
    {
      std::lock_guard<std::mutex> lock(entry->mu);
      entry->last_used = Clock::now();
      if (pos == n_text.size() && pos > 0 && n < entry->session.images.size()) img = entry->session.images[n];
    }
    if (!img) return send_error(res, 404, "unknown image id " + n_text);
    const auto png = imaging::encode_png(*img);
    res.status = 200;
    res.set_content(std::string(png.begin(), png.end()), "image/png");
  }

  void remove(const httplib::Request& req, httplib::Response& res) {
    std::lock_guard<std::mutex> lock(store_mu);
    if (sessions.erase(req.path_params.at("id")) == 0) return send_error(res, 404, "unknown session");
    res.status = 204;
  }

  void routes() {
    server.Post("/v1/sessions", [this](const httplib::Request& q, httplib::Response& r) { create(q, r); });
    server.Post("/v1/sessions/:id/execute", [this](const httplib::Request& q, httplib::Response& r) { execute(q, r); });
    server.Get("/v1/sessions/:id/images/:n", [this](const httplib::Request& q, httplib::Response& r) { get_image(q, r); });
    server.Delete("/v1/sessions/:id", [this](const httplib::Request& q, httplib::Response& r) { remove(q, r); });
    server.Get("/v1/tools", [](const httplib::Request&, httplib::Response& r) {
      send_json(r, 200, tools::tool_descriptors());
    });
    server.Get("/healthz", [this](const httplib::Request&, httplib::Response& r) {
      std::size_t n = 0;
      {
        std::lock_guard<std::mutex> lock(store_mu);
        n = sessions.size();
      }
      send_json(r, 200, json{{"status", "ok"}, {"sessions", n}});
    });
    server.set_exception_handler([](const httplib::Request&, httplib::Response& r, std::exception_ptr ep) {
      std::string what = "internal error";
      try {
        std::rethrow_exception(ep);
      } catch (const std::exception& e) {
        what = e.what();
      } catch (...) {
      }
      send_error(r, 500, what);
    });
  }
};

ToolServer::ToolServer(ServiceConfig cfg) : impl_(std::make_unique<Impl>(cfg)) {}

ToolServer::~ToolServer() { stop(); }

int ToolServer::start(const std::string& host, int port) {
  int bound = port;
  if (port == 0) {
    bound = impl_->server.bind_to_any_port(host);
  } else if (!impl_->server.bind_to_port(host, port)) {
    bound = -1;
  }
  if (bound < 0) throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return bound;
}

void ToolServer::serve(const std::string& host, int port) {
  if (!impl_->server.listen(host, port)) throw std::runtime_error("cannot listen on " + host + ":" + std::to_string(port));
}

void ToolServer::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

RemotePolicy::RemotePolicy(std::string base_url, int timeout_seconds)
    : base_url_(std::move(base_url)), timeout_seconds_(timeout_seconds) {}

std::string RemotePolicy::generate(const rollout::PolicyContext& ctx, int max_tokens, std::uint64_t seed) const {
  json turns = json::array();
  for (const auto& t : ctx.trajectory.turns) {
    turns.push_back(json{{"role", role_name(t.role)}, {"text", t.text}, {"image_ids", t.image_ids}});
  }
  json images = json::array();
  for (const auto& img : ctx.trajectory.images) images.push_back(base64_encode(imaging::encode_png(*img)));
  const json body{{"task_id", ctx.trajectory.task_id}, {"turn_index", ctx.turn_index}, {"max_turns", ctx.max_turns},
                  {"max_tokens", max_tokens},         {"seed", seed},                {"turns", turns},
                  {"images", images}};
  httplib::Client client(base_url_);
  client.set_connection_timeout(timeout_seconds_);
  client.set_read_timeout(timeout_seconds_);
  const auto res = client.Post("/v1/generate", body.dump(), "application/json");
  if (!res) throw std::runtime_error("policy server unreachable: " + httplib::to_string(res.error()));
  if (res->status != 200) throw std::runtime_error("policy server returned " + std::to_string(res->status));
  const auto reply = json::parse(res->body);
  if (!reply.contains("text") || !reply["text"].is_string()) throw std::runtime_error("policy reply lacks 'text'");
  return reply["text"].get<std::string>();
}

std::size_t ToolServer::session_count() const {
  std::lock_guard<std::mutex> lock(impl_->store_mu);
  return impl_->sessions.size();
}

}  // namespace toolrl::service
