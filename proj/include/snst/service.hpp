#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "snst/edit.hpp"
#include "snst/network.hpp"
#include "snst/upsample.hpp"

namespace httplib {
class Server;
}

namespace snst {

struct ServiceConfig {
  std::filesystem::path models_dir;
  int preview_cap = 1024;                  // long side of session images
  std::size_t max_pixels = 25'000'000;     // uploads above this are rejected (413)
  std::optional<std::string> upsample_endpoint;
  std::filesystem::path work_dir;          // export results
  std::size_t level_budget_bytes = kDefaultLevelBudgetBytes;
};

// Key under which a session's precomputed levels are valid.
struct LevelCacheKey {
  std::string content_hash;
  std::string style_id;
  double lambda_i = 0.0;
  double tau = 0.0;
  std::vector<double> levels;
  friend bool operator==(const LevelCacheKey&, const LevelCacheKey&) = default;
};

struct EditSession {
  std::string id;
  ImagePlane content;  // at preview resolution
  std::string content_hash;
  std::optional<std::string> style_id;
  StrokeParams params;
  std::optional<LevelMask> mask;
  std::optional<LevelSet> levels;
  std::optional<LevelCacheKey> levels_key;
  std::optional<ImagePlane> final_render;
  std::chrono::system_clock::time_point created;
  std::chrono::system_clock::time_point updated;
  std::mutex mu;  // one writer per session
};

// HTTP API (docs/api.md). Routes are attached to a caller-owned server so
// tests can run the service in-process.
class EditService {
 public:
  explicit EditService(ServiceConfig config);
  ~EditService();

  void attach(httplib::Server& server);
  // Blocking; returns when the server stops.
  void listen(const std::string& host, int port);

  const ServiceConfig& config() const { return config_; }
  std::vector<std::string> style_ids() const;

 private:
  struct Style {
    std::string id;
    nlohmann::json meta;
    std::shared_ptr<const StyleModel> model;
  };

  std::shared_ptr<EditSession> session(const std::string& id);
  const Style& style(const std::string& id) const;

  ServiceConfig config_;
  std::map<std::string, Style> styles_;  // read-only after construction
  std::mutex sessions_mu_;
  std::map<std::string, std::shared_ptr<EditSession>> sessions_;
  std::uint64_t session_counter_ = 0;
  std::unique_ptr<UpsampleGateway> gateway_;
  friend struct ServiceRoutes;
};

// Maps the error taxonomy onto HTTP status codes.
int http_status_for(ErrorKind kind) noexcept;

}  // namespace snst
