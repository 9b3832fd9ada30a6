#pragma once

#include <cstddef>
#include <map>
#include <memory>
#include <shared_mutex>
#include <string>

#include "cx/error.hpp"
#include "cx/store.hpp"
#include "json.hpp"

namespace cx {

struct ServiceRequest {
  std::string method;
  /// Path including the /api prefix, without the query string.
  std::string path;
  std::map<std::string, std::string> query;
  std::string body;
};

struct ServiceResponse {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;

  nlohmann::json json() const { return nlohmann::json::parse(body); }
};

struct ServiceOptions {
  /// Largest member set a re-optimizing drill-down may lay out.
  std::size_t drilldown_budget = 50000;
  std::size_t neighbor_count = 10;
};

/// HTTP status for an error code: bad input 4xx, missing 404, faults 5xx.
int http_status(ErrorCode code);

/// Read-mostly API over one loaded artifact. `handle` is safe to call
/// concurrently; annotation writes are serialized behind a writer lock.
class ExplorerService {
 public:
  explicit ExplorerService(std::shared_ptr<ExplorerArtifact> artifact, ServiceOptions options = {});

  ServiceResponse handle(const ServiceRequest& request);

  bool loaded() const { return artifact_ != nullptr; }

 private:
  nlohmann::json hierarchy_meta() const;
  nlohmann::json level_points(std::size_t level) const;
  std::string level_points_binary(std::size_t level) const;
  nlohmann::json feature_detail(std::uint64_t feature_id) const;
  nlohmann::json drilldown(const nlohmann::json& body) const;
  nlohmann::json search(const nlohmann::json& body) const;
  nlohmann::json outliers(const std::map<std::string, std::string>& query) const;
  nlohmann::json region_size_table(const std::map<std::string, std::string>& query) const;
  nlohmann::json duplicates(const std::map<std::string, std::string>& query) const;
  nlohmann::json annotations(const std::map<std::string, std::string>& query) const;
  nlohmann::json post_annotation(const nlohmann::json& body);

  const ExplorerArtifact& artifact() const;
  std::size_t parse_level(const std::string& text) const;

  std::shared_ptr<ExplorerArtifact> artifact_;
  ServiceOptions options_;
  mutable std::shared_mutex annotations_mutex_;
};

/// HTTP front end for an ExplorerService. Routes GET/POST /api/* to `handle`.
class ApiServer {
 public:
  explicit ApiServer(ExplorerService& service);
  ~ApiServer();
  ApiServer(const ApiServer&) = delete;
  ApiServer& operator=(const ApiServer&) = delete;

  /// Binds host:port (port 0 picks a free port) and returns the bound port.
  int bind(const std::string& host, int port);
  /// Serves until stop() is called.
  void run();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace cx
