#pragma once

#include "gproc/geometry.hpp"

#include <json.hpp>

#include <chrono>
#include <filesystem>
#include <memory>
#include <string>
#include <string_view>

namespace gproc {

/// Lowercase hex SHA-256 of `data`.
std::string sha256_hex(std::string_view data);

/// An error with an HTTP status and a short machine-readable code.
class ServiceError : public Error {
 public:
  ServiceError(int status, std::string code, const std::string& message)
      : Error(message), status_(status), code_(std::move(code)) {}
  int status() const { return status_; }
  const std::string& code() const { return code_; }

 private:
  int status_;
  std::string code_;
};

/// {"error": {"code": ..., "message": ...}}
nlohmann::ordered_json error_json(const std::string& code, const std::string& message);

struct ServiceOptions {
  std::filesystem::path dataDir;
  int workers = 0;                               // 0 = one per CPU
  std::size_t maxUpload = 256ull * 1024 * 1024;  // bytes
  int rangeSamples = 12;                         // f samples for a model's value range
};

/// Model and job store with an optimization worker pool. Files live under the
/// data directory next to one JSON index; models are named by content hash. Jobs left queued or running by a previous process
/// are queued again on construction.
class Service {
 public:
  explicit Service(ServiceOptions options);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  nlohmann::ordered_json config() const;

  /// Stores an uploaded OBJ, PLY or XYZ file; the format comes from the file name.
  nlohmann::ordered_json add_model(const std::string& bytes, const std::string& filename);
  nlohmann::ordered_json model(const std::string& id) const;
  nlohmann::ordered_json models() const;
  /// Parameter bounds and defaults plus the sampled range of each grammar value.
  nlohmann::ordered_json model_config(const std::string& id);

  /// {modelId, target, weights?, ranges?, epsilon?, budget?, seed?, warmFrom?, theta?} -> {jobId}
  nlohmann::ordered_json create_job(const nlohmann::ordered_json& request);
  nlohmann::ordered_json job(const std::string& id) const;
  nlohmann::ordered_json jobs() const;
  /// New job on the same model warm-started from `id`'s best parameters.
  nlohmann::ordered_json refine(const std::string& id, const nlohmann::ordered_json& request);
  nlohmann::ordered_json cancel(const std::string& id);
  /// {modelId, samples?, seed?, budgetPerSample?} -> candidates, each stored as a finished job.
  nlohmann::ordered_json suggest(const nlohmann::ordered_json& request);

  /// Grammar JSON text; 409 while the job has no grammar.
  std::string grammar(const std::string& id) const;
  /// A geometry sidecar referenced by the job's grammar.
  std::string grammar_file(const std::string& id, const std::string& name) const;
  /// Colour-coded derivation: OBJ referencing "preview.mtl" for meshes, PLY with colours for clouds.
  std::pair<std::string, std::string> preview(const std::string& id) const;  // body, content type
  std::string preview_mtl(const std::string& id) const;

  /// Waits until the job reaches a terminal status; false on timeout.
  bool wait(const std::string& id, std::chrono::milliseconds timeout) const;
  /// Stops the workers; running jobs are left queued for the next start.
  void shutdown();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// HTTP front end for a Service.
class HttpServer {
 public:
  HttpServer(Service& service, std::size_t maxUpload = 256ull * 1024 * 1024);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  /// Binds `host:port` (port 0 picks a free port) and returns the bound port.
  /// Throws Error when the port is busy.
  int bind(const std::string& host, int port);
  /// Serves until stop(); blocking.
  void listen();
  /// listen() on a background thread.
  void start();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace gproc
