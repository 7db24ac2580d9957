#pragma once

// Inference service: model registry over a checkpoint directory, a bounded
// single-lane inference queue, a SQLite session store and the JSON request
// handlers. `StampService::handle` is transport-independent; `serve` binds
// it to HTTP.

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>

#include <nlohmann/json.hpp>

#include "stamps/checkpoint.hpp"
#include "stamps/codec.hpp"
#include "stamps/domain.hpp"
#include "stamps/errors.hpp"
#include "stamps/mask_gan.hpp"
#include "stamps/texture_gan.hpp"

struct sqlite3;

namespace stamps {

class QueueFullError : public Error {
 public:
  using Error::Error;
};

/// One worker thread executing jobs in FIFO order. At most `capacity` jobs
/// may wait; further submissions throw QueueFullError.
class InferenceLane {
 public:
  explicit InferenceLane(size_t capacity);
  ~InferenceLane();
  InferenceLane(const InferenceLane&) = delete;
  InferenceLane& operator=(const InferenceLane&) = delete;

  std::future<void> submit(std::function<void()> job);
  size_t pending() const;

 private:
  void run();

  size_t capacity_;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::deque<std::packaged_task<void()>> queue_;
  bool stop_ = false;
  std::thread worker_;
};

struct SessionRecord {
  std::string id;
  std::string endpoint;
  std::string model;
  std::string model_hash;
  nlohmann::json request;  // with every latent and seed filled in
  nlohmann::json hashes;   // image name -> sha256 of the PNG bytes
  double created = 0;      // unix seconds
};

/// Single-file session store keyed by content hash.
class SessionStore {
 public:
  /// ":memory:" gives a private in-memory database.
  explicit SessionStore(const std::string& path);
  ~SessionStore();
  SessionStore(const SessionStore&) = delete;
  SessionStore& operator=(const SessionStore&) = delete;

  void put(const SessionRecord& record);
  std::optional<SessionRecord> get(const std::string& id) const;
  void put_blob(const std::string& hash, const Bytes& bytes);
  std::optional<Bytes> get_blob(const std::string& hash) const;
  int64_t count() const;

 private:
  sqlite3* db_ = nullptr;
  mutable std::mutex mu_;
};

struct ServiceConfig {
  std::filesystem::path model_dir;
  std::string device = "cpu";
  std::string session_db = ":memory:";
  std::filesystem::path static_dir;
  size_t queue_capacity = 16;
  /// Load checkpoints on a background thread (requests answer 503 meanwhile).
  bool async_load = true;
  /// When false, models stay in the loading state until `load_models()`.
  bool load_on_start = true;

  /// MODEL_DIR, DEVICE, SESSION_DB and STATIC_DIR override the defaults.
  static ServiceConfig from_env();
};

struct ServiceResponse {
  int status = 200;
  nlohmann::json body;
};

class StampService {
 public:
  explicit StampService(ServiceConfig config);
  ~StampService();

  /// Loads every registered checkpoint; called by the constructor unless
  /// `load_on_start` is off.
  void load_models();
  /// Blocks until every model has finished loading (or failed to).
  void wait_until_loaded();

  /// Routes one request. Never throws; errors become 4xx/5xx responses with
  /// {"error": message}.
  ServiceResponse handle(const std::string& method, const std::string& path, const std::string& body);

  ServiceResponse stamp(const nlohmann::json& request);
  ServiceResponse retexture(const nlohmann::json& request);
  ServiceResponse insert(const nlohmann::json& request);
  ServiceResponse interpolate(const nlohmann::json& request);
  ServiceResponse models() const;
  ServiceResponse health() const;
  ServiceResponse session(const std::string& id) const;
  ServiceResponse replay(const std::string& id);

  const ServiceConfig& config() const { return config_; }
  InferenceLane& lane() { return lane_; }
  SessionStore& sessions() { return sessions_; }

 private:
  struct Model;
  std::shared_ptr<Model> model_for(const nlohmann::json& request) const;
  ServiceResponse run(const std::string& endpoint, const nlohmann::json& request);
  nlohmann::json run_inference(const std::string& endpoint, Model& model, nlohmann::json& request);

  ServiceConfig config_;
  std::map<std::string, std::shared_ptr<Model>> models_;
  mutable std::mutex models_mu_;
  std::condition_variable loaded_cv_;
  bool loading_done_ = false;
  std::thread loader_;
  SessionStore sessions_;
  InferenceLane lane_;
};

/// HTTP binding. Static files under `config.static_dir` are mounted at "/".
class HttpFrontend {
 public:
  explicit HttpFrontend(StampService& service);
  ~HttpFrontend();
  HttpFrontend(const HttpFrontend&) = delete;
  HttpFrontend& operator=(const HttpFrontend&) = delete;

  /// Binds to `port` (0 picks a free one) and returns the bound port.
  int bind(const std::string& host, int port);
  /// Serves on the bound socket until `stop()`.
  void listen();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Binds and serves until the process is stopped.
void serve(StampService& service, const std::string& host, int port);

}  // namespace stamps
