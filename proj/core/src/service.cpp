#include "stamps/service.hpp"

#include <chrono>
#include <cstdlib>
#include <random>

#include <sqlite3.h>

#include "stamps/codec.hpp"
#include "stamps/errors.hpp"
#include "stamps/image_io.hpp"
#include "stamps/nn_blocks.hpp"

namespace stamps {

using nlohmann::json;

// Inference lane -------------------------------------------------------------------

InferenceLane::InferenceLane(size_t capacity) : capacity_(capacity) {
  if (capacity_ == 0) throw ConfigError("inference queue capacity must be >= 1");
  worker_ = std::thread([this] { run(); });
}

InferenceLane::~InferenceLane() {
  {
    std::lock_guard lock(mu_);
    stop_ = true;
  }
  cv_.notify_all();
  if (worker_.joinable()) worker_.join();
}

std::future<void> InferenceLane::submit(std::function<void()> job) {
  std::packaged_task<void()> task(std::move(job));
  auto fut = task.get_future();
  {
    std::lock_guard lock(mu_);
    if (queue_.size() >= capacity_) throw QueueFullError("inference queue is full");
    queue_.push_back(std::move(task));
  }
  cv_.notify_one();
  return fut;
}

size_t InferenceLane::pending() const {
  std::lock_guard lock(mu_);
  return queue_.size();
}

void InferenceLane::run() {
  for (;;) {
    std::packaged_task<void()> task;
    {
      std::unique_lock lock(mu_);
      cv_.wait(lock, [this] { return stop_ || !queue_.empty(); });
      if (queue_.empty()) return;
      task = std::move(queue_.front());
      queue_.pop_front();
    }
    task();
  }
}

// Session store --------------------------------------------------------------------

namespace {

class Statement {
 public:
  Statement(sqlite3* db, const char* sql) {
    if (sqlite3_prepare_v2(db, sql, -1, &stmt_, nullptr) != SQLITE_OK) {
      throw Error(std::string("sqlite: ") + sqlite3_errmsg(db));
    }
  }
  ~Statement() { sqlite3_finalize(stmt_); }
  Statement(const Statement&) = delete;
  Statement& operator=(const Statement&) = delete;

  void bind(int i, const std::string& s) { sqlite3_bind_text(stmt_, i, s.c_str(), -1, SQLITE_TRANSIENT); }
  void bind(int i, double v) { sqlite3_bind_double(stmt_, i, v); }
  void bind_blob(int i, const Bytes& b) {
    sqlite3_bind_blob(stmt_, i, b.data(), static_cast<int>(b.size()), SQLITE_TRANSIENT);
  }
  int step() { return sqlite3_step(stmt_); }
  std::string text(int col) const {
    const auto* p = sqlite3_column_text(stmt_, col);
    return p == nullptr ? std::string() : std::string(reinterpret_cast<const char*>(p));
  }
  double real(int col) const { return sqlite3_column_double(stmt_, col); }
  int64_t integer(int col) const { return sqlite3_column_int64(stmt_, col); }
  Bytes blob(int col) const {
    const auto* p = static_cast<const std::uint8_t*>(sqlite3_column_blob(stmt_, col));
    return Bytes(p, p + sqlite3_column_bytes(stmt_, col));
  }

 private:
  sqlite3_stmt* stmt_ = nullptr;
};

void exec(sqlite3* db, const char* sql) {
  char* err = nullptr;
  if (sqlite3_exec(db, sql, nullptr, nullptr, &err) != SQLITE_OK) {
    std::string msg = err != nullptr ? err : "unknown error";
    sqlite3_free(err);
    throw Error("sqlite: " + msg);
  }
}

}  // namespace

SessionStore::SessionStore(const std::string& path) {
  if (sqlite3_open(path.c_str(), &db_) != SQLITE_OK) {
    std::string msg = sqlite3_errmsg(db_);
    sqlite3_close(db_);
    throw Error("cannot open session store " + path + ": " + msg);
  }
  exec(db_,
       "CREATE TABLE IF NOT EXISTS sessions (id TEXT PRIMARY KEY, endpoint TEXT, model TEXT, "
       "model_hash TEXT, request TEXT, hashes TEXT, created REAL);"
       "CREATE TABLE IF NOT EXISTS blobs (hash TEXT PRIMARY KEY, data BLOB);");
}

SessionStore::~SessionStore() { sqlite3_close(db_); }

void SessionStore::put(const SessionRecord& r) {
  std::lock_guard lock(mu_);
  Statement st(db_,
               "INSERT OR IGNORE INTO sessions (id, endpoint, model, model_hash, request, hashes, created) "
               "VALUES (?, ?, ?, ?, ?, ?, ?)");
  st.bind(1, r.id);
  st.bind(2, r.endpoint);
  st.bind(3, r.model);
  st.bind(4, r.model_hash);
  st.bind(5, r.request.dump());
  st.bind(6, r.hashes.dump());
  st.bind(7, r.created);
  if (st.step() != SQLITE_DONE) throw Error(std::string("sqlite: ") + sqlite3_errmsg(db_));
}

std::optional<SessionRecord> SessionStore::get(const std::string& id) const {
  std::lock_guard lock(mu_);
  Statement st(db_,
               "SELECT id, endpoint, model, model_hash, request, hashes, created FROM sessions WHERE id = ?");
  st.bind(1, id);
  if (st.step() != SQLITE_ROW) return std::nullopt;
  SessionRecord r;
  r.id = st.text(0);
  r.endpoint = st.text(1);
  r.model = st.text(2);
  r.model_hash = st.text(3);
  r.request = json::parse(st.text(4));
  r.hashes = json::parse(st.text(5));
  r.created = st.real(6);
  return r;
}

void SessionStore::put_blob(const std::string& hash, const Bytes& bytes) {
  std::lock_guard lock(mu_);
  Statement st(db_, "INSERT OR IGNORE INTO blobs (hash, data) VALUES (?, ?)");
  st.bind(1, hash);
  st.bind_blob(2, bytes);
  if (st.step() != SQLITE_DONE) throw Error(std::string("sqlite: ") + sqlite3_errmsg(db_));
}

std::optional<Bytes> SessionStore::get_blob(const std::string& hash) const {
  std::lock_guard lock(mu_);
  Statement st(db_, "SELECT data FROM blobs WHERE hash = ?");
  st.bind(1, hash);
  if (st.step() != SQLITE_ROW) return std::nullopt;
  return st.blob(0);
}

int64_t SessionStore::count() const {
  std::lock_guard lock(mu_);
  Statement st(db_, "SELECT COUNT(*) FROM sessions");
  st.step();
  return st.integer(0);
}

// Config ------------------------------------------------------------------------------

ServiceConfig ServiceConfig::from_env() {
  ServiceConfig c;
  auto env = [](const char* name) -> std::optional<std::string> {
    const char* v = std::getenv(name);
    if (v == nullptr || *v == '\0') return std::nullopt;
    return std::string(v);
  };
  c.model_dir = env("MODEL_DIR").value_or("models");
  c.device = env("DEVICE").value_or("cpu");
  c.session_db = env("SESSION_DB").value_or("sessions.sqlite");
  c.static_dir = env("STATIC_DIR").value_or("web");
  return c;
}

// Service -----------------------------------------------------------------------------

namespace {

struct HttpError : std::runtime_error {
  HttpError(int status, const std::string& msg) : std::runtime_error(msg), status(status) {}
  int status;
};

enum class ModelState { kLoading, kReady, kFailed };

constexpr uint64_t kMaxSeed = (uint64_t{1} << 53) - 1;  // exact in JSON doubles

uint64_t fresh_seed() {
  std::random_device rd;
  const uint64_t hi = rd();
  const uint64_t lo = rd();
  return ((hi << 32) | lo) & kMaxSeed;
}

const json& field(const json& req, const char* key) {
  if (!req.contains(key)) throw HttpError(422, std::string("missing field '") + key + "'");
  return req.at(key);
}

Bytes b64_field(const json& req, const char* key) {
  const auto& v = field(req, key);
  if (!v.is_string()) throw HttpError(422, std::string("field '") + key + "' must be a base64 string");
  try {
    return base64_decode(v.get<std::string>());
  } catch (const FormatError& e) {
    throw HttpError(422, std::string("field '") + key + "': " + e.what());
  }
}

uint64_t seed_of(json& req) {
  if (!req.contains("seed") || req["seed"].is_null()) req["seed"] = fresh_seed();
  const auto& s = req["seed"];
  if (!s.is_number_unsigned() && !(s.is_number_integer() && s.get<int64_t>() >= 0)) {
    throw HttpError(422, "seed must be a non-negative integer");
  }
  return s.get<uint64_t>();
}

LatentVector latent_of(json& req, const char* key, int64_t dim, at::Generator& gen) {
  if (!req.contains(key) || req[key].is_null()) {
    auto z = LatentVector::from(torch::randn({dim}, gen, torch::TensorOptions().dtype(torch::kFloat32)));
    req[key] = z.to_vector();
    return z;
  }
  const auto& v = req[key];
  if (!v.is_array()) throw HttpError(422, std::string(key) + " must be an array of numbers");
  auto z = LatentVector::from(v.get<std::vector<double>>());
  if (z.dim() != dim) {
    throw HttpError(422, std::string(key) + " has dimension " + std::to_string(z.dim()) +
                             ", model expects " + std::to_string(dim));
  }
  return z;
}

BoundingBox bbox_of(const json& req, int64_t size) {
  const auto& v = field(req, "bbox");
  if (!v.is_array() || v.size() != 4) throw HttpError(422, "bbox must be [x1, y1, x2, y2]");
  std::array<double, 4> vec{};
  for (size_t k = 0; k < 4; ++k) {
    if (!v[k].is_number()) throw HttpError(422, "bbox entries must be numbers");
    vec[k] = v[k].get<double>();
  }
  try {
    return make_bbox(vec, size, size);
  } catch (const InvalidBoxError& e) {
    throw HttpError(422, std::string("invalid bbox: ") + e.what());
  }
}

ImageTensor image_of(const json& req, const char* key, int64_t size) {
  const auto bytes = b64_field(req, key);
  try {
    return decode_image(bytes, size);
  } catch (const FormatError& e) {
    throw HttpError(422, std::string("field '") + key + "': " + e.what());
  }
}

/// A latent blended as (1 - a) * from + a * to, so both endpoints are exact.
LatentVector lerp(const LatentVector& from, const LatentVector& to, double a) {
  const auto f = from.to_vector();
  const auto t = to.to_vector();
  std::vector<double> out(f.size());
  for (size_t k = 0; k < f.size(); ++k) out[k] = (1.0 - a) * f[k] + a * t[k];
  return LatentVector::from(out);
}

}  // namespace

struct StampService::Model {
  CheckpointInfo info;
  ModelState state = ModelState::kLoading;
  std::string error;
  std::optional<MaskGanBundle> mask;
  std::optional<TextureGanBundle> texture;
};

StampService::StampService(ServiceConfig config)
    : config_(std::move(config)), sessions_(config_.session_db), lane_(config_.queue_capacity) {
  if (config_.device != "cpu") {
    throw ConfigError("device '" + config_.device + "' is not supported by this build (use cpu)");
  }
  std::vector<std::filesystem::path> files;
  if (!config_.model_dir.empty() && std::filesystem::is_directory(config_.model_dir)) {
    for (const auto& e : std::filesystem::directory_iterator(config_.model_dir)) {
      if (e.is_regular_file() && e.path().extension() == ".ckpt") files.push_back(e.path());
    }
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    auto info = inspect_checkpoint(f);
    if (!info.compatible) continue;
    auto m = std::make_shared<Model>();
    m->info = std::move(info);
    models_[f.stem().string()] = std::move(m);
  }
  if (!config_.load_on_start) return;
  if (config_.async_load) {
    loader_ = std::thread([this] { load_models(); });
  } else {
    load_models();
  }
}

StampService::~StampService() {
  if (loader_.joinable()) loader_.join();
}

void StampService::load_models() {
  std::vector<std::shared_ptr<Model>> todo;
  {
    std::lock_guard lock(models_mu_);
    for (auto& [id, m] : models_) {
      if (m->state == ModelState::kLoading) todo.push_back(m);
    }
  }
  for (auto& m : todo) {
    std::optional<MaskGanBundle> mask;
    std::optional<TextureGanBundle> texture;
    std::string error;
    try {
      const auto ckpt = load_checkpoint(m->info.path);
      if (ckpt.mask) {
        mask = restore_mask_bundle(ckpt);
        mask->generator->eval();
        mask->encoder->eval();
      }
      if (ckpt.texture) {
        texture = restore_texture_bundle(ckpt, /*with_perceptual=*/false);
        texture->train(false);
      }
    } catch (const std::exception& e) {
      error = e.what();
    }
    std::lock_guard lock(models_mu_);
    if (error.empty()) {
      m->mask = std::move(mask);
      m->texture = std::move(texture);
      m->state = ModelState::kReady;
    } else {
      m->error = error;
      m->state = ModelState::kFailed;
    }
  }
  {
    std::lock_guard lock(models_mu_);
    loading_done_ = true;
  }
  loaded_cv_.notify_all();
}

void StampService::wait_until_loaded() {
  std::unique_lock lock(models_mu_);
  loaded_cv_.wait(lock, [this] { return loading_done_; });
}

std::shared_ptr<StampService::Model> StampService::model_for(const json& request) const {
  std::lock_guard lock(models_mu_);
  std::string id;
  if (request.contains("model") && request["model"].is_string()) {
    id = request["model"].get<std::string>();
  } else if (models_.size() == 1) {
    id = models_.begin()->first;
  } else {
    throw HttpError(422, "field 'model' is required");
  }
  const auto it = models_.find(id);
  if (it == models_.end()) throw HttpError(404, "unknown model '" + id + "'");
  const auto& m = it->second;
  if (m->state == ModelState::kLoading) throw HttpError(503, "model '" + id + "' is still loading");
  if (m->state == ModelState::kFailed) throw HttpError(503, "model '" + id + "' failed to load: " + m->error);
  return m;
}

namespace {

struct Rendered {
  MaskTensor mask;
  ImageTensor texture;
  ImageTensor composite;
};

Rendered texture_into(TextureGanBundle& texture, const ImageTensor& image, const MaskTensor& mask,
                      const LatentVector& z_t, uint64_t seed) {
  Rendered r;
  r.mask = mask;
  r.texture = gen_texture(texture, cutout(image, mask), mask, z_t, seed);
  r.composite = composite(image, r.texture, mask);
  return r;
}

Rendered stamp_once(MaskGanBundle& mask_net, TextureGanBundle& texture, const ImageTensor& bg,
                    const BoundingBox& box, const LatentVector& z_m, const LatentVector& z_t,
                    uint64_t seed) {
  const auto soft = gen_mask(mask_net, cutout(bg, box.raster), z_m, box);
  return texture_into(texture, bg, binarize(soft), z_t, seed);
}

/// Crops the support of `shape` and resizes it (nearest) into the box.
MaskTensor place_shape(const MaskTensor& shape, const BoundingBox& box, int64_t size) {
  if (shape.nonzero_count() == 0) throw HttpError(422, "shape mask is empty");
  const auto t = shape.tensor();
  const auto rows = t.sum(1).nonzero();
  const auto cols = t.sum(0).nonzero();
  const auto crop = t.slice(0, rows.min().item<int64_t>(), rows.max().item<int64_t>() + 1)
                        .slice(1, cols.min().item<int64_t>(), cols.max().item<int64_t>() + 1);
  const auto [ys, xs] = box_pixel_spans(box.vec, size, size);
  const auto resized = torch::nn::functional::interpolate(
      crop.unsqueeze(0).unsqueeze(0),
      torch::nn::functional::InterpolateFuncOptions()
          .size(std::vector<int64_t>{ys.end - ys.begin, xs.end - xs.begin})
          .mode(torch::kNearest));
  auto out = torch::zeros({size, size}, torch::kFloat32);
  out.slice(0, ys.begin, ys.end).slice(1, xs.begin, xs.end).copy_(resized[0][0]);
  return MaskTensor::from(out, true);
}

void add_images(json& out, json& hashes, SessionStore& store, const std::string& prefix,
                const Rendered& r) {
  const std::pair<const char*, Bytes> items[] = {{"mask", encode_png(r.mask)},
                                                 {"texture", encode_png(r.texture)},
                                                 {"composite", encode_png(r.composite)}};
  for (const auto& [name, bytes] : items) {
    const auto h = sha256_hex(bytes);
    out[name] = base64_encode(bytes);
    hashes[prefix + name] = h;
    store.put_blob(h, bytes);
  }
}

}  // namespace

json StampService::run_inference(const std::string& endpoint, Model& m, json& req) {
  const int64_t size = m.info.resolution;
  if (!m.texture) throw HttpError(422, "model has no texture network");
  auto& tex = *m.texture;
  const uint64_t seed = seed_of(req);
  auto gen = nn::make_generator(seed);
  json out{{"model", m.info.path.stem().string()}, {"model_hash", m.info.sha256}, {"seed", seed}};
  json hashes = json::object();

  if (endpoint == "stamp") {
    if (!m.mask) throw HttpError(422, "model has no mask network");
    const auto bg = image_of(req, "background", size);
    const auto box = bbox_of(req, size);
    const auto z_m = latent_of(req, "z_mask", m.mask->config.z_dim, gen);
    const auto z_t = latent_of(req, "z_texture", tex.config.z_dim, gen);
    const auto r = stamp_once(*m.mask, tex, bg, box, z_m, z_t, seed);
    add_images(out, hashes, sessions_, "", r);
    out["latents"] = {{"z_mask", req["z_mask"]}, {"z_texture", req["z_texture"]}};
  } else if (endpoint == "retexture") {
    const auto raw_image = b64_field(req, "image");
    const auto raw_mask = b64_field(req, "mask");
    ImageTensor full;
    MaskTensor full_mask;
    try {
      full = decode_image(raw_image);
      full_mask = decode_mask(raw_mask);
    } catch (const FormatError& e) {
      throw HttpError(422, e.what());
    }
    if (full_mask.height() != full.height() || full_mask.width() != full.width()) {
      throw HttpError(422, "mask extends outside the image bounds (size mismatch)");
    }
    if (full_mask.nonzero_count() == 0) throw HttpError(422, "mask is empty");
    const auto image = decode_image(raw_image, size);
    const auto mask = decode_mask(raw_mask, size);
    if (mask.nonzero_count() == 0) throw HttpError(422, "mask vanishes at model resolution");
    const auto z_t = latent_of(req, "z_texture", tex.config.z_dim, gen);
    add_images(out, hashes, sessions_, "", texture_into(tex, image, mask, z_t, seed));
    out["latents"] = {{"z_texture", req["z_texture"]}};
  } else if (endpoint == "insert") {
    const auto bg = image_of(req, "background", size);
    const auto box = bbox_of(req, size);
    MaskTensor shape;
    try {
      shape = decode_mask(b64_field(req, "shape"));
    } catch (const FormatError& e) {
      throw HttpError(422, e.what());
    }
    const auto mask = place_shape(shape, box, size);
    const auto z_t = latent_of(req, "z_texture", tex.config.z_dim, gen);
    add_images(out, hashes, sessions_, "", texture_into(tex, bg, mask, z_t, seed));
    out["latents"] = {{"z_texture", req["z_texture"]}};
  } else if (endpoint == "interpolate") {
    if (!m.mask) throw HttpError(422, "model has no mask network");
    const auto axis = req.value("axis", std::string());
    if (axis != "mask" && axis != "texture") throw HttpError(422, "axis must be 'mask' or 'texture'");
    const auto frames = req.value("frames", int64_t{0});
    if (frames < 2 || frames > 64) throw HttpError(422, "frames must lie in [2, 64]");
    const auto bg = image_of(req, "background", size);
    const auto box = bbox_of(req, size);
    if (!req.contains("from") || !req.contains("to") || !req["from"].is_object() || !req["to"].is_object()) {
      throw HttpError(422, "interpolation needs 'from' and 'to' latent objects");
    }
    auto& from = req["from"];
    auto& to = req["to"];
    const auto zm0 = latent_of(from, "z_mask", m.mask->config.z_dim, gen);
    const auto zt0 = latent_of(from, "z_texture", tex.config.z_dim, gen);
    const auto zm1 = latent_of(to, "z_mask", m.mask->config.z_dim, gen);
    const auto zt1 = latent_of(to, "z_texture", tex.config.z_dim, gen);
    json list = json::array();
    for (int64_t k = 0; k < frames; ++k) {
      const double a = static_cast<double>(k) / static_cast<double>(frames - 1);
      const auto z_m = axis == "mask" ? lerp(zm0, zm1, a) : zm0;
      const auto z_t = axis == "texture" ? lerp(zt0, zt1, a) : zt0;
      json frame{{"alpha", a}, {"latents", {{"z_mask", z_m.to_vector()}, {"z_texture", z_t.to_vector()}}}};
      add_images(frame, hashes, sessions_, "frame" + std::to_string(k) + ".",
                 stamp_once(*m.mask, tex, bg, box, z_m, z_t, seed));
      list.push_back(std::move(frame));
    }
    out["frames"] = std::move(list);
  } else {
    throw HttpError(404, "unknown endpoint");
  }

  SessionRecord rec;
  rec.endpoint = endpoint;
  rec.model = out["model"].get<std::string>();
  rec.model_hash = m.info.sha256;
  rec.request = req;
  rec.hashes = hashes;
  rec.id = sha256_hex(json{{"endpoint", endpoint}, {"model_hash", rec.model_hash}, {"request", req}}.dump());
  rec.created = std::chrono::duration<double>(std::chrono::system_clock::now().time_since_epoch()).count();
  sessions_.put(rec);
  out["session"] = rec.id;
  out["hashes"] = hashes;
  return out;
}

ServiceResponse StampService::run(const std::string& endpoint, const json& request) {
  if (!request.is_object()) throw HttpError(400, "request body must be a JSON object");
  const auto model = model_for(request);
  json req = request;
  json result;
  auto fut = lane_.submit([&] {
    torch::NoGradGuard no_grad;
    result = run_inference(endpoint, *model, req);
  });
  fut.get();
  return {200, std::move(result)};
}

ServiceResponse StampService::stamp(const json& r) { return handle("POST", "/v1/stamp", r.dump()); }
ServiceResponse StampService::retexture(const json& r) { return handle("POST", "/v1/retexture", r.dump()); }
ServiceResponse StampService::insert(const json& r) { return handle("POST", "/v1/insert", r.dump()); }
ServiceResponse StampService::interpolate(const json& r) {
  return handle("POST", "/v1/interpolate", r.dump());
}

ServiceResponse StampService::models() const {
  std::lock_guard lock(models_mu_);
  json list = json::array();
  for (const auto& [id, m] : models_) {
    if (m->state == ModelState::kFailed) continue;
    auto j = m->info.to_json();
    j["status"] = m->state == ModelState::kReady ? "ready" : "loading";
    list.push_back(std::move(j));
  }
  return {200, {{"models", list}}};
}

ServiceResponse StampService::health() const {
  std::lock_guard lock(models_mu_);
  int64_t ready = 0;
  for (const auto& [id, m] : models_) ready += m->state == ModelState::kReady ? 1 : 0;
  return {200, {{"status", "ok"}, {"models_ready", ready}, {"loading", !loading_done_}}};
}

ServiceResponse StampService::session(const std::string& id) const {
  const auto rec = sessions_.get(id);
  if (!rec) return {404, {{"error", "unknown session '" + id + "'"}}};
  return {200,
          {{"id", rec->id},
           {"endpoint", rec->endpoint},
           {"model", rec->model},
           {"model_hash", rec->model_hash},
           {"request", rec->request},
           {"hashes", rec->hashes},
           {"created", rec->created}}};
}

ServiceResponse StampService::replay(const std::string& id) {
  const auto rec = sessions_.get(id);
  if (!rec) return {404, {{"error", "unknown session '" + id + "'"}}};
  auto request = rec->request;
  request["model"] = rec->model;
  auto resp = handle("POST", "/v1/" + rec->endpoint, request.dump());
  if (resp.status == 200) {
    if (resp.body.value("model_hash", "") != rec->model_hash) {
      return {409, {{"error", "model changed since the session was recorded"}}};
    }
    resp.body["replay_matches"] = resp.body["hashes"] == rec->hashes;
  }
  return resp;
}

ServiceResponse StampService::handle(const std::string& method, const std::string& path,
                                     const std::string& body) {
  try {
    if (method == "GET") {
      if (path == "/healthz") return health();
      if (path == "/v1/models") return models();
      static const std::string kSessions = "/v1/sessions/";
      if (path.rfind(kSessions, 0) == 0) return session(path.substr(kSessions.size()));
    }
    if (method == "POST") {
      static const std::string kSessions = "/v1/sessions/";
      static const std::string kReplay = "/replay";
      if (path.rfind(kSessions, 0) == 0 && path.size() > kSessions.size() + kReplay.size() &&
          path.compare(path.size() - kReplay.size(), kReplay.size(), kReplay) == 0) {
        return replay(path.substr(kSessions.size(), path.size() - kSessions.size() - kReplay.size()));
      }
      for (const char* ep : {"stamp", "retexture", "insert", "interpolate"}) {
        if (path == std::string("/v1/") + ep) {
          json request;
          try {
            request = json::parse(body);
          } catch (const json::parse_error& e) {
            return {400, {{"error", std::string("malformed JSON: ") + e.what()}}};
          }
          return run(ep, request);
        }
      }
    }
    return {404, {{"error", "no route for " + method + " " + path}}};
  } catch (const HttpError& e) {
    return {e.status, {{"error", e.what()}}};
  } catch (const QueueFullError& e) {
    return {429, {{"error", e.what()}}};
  } catch (const InvalidBoxError& e) {
    return {422, {{"error", e.what()}}};
  } catch (const EmptyMaskError& e) {
    return {422, {{"error", e.what()}}};
  } catch (const ConfigError& e) {
    return {422, {{"error", e.what()}}};
  } catch (const DimensionError& e) {
    return {422, {{"error", e.what()}}};
  } catch (const FormatError& e) {
    return {422, {{"error", e.what()}}};
  } catch (const json::exception& e) {
    return {422, {{"error", e.what()}}};
  } catch (const std::exception& e) {
    return {500, {{"error", e.what()}}};
  }
}

}  // namespace stamps
