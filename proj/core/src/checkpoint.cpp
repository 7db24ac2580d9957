#include "stamps/checkpoint.hpp"

#include <set>

#include "stamps/codec.hpp"
#include "stamps/errors.hpp"
#include "stamps/tensor_archive.hpp"

namespace stamps {

namespace {

const std::set<std::string> kHeaderFields{"format",  "version", "label",      "resolution",
                                          "stage",   "mask",    "texture",    "perceptual",
                                          "trainer", "config_hash"};

nlohmann::json configs_json(const Checkpoint& c) {
  return {{"mask", c.mask ? c.mask->to_json() : nlohmann::json(nullptr)},
          {"texture", c.texture ? c.texture->to_json() : nlohmann::json(nullptr)}};
}

void check_header(const nlohmann::json& meta) {
  if (!meta.is_object() || meta.value("format", "") != kCheckpointFormat) {
    throw FormatError("not a checkpoint");
  }
  if (meta.value("version", 0) != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version");
  }
  for (const auto& [key, value] : meta.items()) {
    if (!kHeaderFields.contains(key)) throw FormatError("unknown checkpoint field '" + key + "'");
  }
}

}  // namespace

std::string Checkpoint::config_hash() const { return sha256_hex(configs_json(*this).dump()); }

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  TensorArchive archive;
  archive.meta = {{"format", kCheckpointFormat},
                  {"version", kCheckpointVersion},
                  {"label", checkpoint.label},
                  {"resolution", checkpoint.resolution},
                  {"stage", checkpoint.stage},
                  {"perceptual", checkpoint.perceptual_identity},
                  {"trainer", checkpoint.trainer},
                  {"config_hash", checkpoint.config_hash()}};
  const auto configs = configs_json(checkpoint);
  archive.meta["mask"] = configs["mask"];
  archive.meta["texture"] = configs["texture"];
  archive.tensors = checkpoint.tensors;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  write_archive(path, archive);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  auto archive = read_archive(path);
  const auto& meta = archive.meta;
  check_header(meta);
  Checkpoint c;
  c.label = meta.value("label", "");
  c.resolution = meta.value("resolution", int64_t{0});
  c.stage = meta.value("stage", "");
  c.perceptual_identity = meta.value("perceptual", "");
  c.trainer = meta.value("trainer", nlohmann::json::object());
  if (meta.contains("mask") && !meta["mask"].is_null()) c.mask = MaskNetConfig::from_json(meta["mask"]);
  if (meta.contains("texture") && !meta["texture"].is_null()) {
    c.texture = TextureNetConfig::from_json(meta["texture"]);
  }
  if (meta.value("config_hash", "") != c.config_hash()) {
    throw FormatError("checkpoint config hash mismatch");
  }
  c.tensors = std::move(archive.tensors);
  return c;
}

nlohmann::json CheckpointInfo::to_json() const {
  return {{"id", path.stem().string()},
          {"file", path.filename().string()},
          {"sha256", sha256},
          {"label", label},
          {"resolution", resolution},
          {"z_mask", z_mask},
          {"z_texture", z_texture},
          {"has_mask", has_mask},
          {"has_texture", has_texture}};
}

CheckpointInfo inspect_checkpoint(const std::filesystem::path& path) {
  CheckpointInfo info;
  info.path = path;
  try {
    const auto meta = read_archive_meta(path);
    check_header(meta);
    info.label = meta.value("label", "");
    info.resolution = meta.value("resolution", int64_t{0});
    if (meta.contains("mask") && !meta["mask"].is_null()) {
      info.has_mask = true;
      info.z_mask = MaskNetConfig::from_json(meta["mask"]).z_dim;
    }
    if (meta.contains("texture") && !meta["texture"].is_null()) {
      info.has_texture = true;
      info.z_texture = TextureNetConfig::from_json(meta["texture"]).z_dim;
    }
    info.sha256 = sha256_file(path.string());
    info.compatible = true;
  } catch (const std::exception& e) {
    info.compatible = false;
    info.reason = e.what();
  }
  return info;
}

MaskGanBundle restore_mask_bundle(const Checkpoint& checkpoint) {
  if (!checkpoint.mask) throw StageOrderError("checkpoint has no mask model");
  auto bundle = MaskGanBundle::create(*checkpoint.mask, 0);
  bundle.load_state(checkpoint.tensors);
  return bundle;
}

TextureGanBundle restore_texture_bundle(const Checkpoint& checkpoint, bool with_perceptual) {
  if (!checkpoint.texture) throw StageOrderError("checkpoint has no texture model");
  auto bundle = TextureGanBundle::create(*checkpoint.texture, 0, with_perceptual);
  if (with_perceptual && bundle.perceptual->identity() != checkpoint.perceptual_identity) {
    throw FormatError("perceptual network '" + bundle.perceptual->identity() +
                      "' does not match checkpoint '" + checkpoint.perceptual_identity + "'");
  }
  bundle.load_state(checkpoint.tensors);
  return bundle;
}

}  // namespace stamps
