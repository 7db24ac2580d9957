#pragma once

// Model checkpoints: a tensor archive whose JSON header carries the network
// configs, the perceptual-network identity and the trainer position. The
// perceptual weights themselves are never stored.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "stamps/mask_gan.hpp"
#include "stamps/nn_blocks.hpp"
#include "stamps/texture_gan.hpp"

namespace stamps {

inline constexpr const char* kCheckpointFormat = "stamps-checkpoint";
inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  std::string label;  // object class
  int64_t resolution = 64;
  std::string stage;  // stage that produced it
  std::optional<MaskNetConfig> mask;
  std::optional<TextureNetConfig> texture;
  std::string perceptual_identity;
  nlohmann::json trainer = nlohmann::json::object();
  nn::TensorMap tensors;

  /// SHA-256 over the canonical dump of the network configs.
  std::string config_hash() const;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
/// Throws FormatError on a foreign file, a newer version or unknown header fields.
Checkpoint load_checkpoint(const std::filesystem::path& path);

struct CheckpointInfo {
  std::filesystem::path path;
  std::string sha256;
  std::string label;
  int64_t resolution = 0;
  int64_t z_mask = 0;
  int64_t z_texture = 0;
  bool has_mask = false;
  bool has_texture = false;
  bool compatible = false;
  std::string reason;  // why it is incompatible

  nlohmann::json to_json() const;
};

/// Header-only inspection; format problems mark the checkpoint incompatible
/// instead of throwing.
CheckpointInfo inspect_checkpoint(const std::filesystem::path& path);

/// Rebuilds bundles from a checkpoint. Without `with_perceptual` the texture
/// bundle is inference-only; with it the rebuilt perceptual network must have
/// the recorded identity.
MaskGanBundle restore_mask_bundle(const Checkpoint& checkpoint);
TextureGanBundle restore_texture_bundle(const Checkpoint& checkpoint, bool with_perceptual);

}  // namespace stamps
