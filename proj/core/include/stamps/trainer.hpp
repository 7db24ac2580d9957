#pragma once

// Training driver: mask stage, texture stage and optional joint fine-tuning,
// with a linear-decay learning-rate schedule, resumable state and JSON-lines
// metrics.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stamps/checkpoint.hpp"
#include "stamps/dataset.hpp"
#include "stamps/mask_gan.hpp"
#include "stamps/optim.hpp"
#include "stamps/texture_gan.hpp"

namespace stamps {

enum class Stage { kMask, kTexture, kJoint };

std::string to_string(Stage s);
Stage parse_stage(const std::string& s);

struct TrainConfig {
  Stage stage = Stage::kMask;
  /// 0 selects the stage default (1000 mask, 400 texture, 100 joint).
  int64_t epochs = 0;
  int64_t batch_size = 4;
  AdamOptions adam;
  MaskLambdas mask_lambdas;
  TextureLambdas texture_lambdas;
  uint64_t seed = 0;

  bool no_fm = false;
  bool no_noise = false;
  bool no_bicycle = false;
  bool no_vgg = false;
  bool mrecon = false;
  bool bgcond = false;

  /// Texture stage: train the random-latent branch on generated masks
  /// (requires `init` with a mask model) instead of ground-truth masks.
  bool generated_masks = false;
  int64_t checkpoint_every = 0;  // 0: final checkpoint only

  MaskNetConfig mask_net;
  TextureNetConfig texture_net;

  std::string dataset;   // dataset directory
  std::string out_dir = "runs/default";
  std::string init;      // prerequisite checkpoint (mask model for texture/joint)
  std::string resume;    // checkpoint of this stage to continue from

  int64_t total_epochs() const;
  void validate() const;
  nlohmann::json to_json() const;

  /// Flat "key = value" document; '#' starts a comment. Unknown keys throw.
  static TrainConfig parse(const std::string& text);
  static TrainConfig from_file(const std::filesystem::path& path);
  /// Applies one key/value override with the same rules as `parse`.
  void set(const std::string& key, const std::string& value);
};

/// base_lr until total/2, then linear decay reaching 0 at epoch == total.
/// Throws ConfigError unless 0 <= epoch < total.
double lr_at(int64_t epoch, int64_t total_epochs, double base_lr);

struct EpochMetrics {
  int64_t epoch = 0;
  double lr = 0;
  std::map<std::string, double> mean;  // breakdown fields averaged over the epoch

  nlohmann::json to_json(Stage stage) const;
};

class Trainer {
 public:
  Trainer(TrainConfig config, std::vector<InstanceRecord> records, std::string dataset_hash);

  /// One optimization step on the next minibatch.
  void step();
  /// Runs the rest of the current epoch.
  EpochMetrics run_epoch();
  /// Runs every remaining epoch, writing periodic and final checkpoints plus
  /// metrics.jsonl into the output directory. Returns the final checkpoint path.
  std::filesystem::path train(const std::function<void(const EpochMetrics&)>& on_epoch = {});

  Checkpoint snapshot() const;
  /// Restores a snapshot written by a trainer of the same stage.
  void restore(const Checkpoint& checkpoint);

  int64_t epoch() const { return epoch_; }
  int64_t batch_in_epoch() const { return batch_index_; }
  int64_t steps_done() const { return steps_; }
  bool finished() const { return epoch_ >= config_.total_epochs(); }
  const TrainConfig& config() const { return config_; }
  const std::vector<std::map<std::string, double>>& step_log() const { return step_log_; }

  MaskGanBundle* mask() { return mask_ ? &*mask_ : nullptr; }
  TextureGanBundle* texture() { return texture_ ? &*texture_ : nullptr; }

 private:
  void begin_epoch();
  Batch batch_at(const std::vector<int64_t>& indices) const;
  std::map<std::string, double> mask_step(const Batch& batch);
  std::map<std::string, double> texture_step(const Batch& batch);
  std::map<std::string, double> joint_step(const Batch& batch);

  TrainConfig config_;
  std::vector<TrainingExample> examples_;
  std::string dataset_hash_;
  std::string label_;

  std::optional<MaskGanBundle> mask_;
  std::optional<TextureGanBundle> texture_;
  std::unique_ptr<Adam> mask_g_opt_, mask_d_opt_, tex_g_opt_, tex_d_opt_;
  at::Generator rng_;

  int64_t epoch_ = 0;
  int64_t batch_index_ = 0;
  int64_t steps_ = 0;
  std::vector<std::vector<int64_t>> order_;
  std::vector<std::map<std::string, double>> epoch_log_;
  std::vector<std::map<std::string, double>> step_log_;
};

}  // namespace stamps
