#pragma once

// Fixed (never trained) feature extractors: the perceptual-loss network and
// the embedding network used by the KID metric. Both either load pretrained
// weights from a tensor archive or fall back to a seeded random conv stack.

#include <cstdint>
#include <string>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

namespace stamps {

/// VGG16-style feature stack truncated after `tap_stage` stages
/// (conv widths 64/128/256 divided by `width_divisor`).
struct PerceptualConfig {
  int64_t width_divisor = 8;
  int64_t tap_stage = 3;
  uint64_t seed = 1234;
  /// Tensor archive with "stage<s>_conv<k>.{weight,bias}" entries. Empty
  /// means seeded random weights.
  std::string weights_path;
  /// Map [-1, 1] inputs to ImageNet statistics (for pretrained weights).
  bool imagenet_normalize = false;

  nlohmann::json to_json() const;
  static PerceptualConfig from_json(const nlohmann::json& j);
};

class PerceptualNetImpl : public torch::nn::Module {
 public:
  explicit PerceptualNetImpl(const PerceptualConfig& config);
  /// [N, 3, H, W] in [-1, 1] -> activations of the tapped stage.
  torch::Tensor forward(const torch::Tensor& x);
  /// "sha256:<digest>" for file weights, "seeded:<seed>/div<d>/tap<t>" otherwise.
  const std::string& identity() const { return identity_; }
  void set_identity(std::string id) { identity_ = std::move(id); }

 private:
  PerceptualConfig config_;
  std::vector<std::vector<torch::nn::Conv2d>> stages_;
  std::string identity_;
};
TORCH_MODULE(PerceptualNet);

/// Builds a frozen extractor (requires_grad off, loaded or seeded).
PerceptualNet make_perceptual_net(const PerceptualConfig& config);

struct EmbedderConfig {
  int64_t base_width = 16;
  int64_t layers = 4;
  uint64_t seed = 4321;
  std::string weights_path;  // entries "conv<k>.{weight,bias}"

  nlohmann::json to_json() const;
  static EmbedderConfig from_json(const nlohmann::json& j);
};

/// Stride-2 conv stack with ReLU and global average pooling.
class FeatureEmbedderImpl : public torch::nn::Module {
 public:
  explicit FeatureEmbedderImpl(const EmbedderConfig& config);
  /// [N, 3, H, W] in [-1, 1] -> [N, D].
  torch::Tensor forward(const torch::Tensor& x);
  int64_t feature_dim() const { return feature_dim_; }
  const std::string& identity() const { return identity_; }
  void set_identity(std::string id) { identity_ = std::move(id); }

 private:
  std::vector<torch::nn::Conv2d> convs_;
  int64_t feature_dim_ = 0;
  std::string identity_;
};
TORCH_MODULE(FeatureEmbedder);

FeatureEmbedder make_feature_embedder(const EmbedderConfig& config);

}  // namespace stamps
