#pragma once

// Building blocks shared by the mask and texture networks.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace stamps::nn {

/// Instance normalization without affine parameters followed by an
/// externally supplied affine transform: x_hat * (1 + gamma) + beta.
/// `gamma`/`beta` are [N, C].
torch::Tensor adain(const torch::Tensor& x, const torch::Tensor& gamma, const torch::Tensor& beta);

torch::Tensor instance_norm(const torch::Tensor& x);

torch::Tensor leaky_relu(const torch::Tensor& x);

/// Tiles a [N, D] vector over the spatial grid of `like`, giving [N, D, H, W].
torch::Tensor tile_latent(const torch::Tensor& z, const torch::Tensor& like);

/// Source of per-call Gaussian noise. A null generator means "no noise".
struct NoiseSource {
  std::optional<at::Generator> generator;

  static NoiseSource none() { return {}; }
  static NoiseSource seeded(uint64_t seed);
  static NoiseSource from(at::Generator gen) { return NoiseSource{std::move(gen)}; }
  bool enabled() const { return generator.has_value(); }
};

/// Per-channel scaled additive Gaussian noise on decoder features.
class NoiseInjectionImpl : public torch::nn::Module {
 public:
  explicit NoiseInjectionImpl(int64_t channels, double init_scale = 0.1);
  torch::Tensor forward(const torch::Tensor& x, NoiseSource& noise);

  torch::Tensor scale;
};
TORCH_MODULE(NoiseInjection);

/// Discriminator output: a scalar score per sample plus every hidden
/// activation, for feature matching.
struct DiscOutput {
  torch::Tensor score;                  // [N]
  std::vector<torch::Tensor> features;  // per layer, [N, C_l, H_l, W_l]
};

struct DiscriminatorConfig {
  int64_t in_channels = 2;
  int64_t base_channels = 16;
  int64_t max_channels = 64;
  int64_t layers = 3;
};

/// Stride-2 conv stack with LeakyReLU; the score is the spatial mean of a
/// final 3x3 conv to one channel.
class FeatureDiscriminatorImpl : public torch::nn::Module {
 public:
  explicit FeatureDiscriminatorImpl(const DiscriminatorConfig& config);
  DiscOutput forward(const torch::Tensor& x);

  const DiscriminatorConfig& config() const { return config_; }

 private:
  DiscriminatorConfig config_;
  std::vector<torch::nn::Conv2d> convs_;
  torch::nn::Conv2d head_{nullptr};
};
TORCH_MODULE(FeatureDiscriminator);

/// Deterministic initialization from an explicit seed: weights with more than
/// one dimension get N(0, gain^2 / fan_in), vectors get zero, except tensors
/// whose name ends with one of `keep` which are left untouched.
void init_weights(torch::nn::Module& module, uint64_t seed, double gain = 1.0,
                  const std::vector<std::string>& keep = {});

/// Fresh CPU generator with a fixed seed.
at::Generator make_generator(uint64_t seed);

// Parameter bookkeeping ------------------------------------------------------------

using TensorMap = std::map<std::string, torch::Tensor>;

/// Parameters and buffers, keyed "<prefix>.<name>".
TensorMap state_of(const torch::nn::Module& module, const std::string& prefix);
/// Copies matching entries into the module. Missing or misshapen entries throw
/// FormatError.
void load_state(torch::nn::Module& module, const TensorMap& state, const std::string& prefix);

int64_t parameter_count(const torch::nn::Module& module);

void set_requires_grad(torch::nn::Module& module, bool flag);

}  // namespace stamps::nn
