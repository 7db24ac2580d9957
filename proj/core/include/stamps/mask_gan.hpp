#pragma once

// Shape-mask GAN: an AdaIN-conditioned encoder-decoder generator, a mask+box
// discriminator, the (box, z) -> AdaIN parameter MLP and its latent decoder,
// and the running-mean feature state used for distribution-level feature
// matching.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "stamps/dataset.hpp"
#include "stamps/domain.hpp"
#include "stamps/nn_blocks.hpp"
#include "stamps/optim.hpp"

namespace stamps {

struct MaskNetConfig {
  int64_t resolution = 64;
  int64_t z_dim = 128;
  int64_t base_channels = 16;
  int64_t max_channels = 64;
  int64_t downsamples = 3;
  int64_t res_blocks = 4;
  /// Hidden width of the conditioning MLPs; 0 means a single linear layer.
  int64_t mlp_hidden = 256;
  int64_t disc_channels = 16;
  int64_t disc_layers = 3;
  double ema_decay = 0.999;
  /// Reconstruct z from the generated mask instead of the AdaIN parameters.
  bool mrecon = false;
  /// Also show the discriminator the image content under the mask.
  bool bgcond = false;

  nlohmann::json to_json() const;
  static MaskNetConfig from_json(const nlohmann::json& j);
  void validate() const;
};

/// Multi-layer perceptron with LeakyReLU between layers.
class MlpImpl : public torch::nn::Module {
 public:
  MlpImpl(int64_t in, int64_t hidden, int64_t out);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  std::vector<torch::nn::Linear> layers_;
};
TORCH_MODULE(Mlp);

/// Image-to-mask generator. Every normalization layer is AdaIN, driven by a
/// flat parameter vector laid out as (gamma_0, beta_0, gamma_1, beta_1, ...).
class MaskGeneratorImpl : public torch::nn::Module {
 public:
  explicit MaskGeneratorImpl(const MaskNetConfig& config);

  /// `input` is concat(i_b, b.raster): [N, 4, H, W]. `adain` is [N, P].
  /// Returns a soft mask in [0, 1]: [N, 1, H, W].
  torch::Tensor forward(const torch::Tensor& input, const torch::Tensor& adain);

  int64_t adain_parameter_count() const { return adain_total_; }
  const std::vector<int64_t>& adain_channels() const { return adain_channels_; }

 private:
  torch::Tensor norm(const torch::Tensor& x, const torch::Tensor& adain, int64_t& offset) const;

  MaskNetConfig config_;
  torch::nn::Conv2d stem_{nullptr};
  std::vector<torch::nn::Conv2d> down_;
  std::vector<std::pair<torch::nn::Conv2d, torch::nn::Conv2d>> res_;
  std::vector<torch::nn::Conv2d> up_;
  torch::nn::Conv2d head_{nullptr};
  std::vector<int64_t> adain_channels_;
  int64_t adain_total_ = 0;
};
TORCH_MODULE(MaskGenerator);

/// Recovers z from a generated mask (used only by the mrecon ablation).
class MaskLatentEncoderImpl : public torch::nn::Module {
 public:
  MaskLatentEncoderImpl(const MaskNetConfig& config);
  torch::Tensor forward(const torch::Tensor& mask);

 private:
  std::vector<torch::nn::Conv2d> convs_;
  torch::nn::Linear out_{nullptr};
};
TORCH_MODULE(MaskLatentEncoder);

/// Exponential running mean of per-layer discriminator features on real
/// batches. Zero-initialized; excluded from autograd.
class EmaFeatures {
 public:
  explicit EmaFeatures(double decay = 0.999) : decay_(decay) {}

  bool initialized() const { return !means_.empty(); }
  double decay() const { return decay_; }
  int64_t updates() const { return updates_; }
  const std::vector<torch::Tensor>& means() const { return means_; }

  /// ema <- decay * ema + (1 - decay) * batch_mean(features).
  void update(const std::vector<torch::Tensor>& features);
  /// Sum over layers of mean squared difference to the running means.
  /// Throws UninitializedEmaError before the first update.
  torch::Tensor loss(const std::vector<torch::Tensor>& features) const;

  nn::TensorMap state(const std::string& prefix) const;
  void load_state(const nn::TensorMap& state, const std::string& prefix);
  void to(torch::Dtype dtype);

 private:
  double decay_;
  std::vector<torch::Tensor> means_;
  int64_t updates_ = 0;
};

struct MaskGanBundle {
  MaskNetConfig config;
  MaskGenerator generator{nullptr};
  nn::FeatureDiscriminator discriminator{nullptr};
  Mlp encoder{nullptr};  // (b.vec, z) -> AdaIN parameters
  Mlp decoder{nullptr};  // AdaIN parameters -> z_hat
  MaskLatentEncoder mask_encoder{nullptr};  // only with config.mrecon
  EmaFeatures ema;
  torch::Dtype dtype = torch::kFloat32;

  static MaskGanBundle create(const MaskNetConfig& config, uint64_t seed);

  /// Everything the generator-side optimizer updates.
  Adam::NamedParams generator_parameters();
  Adam::NamedParams discriminator_parameters();
  void to(torch::Dtype dtype);
  nn::TensorMap state() const;
  void load_state(const nn::TensorMap& state);
};

/// Generator-side forward products for one batch.
struct MaskForward {
  torch::Tensor z;      // [N, z_dim]
  torch::Tensor adain;  // [N, P]
  torch::Tensor mask;   // [N, 1, H, W], soft
  torch::Tensor z_hat;  // [N, z_dim]
};

torch::Tensor mask_generator_input(const torch::Tensor& i_b, const torch::Tensor& b_raster);
MaskForward mask_forward(MaskGanBundle& bundle, const Batch& batch, const torch::Tensor& z);
/// Discriminator input for a mask paired with its box (and, with bgcond, the
/// image content under the mask).
torch::Tensor mask_discriminator_input(const MaskGanBundle& bundle, const torch::Tensor& mask,
                                       const torch::Tensor& b_raster, const torch::Tensor& image);

struct MaskLambdas {
  double fm = 10.0;
  double rec = 10.0;
};

struct MaskLossBreakdown {
  double adv_g = 0, adv_d = 0, fm = 0, rec = 0, total_g = 0, total_d = 0;

  /// adv + lambda_fm * fm + lambda_rec * rec, in that evaluation order.
  static double weighted_total(double adv, double fm, double rec, const MaskLambdas& l);
  std::map<std::string, double> to_map() const;
};

struct MaskGeneratorLoss {
  torch::Tensor adv, fm, rec, total;
};

/// Generator objective for a forward pass. With `use_fm` false the fm term is
/// an exact zero and the EMA is not consulted.
MaskGeneratorLoss mask_generator_loss(MaskGanBundle& bundle, const Batch& batch,
                                      const MaskForward& fwd, const MaskLambdas& lambdas,
                                      bool use_fm = true);

struct MaskStepOptions {
  MaskLambdas lambdas;
  bool use_fm = true;
};

/// One discriminator update followed by one generator update, then the EMA
/// update with the real batch. Throws DivergenceError on non-finite losses.
MaskLossBreakdown mask_train_step(const Batch& batch, MaskGanBundle& bundle, Adam& g_opt,
                                  Adam& d_opt, at::Generator& rng, const MaskStepOptions& options);

/// Inference: soft mask for one background with its box cut out.
MaskTensor gen_mask(MaskGanBundle& bundle, const ImageTensor& i_b, const LatentVector& z,
                    const BoundingBox& b);

}  // namespace stamps
