#pragma once

// Texture GAN: a U-Net inpainting generator with a tiled latent at the
// bottleneck and Gaussian noise injected at every decoder stage, an
// image+mask discriminator, a reparametrized texture encoder and a frozen
// perceptual feature extractor. Training runs two branches per batch: a
// random latent z_t, and an encoded latent z_t' = Enc(s) whose output is
// compared to the ground truth.

#include <cstdint>
#include <map>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "stamps/dataset.hpp"
#include "stamps/domain.hpp"
#include "stamps/feature_nets.hpp"
#include "stamps/nn_blocks.hpp"
#include "stamps/optim.hpp"

namespace stamps {

struct TextureNetConfig {
  int64_t resolution = 64;
  int64_t z_dim = 8;
  int64_t base_channels = 16;
  int64_t max_channels = 64;
  int64_t downsamples = 3;
  int64_t res_blocks = 1;
  int64_t disc_channels = 16;
  int64_t disc_layers = 3;
  int64_t enc_channels = 16;
  int64_t enc_layers = 3;
  bool noise = true;
  double noise_init = 0.1;
  double logvar_min = -10.0;
  double logvar_max = 10.0;
  PerceptualConfig perceptual;

  nlohmann::json to_json() const;
  static TextureNetConfig from_json(const nlohmann::json& j);
  void validate() const;
};

class TextureGeneratorImpl : public torch::nn::Module {
 public:
  explicit TextureGeneratorImpl(const TextureNetConfig& config);

  /// `i_masked` [N, 3, H, W] with the object region zeroed, `mask` [N, 1, H, W],
  /// `z` [N, z_dim]. Returns the full-frame texture in [-1, 1].
  torch::Tensor forward(const torch::Tensor& i_masked, const torch::Tensor& mask,
                        const torch::Tensor& z, nn::NoiseSource& noise);

 private:
  TextureNetConfig config_;
  torch::nn::Conv2d stem_{nullptr};
  std::vector<torch::nn::Conv2d> down_;
  torch::nn::Conv2d fuse_{nullptr};
  std::vector<std::pair<torch::nn::Conv2d, torch::nn::Conv2d>> res_;
  std::vector<torch::nn::Conv2d> up_;
  std::vector<nn::NoiseInjection> noise_;
  torch::nn::Conv2d head_{nullptr};
};
TORCH_MODULE(TextureGenerator);

struct EncodedTexture {
  torch::Tensor mu;      // [N, z_dim]
  torch::Tensor logvar;  // [N, z_dim], clamped
};

class TextureEncoderImpl : public torch::nn::Module {
 public:
  explicit TextureEncoderImpl(const TextureNetConfig& config);
  /// With `detach_params` the encoder's own parameters are cut from the
  /// graph: gradients still reach the input but never the encoder.
  EncodedTexture forward(const torch::Tensor& s, bool detach_params = false);

 private:
  TextureNetConfig config_;
  std::vector<torch::nn::Conv2d> convs_;
  torch::nn::Linear mu_{nullptr};
  torch::nn::Linear logvar_{nullptr};
};
TORCH_MODULE(TextureEncoder);

struct TextureGanBundle {
  TextureNetConfig config;
  TextureGenerator generator{nullptr};
  nn::FeatureDiscriminator discriminator{nullptr};
  TextureEncoder encoder{nullptr};
  PerceptualNet perceptual{nullptr};
  torch::Dtype dtype = torch::kFloat32;
  /// Noise stream for training-mode inference calls.
  at::Generator train_noise;

  /// Inference-only bundles may skip building the perceptual network.
  static TextureGanBundle create(const TextureNetConfig& config, uint64_t seed,
                                 bool with_perceptual = true);

  /// Generator and encoder parameters (the encoder trains with the generator).
  Adam::NamedParams generator_parameters();
  Adam::NamedParams discriminator_parameters();
  void to(torch::Dtype dtype);
  void train(bool on);
  bool is_training() const;
  /// Perceptual weights are not part of the state; they are identified by
  /// `perceptual->identity()`.
  nn::TensorMap state() const;
  void load_state(const nn::TensorMap& state);
};

/// mu + exp(0.5 * logvar) * eps.
torch::Tensor reparametrize(const torch::Tensor& mu, const torch::Tensor& logvar,
                            const torch::Tensor& eps);

/// Random inputs of one training step. Noise for the two generator calls is
/// derived from `noise_seed` and `noise_seed + 1`.
struct TextureDraws {
  torch::Tensor z_t;  // [N, z_dim]
  torch::Tensor eps;  // [N, z_dim]
  uint64_t noise_seed = 0;

  static TextureDraws sample(int64_t batch, int64_t z_dim, torch::Dtype dtype, at::Generator& rng);
};

struct TextureBranchOptions {
  bool bicycle = true;  // encoded-latent branch (z_t' = Enc(s))
  bool noise = true;    // decoder noise injection
};

struct TextureForward {
  torch::Tensor mask_hat;        // mask used by the random-latent branch
  torch::Tensor z_t;
  torch::Tensor s_hat;           // G(i * (1 - m_hat), z_t)
  torch::Tensor i_s_hat;         // composite(i, s_hat, m_hat)
  torch::Tensor mu, logvar;      // undefined without the bicycle branch
  torch::Tensor z_prime;
  torch::Tensor s_hat_prime;     // G(i * (1 - m), z_t')
  torch::Tensor i_s_hat_prime;   // composite(i, s_hat_prime, m)
};

/// Runs both generator branches. `mask_hat` is either the ground-truth mask
/// or a generated one (possibly carrying gradient into the mask generator).
TextureForward texture_forward(TextureGanBundle& bundle, const Batch& batch,
                               const torch::Tensor& mask_hat, const TextureDraws& draws,
                               const TextureBranchOptions& options);

struct TextureLambdas {
  double rec = 10.0;
  double kl = 0.05;
  double fm = 10.0;
  double per = 10.0;
  double irec = 10.0;
};

struct TextureLossBreakdown {
  double adv_g = 0, adv_d = 0, rec = 0, kl = 0, fm = 0, per = 0, irec = 0, total_g = 0, total_d = 0;

  /// adv + rec + kl + fm + per + irec terms, each weighted, in that order.
  static double weighted_total(double adv, double rec, double kl, double fm, double per,
                               double irec, const TextureLambdas& l);
  std::map<std::string, double> to_map() const;
};

struct TextureGeneratorLoss {
  torch::Tensor adv, rec, kl, fm, per, irec, total;
};

struct TextureLossOptions {
  TextureLambdas lambdas;
  bool use_fm = true;
  bool use_per = true;
};

// Individual terms ---------------------------------------------------------------

/// Mean over layers of the per-layer mean squared difference; the real
/// features are treated as constants.
torch::Tensor loss_t_fm(const std::vector<torch::Tensor>& fake_feats,
                        const std::vector<torch::Tensor>& real_feats);
/// Mean absolute pixel difference.
torch::Tensor loss_t_irec(const torch::Tensor& i_s_hat_prime, const torch::Tensor& i_s);
/// (1/|z|) * ||z_t - mu(Enc(s_hat))||_1 with the encoder parameters detached.
torch::Tensor loss_t_rec(TextureGanBundle& bundle, const torch::Tensor& z_t,
                         const torch::Tensor& s_hat_foreground);
/// (g_loss, d_loss) for one real and two fake score vectors.
std::pair<torch::Tensor, torch::Tensor> loss_t_adv(const torch::Tensor& real,
                                                   const torch::Tensor& fake_random,
                                                   const torch::Tensor& fake_encoded);
/// Mean absolute difference of perceptual features; phi(i) is a constant.
torch::Tensor loss_perceptual(PerceptualNet& phi, const torch::Tensor& i,
                              const torch::Tensor& i_s_hat_prime);

torch::Tensor texture_discriminator_input(const torch::Tensor& image, const torch::Tensor& mask);

TextureGeneratorLoss texture_generator_loss(TextureGanBundle& bundle, const Batch& batch,
                                            const TextureForward& fwd,
                                            const TextureLossOptions& options);
torch::Tensor texture_discriminator_loss(TextureGanBundle& bundle, const Batch& batch,
                                         const TextureForward& fwd);

struct TextureStepOptions {
  TextureLossOptions loss;
  TextureBranchOptions branches;
};

/// One discriminator update then one generator(+encoder) update. When
/// `joint_mask_opt` is given, `mask_source` is expected to carry gradient to
/// the mask generator and that optimizer is stepped too.
TextureLossBreakdown texture_train_step(const Batch& batch, const torch::Tensor& mask_source,
                                        TextureGanBundle& bundle, Adam& g_opt, Adam& d_opt,
                                        at::Generator& rng, const TextureStepOptions& options,
                                        Adam* joint_mask_opt = nullptr);

/// Inference. In training mode noise comes from the bundle's running stream
/// (fresh per call); in eval mode it is seeded by `noise_seed`.
ImageTensor gen_texture(TextureGanBundle& bundle, const ImageTensor& i_masked,
                        const MaskTensor& mask, const LatentVector& z, uint64_t noise_seed = 0);

struct EncodeResult {
  LatentVector mu;
  LatentVector logvar;
  LatentVector z_sample;
};

/// Encodes a foreground-only image; z_sample = mu + exp(logvar / 2) * eps
/// with eps drawn from `rng`.
EncodeResult encode_texture(TextureGanBundle& bundle, const ImageTensor& s, at::Generator& rng);

}  // namespace stamps
