#pragma once

// Loss terms for both generator stages. All functions return 0-dim tensors
// and are differentiable in every tensor argument.

#include <vector>

#include <torch/torch.h>

namespace stamps::losses {

/// mean(max(0, 1 - real)) + mean(max(0, 1 + fake)).
torch::Tensor hinge_d_loss(const torch::Tensor& real_score, const torch::Tensor& fake_score);
/// -mean(fake).
torch::Tensor hinge_g_loss(const torch::Tensor& fake_score);

/// Discriminator hinge over one real and two fake branches.
torch::Tensor hinge_d_loss3(const torch::Tensor& real_score, const torch::Tensor& fake_a,
                            const torch::Tensor& fake_b);
/// -mean(fake_a) - mean(fake_b).
torch::Tensor hinge_g_loss2(const torch::Tensor& fake_a, const torch::Tensor& fake_b);

/// Mean absolute difference between a latent and its reconstruction,
/// i.e. (1/|z|) * ||z - z_hat||_1 averaged over the batch.
torch::Tensor latent_reconstruction(const torch::Tensor& z, const torch::Tensor& z_hat);

/// Sum over layers of the per-layer mean squared difference. `target[l]` may
/// broadcast against `features[l]` (e.g. a [1, ...] running mean).
torch::Tensor feature_matching_sum(const std::vector<torch::Tensor>& features,
                                   const std::vector<torch::Tensor>& target);
/// Mean over layers of the per-layer mean squared difference.
torch::Tensor feature_matching_mean(const std::vector<torch::Tensor>& features,
                                    const std::vector<torch::Tensor>& target);

/// Mean absolute difference over every element.
torch::Tensor mean_abs(const torch::Tensor& a, const torch::Tensor& b);

/// KL(N(mu, exp(logvar)) || N(0, I)): summed over latent dims, averaged over batch.
torch::Tensor kl_to_standard_normal(const torch::Tensor& mu, const torch::Tensor& logvar);

}  // namespace stamps::losses
