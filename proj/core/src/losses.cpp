#include "stamps/losses.hpp"

#include "stamps/errors.hpp"

namespace stamps::losses {

torch::Tensor hinge_d_loss(const torch::Tensor& real_score, const torch::Tensor& fake_score) {
  return torch::relu(1 - real_score).mean() + torch::relu(1 + fake_score).mean();
}

torch::Tensor hinge_g_loss(const torch::Tensor& fake_score) { return -fake_score.mean(); }

torch::Tensor hinge_d_loss3(const torch::Tensor& real_score, const torch::Tensor& fake_a,
                            const torch::Tensor& fake_b) {
  return torch::relu(1 - real_score).mean() + torch::relu(1 + fake_a).mean() +
         torch::relu(1 + fake_b).mean();
}

torch::Tensor hinge_g_loss2(const torch::Tensor& fake_a, const torch::Tensor& fake_b) {
  return -fake_a.mean() - fake_b.mean();
}

torch::Tensor latent_reconstruction(const torch::Tensor& z, const torch::Tensor& z_hat) {
  return (z - z_hat).abs().mean();
}

namespace {

torch::Tensor per_layer_sum(const std::vector<torch::Tensor>& features,
                            const std::vector<torch::Tensor>& target) {
  if (features.size() != target.size() || features.empty()) {
    throw DimensionError("feature matching: layer count mismatch");
  }
  auto total = (features[0] - target[0]).pow(2).mean();
  for (size_t l = 1; l < features.size(); ++l) {
    total = total + (features[l] - target[l]).pow(2).mean();
  }
  return total;
}

}  // namespace

torch::Tensor feature_matching_sum(const std::vector<torch::Tensor>& features,
                                   const std::vector<torch::Tensor>& target) {
  return per_layer_sum(features, target);
}

torch::Tensor feature_matching_mean(const std::vector<torch::Tensor>& features,
                                    const std::vector<torch::Tensor>& target) {
  return per_layer_sum(features, target) / static_cast<double>(features.size());
}

torch::Tensor mean_abs(const torch::Tensor& a, const torch::Tensor& b) { return (a - b).abs().mean(); }

torch::Tensor kl_to_standard_normal(const torch::Tensor& mu, const torch::Tensor& logvar) {
  return (0.5 * (mu.pow(2) + logvar.exp() - 1 - logvar)).sum(1).mean();
}

}  // namespace stamps::losses
