#pragma once

// Sample-quality and diversity metrics: kernel inception distance with a
// paired random-subset protocol, the nearest-mask retrieval baseline and
// the small diversity statistics used to compare ablations.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "stamps/domain.hpp"
#include "stamps/feature_nets.hpp"

namespace stamps {

/// Unbiased squared MMD with kernel k(x, y) = (x.y / d + 1)^3 between feature
/// sets [n, d] and [m, d]. Computed in float64. Throws InsufficientSamplesError
/// when either set has fewer than two rows and DimensionError when d differs.
double kid(const torch::Tensor& x, const torch::Tensor& y);

struct KidReport {
  std::vector<std::string> systems;
  std::vector<std::vector<double>> scores;  // [system][subset]
  std::vector<double> mean;
  std::vector<double> std;  // population standard deviation
  /// Fraction of subsets on which each system has the lowest score; ties go
  /// to the lowest system index, so fractions sum to 1.
  std::vector<double> count_best;
  int64_t n_subsets = 0;
  int64_t subset_size = 0;
  uint64_t seed = 0;

  nlohmann::json to_json() const;
};

/// Draws `n_subsets` random index subsets of size `subset_size` (without
/// replacement) from the real set and from the generated sets; every system
/// is scored on the same fake indices. Throws ConfigError when the subset
/// size exceeds any set.
KidReport subset_protocol(const torch::Tensor& real, const std::vector<torch::Tensor>& fakes,
                          int64_t n_subsets = 50, int64_t subset_size = 50, uint64_t seed = 0,
                          std::vector<std::string> names = {});

/// Copy-paste baseline: index of the corpus mask whose tight crop, rescaled
/// to the query's crop size, has the highest cosine similarity with the
/// query crop. Ties go to the lowest index. Throws EmptyMaskError for an
/// empty query and ConfigError for an empty corpus.
int64_t nn_mask_retrieve(const MaskTensor& query, std::span<const MaskTensor> corpus);

/// Embeds images one at a time so rows never depend on batch composition.
/// Returns [N, D] float64.
torch::Tensor extract_features(FeatureEmbedder& embedder, std::span<const ImageTensor> images);
/// Masks are mapped to grey images (2m - 1 on all channels) before embedding.
torch::Tensor extract_mask_features(FeatureEmbedder& embedder, std::span<const MaskTensor> masks);

/// Learned-perceptual-style distance: channel-normalized activations of the
/// perceptual network, squared difference averaged over channels and positions.
double perceptual_distance(PerceptualNet& phi, const ImageTensor& a, const ImageTensor& b);
/// Mean over unordered pairs of `perceptual_distance`.
double mean_pairwise_perceptual(PerceptualNet& phi, std::span<const ImageTensor> images);
/// Mean over unordered pairs of the mean absolute difference.
double mean_pairwise_l1(std::span<const torch::Tensor> items);

/// Share of a mask's mass that lies inside the box raster.
double mass_inside_box(const MaskTensor& mask, const BoundingBox& box);

}  // namespace stamps
