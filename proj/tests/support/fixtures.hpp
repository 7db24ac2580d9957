#pragma once

// Shared helpers for the unit and acceptance binaries: tensor conversion for
// the oracles, small network configs, toy data and a finite-difference check.

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "stamps/dataset.hpp"
#include "stamps/mask_gan.hpp"
#include "stamps/nn_blocks.hpp"
#include "stamps/texture_gan.hpp"
#include "support/oracles.hpp"

namespace fixtures {

std::vector<double> to_vec(const torch::Tensor& t);
oracle::Array to_array(const torch::Tensor& t);
std::vector<oracle::Array> to_arrays(const std::vector<torch::Tensor>& ts);
oracle::Matrix to_matrix(const torch::Tensor& t);

double rel_diff(double a, double b);

/// Mask and texture configs with fewer than 500 generator-side parameters.
stamps::MaskNetConfig tiny_mask_config(int64_t resolution = 16);
stamps::TextureNetConfig tiny_texture_config(int64_t resolution = 16);
/// Small but non-trivial configs for fast behavioural tests.
stamps::MaskNetConfig small_mask_config(int64_t resolution = 16);
stamps::TextureNetConfig small_texture_config(int64_t resolution = 16);

std::vector<stamps::InstanceRecord> toy_records(int64_t count, int64_t resolution = 16,
                                                uint64_t first_seed = 0);
stamps::Batch toy_batch(const std::vector<stamps::InstanceRecord>& records,
                        torch::Dtype dtype = torch::kFloat32);

/// Number of generator-side parameters (elements).
int64_t count_elements(const stamps::Adam::NamedParams& params);

bool maps_equal(const stamps::nn::TensorMap& a, const stamps::nn::TensorMap& b);
stamps::nn::TensorMap clone_map(const stamps::nn::TensorMap& m);

struct GradCheckResult {
  int64_t parameters = 0;
  /// ||analytic - numeric|| / max(||analytic||, ||numeric||) over all parameters.
  double relative_error = 0;
  /// Largest element-wise |analytic - numeric|.
  double max_abs_error = 0;
};

struct GradGroup {
  std::vector<torch::Tensor> params;
  std::function<torch::Tensor()> loss;
};

/// Central differences with step `h` on every element of each group's
/// parameters against that group's loss (float64). Errors are pooled.
GradCheckResult gradient_check(const std::vector<GradGroup>& groups, double h = 1e-6);
GradCheckResult gradient_check(const std::vector<torch::Tensor>& params,
                               const std::function<torch::Tensor()>& loss, double h = 1e-6);

/// Replaces zero-initialized biases with small random values so that no
/// pre-activation sits exactly on a ReLU kink.
void jitter_biases(const stamps::Adam::NamedParams& params, uint64_t seed);

/// Full generator-side objective of the mask stage against a frozen D.
GradCheckResult mask_gradient_check(stamps::MaskGanBundle& b, const stamps::Batch& batch, uint64_t seed);
/// Same for the texture stage. Encoder parameters are checked against the
/// objective without the latent reconstruction term, which does not reach them.
GradCheckResult texture_gradient_check(stamps::TextureGanBundle& b, const stamps::Batch& batch, uint64_t seed);

class TempDir {
 public:
  TempDir();
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace fixtures
