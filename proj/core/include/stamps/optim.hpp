#pragma once

// Adaptive-moment (Adam) optimizer with explicit, serializable state.

#include <string>
#include <utility>
#include <vector>

#include <torch/torch.h>

#include "stamps/nn_blocks.hpp"

namespace stamps {

struct AdamOptions {
  double lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.99;
  double eps = 1e-8;
};

class Adam {
 public:
  using NamedParams = std::vector<std::pair<std::string, torch::Tensor>>;

  Adam(NamedParams params, AdamOptions options);

  void zero_grad();
  /// Parameters without a gradient are skipped and keep their moments.
  void step();

  double lr() const { return options_.lr; }
  void set_lr(double lr) { options_.lr = lr; }
  int64_t steps() const { return steps_; }
  const AdamOptions& options() const { return options_; }

  /// Moments keyed "<name>.m" / "<name>.v" plus "<prefix>.step" via the caller.
  nn::TensorMap state(const std::string& prefix) const;
  void load_state(const nn::TensorMap& state, const std::string& prefix);

  const NamedParams& params() const { return params_; }

 private:
  NamedParams params_;
  std::vector<torch::Tensor> m_;
  std::vector<torch::Tensor> v_;
  std::vector<int64_t> t_;
  AdamOptions options_;
  int64_t steps_ = 0;
};

/// Named parameters of a module, keys prefixed with `prefix`.
Adam::NamedParams named_params(torch::nn::Module& module, const std::string& prefix);

}  // namespace stamps
