#include "stamps/nn_blocks.hpp"

#include <cmath>

#include <ATen/CPUGeneratorImpl.h>

#include "stamps/errors.hpp"

namespace stamps::nn {

namespace F = torch::nn::functional;

torch::Tensor instance_norm(const torch::Tensor& x) {
  return F::instance_norm(x, F::InstanceNormFuncOptions().eps(1e-5));
}

torch::Tensor adain(const torch::Tensor& x, const torch::Tensor& gamma, const torch::Tensor& beta) {
  auto g = gamma.unsqueeze(-1).unsqueeze(-1);
  auto b = beta.unsqueeze(-1).unsqueeze(-1);
  return instance_norm(x) * (1 + g) + b;
}

torch::Tensor leaky_relu(const torch::Tensor& x) {
  return F::leaky_relu(x, F::LeakyReLUFuncOptions().negative_slope(0.2));
}

torch::Tensor tile_latent(const torch::Tensor& z, const torch::Tensor& like) {
  return z.unsqueeze(-1).unsqueeze(-1).expand({z.size(0), z.size(1), like.size(2), like.size(3)});
}

at::Generator make_generator(uint64_t seed) {
  return at::make_generator<at::CPUGeneratorImpl>(seed);
}

NoiseSource NoiseSource::seeded(uint64_t seed) { return NoiseSource{make_generator(seed)}; }

NoiseInjectionImpl::NoiseInjectionImpl(int64_t channels, double init_scale) {
  scale = register_parameter("scale", torch::full({channels}, init_scale));
}

torch::Tensor NoiseInjectionImpl::forward(const torch::Tensor& x, NoiseSource& noise) {
  if (!noise.enabled()) return x;
  auto n = torch::randn({x.size(0), 1, x.size(2), x.size(3)}, *noise.generator,
                        torch::TensorOptions().dtype(x.scalar_type()));
  return x + scale.view({1, -1, 1, 1}) * n;
}

FeatureDiscriminatorImpl::FeatureDiscriminatorImpl(const DiscriminatorConfig& config)
    : config_(config) {
  if (config.layers < 1) throw ConfigError("discriminator needs at least one layer");
  int64_t in = config.in_channels;
  int64_t out = config.base_channels;
  for (int64_t l = 0; l < config.layers; ++l) {
    auto conv = torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 4).stride(2).padding(1));
    convs_.push_back(register_module("conv" + std::to_string(l), conv));
    in = out;
    out = std::min(out * 2, config.max_channels);
  }
  head_ = register_module("head", torch::nn::Conv2d(torch::nn::Conv2dOptions(in, 1, 3).padding(1)));
}

DiscOutput FeatureDiscriminatorImpl::forward(const torch::Tensor& x) {
  DiscOutput out;
  auto h = x;
  for (auto& conv : convs_) {
    h = nn::leaky_relu(conv->forward(h));
    out.features.push_back(h);
  }
  out.score = head_->forward(h).mean({1, 2, 3});
  return out;
}

void init_weights(torch::nn::Module& module, uint64_t seed, double gain,
                  const std::vector<std::string>& keep) {
  torch::NoGradGuard no_grad;
  auto gen = make_generator(seed);
  // named_parameters() preserves registration order, so this is reproducible.
  for (auto& p : module.named_parameters(/*recurse=*/true)) {
    const auto& name = p.key();
    bool skip = false;
    for (const auto& suffix : keep) {
      if (name.size() >= suffix.size() &&
          name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0) {
        skip = true;
      }
    }
    if (skip) continue;
    auto& t = p.value();
    if (t.dim() > 1) {
      const double fan_in = static_cast<double>(t.numel() / t.size(0));
      t.normal_(0.0, gain / std::sqrt(fan_in), gen);
    } else {
      t.zero_();
    }
  }
}

TensorMap state_of(const torch::nn::Module& module, const std::string& prefix) {
  TensorMap out;
  for (const auto& p : module.named_parameters(true)) out[prefix + "." + p.key()] = p.value().detach();
  for (const auto& b : module.named_buffers(true)) out[prefix + "." + b.key()] = b.value().detach();
  return out;
}

void load_state(torch::nn::Module& module, const TensorMap& state, const std::string& prefix) {
  torch::NoGradGuard no_grad;
  auto assign = [&](const std::string& key, torch::Tensor& target) {
    const auto it = state.find(prefix + "." + key);
    if (it == state.end()) throw FormatError("missing tensor " + prefix + "." + key);
    if (it->second.sizes() != target.sizes()) {
      throw FormatError("shape mismatch for " + prefix + "." + key);
    }
    target.copy_(it->second);
  };
  for (auto& p : module.named_parameters(true)) assign(p.key(), p.value());
  for (auto& b : module.named_buffers(true)) assign(b.key(), b.value());
}

int64_t parameter_count(const torch::nn::Module& module) {
  int64_t n = 0;
  for (const auto& p : module.parameters(true)) n += p.numel();
  return n;
}

void set_requires_grad(torch::nn::Module& module, bool flag) {
  for (auto& p : module.parameters(true)) p.set_requires_grad(flag);
}

}  // namespace stamps::nn
