#include "stamps/feature_nets.hpp"

#include <cmath>

#include "stamps/codec.hpp"
#include "stamps/errors.hpp"
#include "stamps/nn_blocks.hpp"
#include "stamps/tensor_archive.hpp"

namespace stamps {

namespace F = torch::nn::functional;

namespace {

// Random ReLU features with He-scaled weights keep activations O(1) per stage.
void seeded_conv_init(torch::nn::Module& m, uint64_t seed) {
  nn::init_weights(m, seed, std::sqrt(2.0));
}

}  // namespace

nlohmann::json PerceptualConfig::to_json() const {
  return {{"width_divisor", width_divisor}, {"tap_stage", tap_stage},
          {"seed", seed},                   {"weights_path", weights_path},
          {"imagenet_normalize", imagenet_normalize}};
}

PerceptualConfig PerceptualConfig::from_json(const nlohmann::json& j) {
  PerceptualConfig c;
  c.width_divisor = j.value("width_divisor", c.width_divisor);
  c.tap_stage = j.value("tap_stage", c.tap_stage);
  c.seed = j.value("seed", c.seed);
  c.weights_path = j.value("weights_path", c.weights_path);
  c.imagenet_normalize = j.value("imagenet_normalize", c.imagenet_normalize);
  return c;
}

PerceptualNetImpl::PerceptualNetImpl(const PerceptualConfig& config) : config_(config) {
  if (config.tap_stage < 1 || config.tap_stage > 3) throw ConfigError("tap_stage must be 1, 2 or 3");
  if (config.width_divisor < 1) throw ConfigError("width_divisor must be >= 1");
  const int64_t widths[3] = {64, 128, 256};
  const int convs_per_stage[3] = {2, 2, 3};
  int64_t in = 3;
  for (int64_t s = 0; s < config.tap_stage; ++s) {
    std::vector<torch::nn::Conv2d> stage;
    const int64_t out = std::max<int64_t>(1, widths[s] / config.width_divisor);
    for (int k = 0; k < convs_per_stage[s]; ++k) {
      auto conv = torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).padding(1));
      stage.push_back(register_module(
          "stage" + std::to_string(s + 1) + "_conv" + std::to_string(k), conv));
      in = out;
    }
    stages_.push_back(std::move(stage));
  }
}

torch::Tensor PerceptualNetImpl::forward(const torch::Tensor& x) {
  auto h = x;
  if (config_.imagenet_normalize) {
    auto opts = x.options();
    auto mean = torch::tensor({0.485, 0.456, 0.406}, opts).view({1, 3, 1, 1});
    auto stdv = torch::tensor({0.229, 0.224, 0.225}, opts).view({1, 3, 1, 1});
    h = ((h + 1) * 0.5 - mean) / stdv;
  }
  for (size_t s = 0; s < stages_.size(); ++s) {
    if (s > 0) h = F::max_pool2d(h, F::MaxPool2dFuncOptions(2).stride(2));
    for (auto& conv : stages_[s]) h = torch::relu(conv->forward(h));
  }
  return h;
}

PerceptualNet make_perceptual_net(const PerceptualConfig& config) {
  PerceptualNet net(config);
  std::string identity;
  if (config.weights_path.empty()) {
    seeded_conv_init(*net, config.seed);
    identity = "seeded:" + std::to_string(config.seed) + "/div" +
               std::to_string(config.width_divisor) + "/tap" + std::to_string(config.tap_stage);
  } else {
    auto archive = read_archive(config.weights_path);
    torch::NoGradGuard no_grad;
    for (auto& p : net->named_parameters(true)) {
      auto it = archive.tensors.find(p.key());
      if (it == archive.tensors.end()) throw FormatError("perceptual weights missing " + p.key());
      if (it->second.sizes() != p.value().sizes()) {
        throw FormatError("perceptual weights shape mismatch for " + p.key());
      }
      p.value().copy_(it->second.to(torch::kFloat32));
    }
    identity = "sha256:" + sha256_file(config.weights_path);
  }
  nn::set_requires_grad(*net, false);
  net->eval();
  net->set_identity(std::move(identity));
  return net;
}

nlohmann::json EmbedderConfig::to_json() const {
  return {{"base_width", base_width}, {"layers", layers}, {"seed", seed}, {"weights_path", weights_path}};
}

EmbedderConfig EmbedderConfig::from_json(const nlohmann::json& j) {
  EmbedderConfig c;
  c.base_width = j.value("base_width", c.base_width);
  c.layers = j.value("layers", c.layers);
  c.seed = j.value("seed", c.seed);
  c.weights_path = j.value("weights_path", c.weights_path);
  return c;
}

FeatureEmbedderImpl::FeatureEmbedderImpl(const EmbedderConfig& config) {
  if (config.layers < 1 || config.base_width < 1) throw ConfigError("bad embedder shape");
  int64_t in = 3;
  int64_t out = config.base_width;
  for (int64_t k = 0; k < config.layers; ++k) {
    convs_.push_back(register_module(
        "conv" + std::to_string(k),
        torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).stride(2).padding(1))));
    in = out;
    out *= 2;
  }
  feature_dim_ = in;
}

torch::Tensor FeatureEmbedderImpl::forward(const torch::Tensor& x) {
  auto h = x;
  for (auto& c : convs_) h = torch::relu(c->forward(h));
  return h.mean({2, 3});
}

FeatureEmbedder make_feature_embedder(const EmbedderConfig& config) {
  FeatureEmbedder net(config);
  std::string identity;
  if (config.weights_path.empty()) {
    seeded_conv_init(*net, config.seed);
    identity = "seeded:" + std::to_string(config.seed) + "/w" + std::to_string(config.base_width) +
               "/l" + std::to_string(config.layers);
  } else {
    auto archive = read_archive(config.weights_path);
    nn::TensorMap state;
    for (auto& [k, v] : archive.tensors) state["embedder." + k] = v.to(torch::kFloat32);
    nn::load_state(*net, state, "embedder");
    identity = "sha256:" + sha256_file(config.weights_path);
  }
  nn::set_requires_grad(*net, false);
  net->eval();
  net->set_identity(std::move(identity));
  return net;
}

}  // namespace stamps
