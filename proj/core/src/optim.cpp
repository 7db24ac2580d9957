#include "stamps/optim.hpp"

#include <cmath>

#include "stamps/errors.hpp"

namespace stamps {

Adam::Adam(NamedParams params, AdamOptions options)
    : params_(std::move(params)), options_(options) {
  for (const auto& [name, p] : params_) {
    m_.push_back(torch::zeros_like(p));
    v_.push_back(torch::zeros_like(p));
    t_.push_back(0);
  }
}

void Adam::zero_grad() {
  for (auto& [name, p] : params_) {
    if (p.grad().defined()) {
      p.mutable_grad().detach_();
      p.mutable_grad().zero_();
    }
  }
}

void Adam::step() {
  torch::NoGradGuard no_grad;
  ++steps_;
  for (size_t k = 0; k < params_.size(); ++k) {
    auto& p = params_[k].second;
    if (!p.grad().defined()) continue;
    const auto& g = p.grad();
    const int64_t t = ++t_[k];
    m_[k].mul_(options_.beta1).add_(g, 1.0 - options_.beta1);
    v_[k].mul_(options_.beta2).addcmul_(g, g, 1.0 - options_.beta2);
    const double bias1 = 1.0 - std::pow(options_.beta1, static_cast<double>(t));
    const double bias2 = 1.0 - std::pow(options_.beta2, static_cast<double>(t));
    auto denom = (v_[k] / bias2).sqrt_().add_(options_.eps);
    p.addcdiv_(m_[k], denom, -options_.lr / bias1);
  }
}

nn::TensorMap Adam::state(const std::string& prefix) const {
  nn::TensorMap out;
  for (size_t k = 0; k < params_.size(); ++k) {
    const auto& name = params_[k].first;
    out[prefix + "." + name + ".m"] = m_[k];
    out[prefix + "." + name + ".v"] = v_[k];
    out[prefix + "." + name + ".t"] = torch::tensor({t_[k]}, torch::kInt64);
  }
  out[prefix + ".__steps"] = torch::tensor({steps_}, torch::kInt64);
  return out;
}

void Adam::load_state(const nn::TensorMap& state, const std::string& prefix) {
  torch::NoGradGuard no_grad;
  auto fetch = [&](const std::string& key) -> const torch::Tensor& {
    const auto it = state.find(key);
    if (it == state.end()) throw FormatError("missing optimizer tensor " + key);
    return it->second;
  };
  for (size_t k = 0; k < params_.size(); ++k) {
    const auto& name = params_[k].first;
    const auto& m = fetch(prefix + "." + name + ".m");
    const auto& v = fetch(prefix + "." + name + ".v");
    if (m.sizes() != m_[k].sizes() || v.sizes() != v_[k].sizes()) {
      throw FormatError("optimizer state shape mismatch for " + name);
    }
    m_[k].copy_(m);
    v_[k].copy_(v);
    t_[k] = fetch(prefix + "." + name + ".t").item<int64_t>();
  }
  steps_ = fetch(prefix + ".__steps").item<int64_t>();
}

Adam::NamedParams named_params(torch::nn::Module& module, const std::string& prefix) {
  Adam::NamedParams out;
  for (auto& p : module.named_parameters(true)) out.emplace_back(prefix + "." + p.key(), p.value());
  return out;
}

}  // namespace stamps
