#include "support/fixtures.hpp"

#include <atomic>
#include <cmath>
#include <random>
#include <unistd.h>

namespace fixtures {

std::vector<double> to_vec(const torch::Tensor& t) {
  const auto c = t.detach().to(torch::kFloat64).contiguous().cpu();
  const double* p = c.data_ptr<double>();
  return {p, p + c.numel()};
}

oracle::Array to_array(const torch::Tensor& t) {
  oracle::Array a;
  a.data = to_vec(t);
  for (auto s : t.sizes()) a.shape.push_back(s);
  return a;
}

std::vector<oracle::Array> to_arrays(const std::vector<torch::Tensor>& ts) {
  std::vector<oracle::Array> out;
  for (const auto& t : ts) out.push_back(to_array(t));
  return out;
}

oracle::Matrix to_matrix(const torch::Tensor& t) {
  const auto v = to_vec(t);
  const int64_t rows = t.size(0), cols = t.numel() / rows;
  oracle::Matrix m(rows);
  for (int64_t r = 0; r < rows; ++r) m[r].assign(v.begin() + r * cols, v.begin() + (r + 1) * cols);
  return m;
}

double rel_diff(double a, double b) {
  const double scale = std::max(std::fabs(a), std::fabs(b));
  return scale == 0 ? 0.0 : std::fabs(a - b) / scale;
}

stamps::MaskNetConfig tiny_mask_config(int64_t resolution) {
  stamps::MaskNetConfig c;
  c.resolution = resolution;
  c.z_dim = 2;
  c.base_channels = 2;
  c.max_channels = 2;
  c.downsamples = 1;
  c.res_blocks = 1;
  c.mlp_hidden = 0;
  c.disc_channels = 2;
  c.disc_layers = 2;
  return c;
}

stamps::TextureNetConfig tiny_texture_config(int64_t resolution) {
  stamps::TextureNetConfig c;
  c.resolution = resolution;
  c.z_dim = 2;
  c.base_channels = 2;
  c.max_channels = 2;
  c.downsamples = 1;
  c.res_blocks = 0;
  c.disc_channels = 2;
  c.disc_layers = 2;
  c.enc_channels = 2;
  c.enc_layers = 1;
  c.perceptual.width_divisor = 64;
  c.perceptual.tap_stage = 2;
  return c;
}

stamps::MaskNetConfig small_mask_config(int64_t resolution) {
  stamps::MaskNetConfig c;
  c.resolution = resolution;
  c.z_dim = 4;
  c.base_channels = 4;
  c.max_channels = 8;
  c.downsamples = 2;
  c.res_blocks = 1;
  c.mlp_hidden = 16;
  c.disc_channels = 4;
  c.disc_layers = 2;
  return c;
}

stamps::TextureNetConfig small_texture_config(int64_t resolution) {
  stamps::TextureNetConfig c;
  c.resolution = resolution;
  c.z_dim = 4;
  c.base_channels = 4;
  c.max_channels = 8;
  c.downsamples = 2;
  c.res_blocks = 1;
  c.disc_channels = 4;
  c.disc_layers = 2;
  c.enc_channels = 4;
  c.enc_layers = 2;
  c.perceptual.width_divisor = 32;
  c.perceptual.tap_stage = 2;
  return c;
}

std::vector<stamps::InstanceRecord> toy_records(int64_t count, int64_t resolution,
                                                uint64_t first_seed) {
  stamps::SynthConfig sc;
  sc.resolution = resolution;
  return stamps::synth_records(first_seed, count, sc);
}

stamps::Batch toy_batch(const std::vector<stamps::InstanceRecord>& records, torch::Dtype dtype) {
  std::vector<stamps::TrainingExample> ex;
  for (const auto& r : records) ex.push_back(stamps::make_example(r));
  return stamps::collate(ex).to(dtype);
}

int64_t count_elements(const stamps::Adam::NamedParams& params) {
  int64_t n = 0;
  for (const auto& [name, p] : params) n += p.numel();
  return n;
}

bool maps_equal(const stamps::nn::TensorMap& a, const stamps::nn::TensorMap& b) {
  if (a.size() != b.size()) return false;
  for (const auto& [k, v] : a) {
    auto it = b.find(k);
    if (it == b.end() || !v.sizes().equals(it->second.sizes()) || v.dtype() != it->second.dtype()) {
      return false;
    }
    if (!torch::equal(v, it->second)) return false;
  }
  return true;
}

stamps::nn::TensorMap clone_map(const stamps::nn::TensorMap& m) {
  stamps::nn::TensorMap out;
  for (const auto& [k, v] : m) out[k] = v.detach().clone();
  return out;
}

GradCheckResult gradient_check(const std::vector<GradGroup>& groups, double h) {
  GradCheckResult r;
  double diff2 = 0, a2 = 0, n2 = 0;
  for (const auto& group : groups) {
    for (const auto& p : group.params) {
      if (p.grad().defined()) p.mutable_grad().zero_();
    }
    group.loss().backward();
    std::vector<torch::Tensor> analytic;
    for (const auto& p : group.params) {
      analytic.push_back(p.grad().defined() ? p.grad().detach().clone() : torch::zeros_like(p));
      r.parameters += p.numel();
    }
    torch::NoGradGuard no_grad;
    for (size_t k = 0; k < group.params.size(); ++k) {
      auto flat = group.params[k].view({-1});
      auto grad = analytic[k].view({-1});
      for (int64_t e = 0; e < flat.numel(); ++e) {
        const double orig = flat[e].item<double>();
        flat[e] = orig + h;
        const double up = group.loss().item<double>();
        flat[e] = orig - h;
        const double down = group.loss().item<double>();
        flat[e] = orig;
        const double numeric = (up - down) / (2 * h);
        const double a = grad[e].item<double>();
        diff2 += (a - numeric) * (a - numeric);
        a2 += a * a;
        n2 += numeric * numeric;
        r.max_abs_error = std::max(r.max_abs_error, std::fabs(a - numeric));
      }
    }
  }
  const double scale = std::sqrt(std::max(a2, n2));
  r.relative_error = scale == 0 ? 0 : std::sqrt(diff2) / scale;
  return r;
}

GradCheckResult gradient_check(const std::vector<torch::Tensor>& params,
                               const std::function<torch::Tensor()>& loss, double h) {
  return gradient_check(std::vector<GradGroup>{{params, loss}}, h);
}

void jitter_biases(const stamps::Adam::NamedParams& params, uint64_t seed) {
  auto g = stamps::nn::make_generator(seed);
  torch::NoGradGuard no_grad;
  for (const auto& [name, p] : params) {
    if (name.size() >= 4 && name.compare(name.size() - 4, 4, "bias") == 0) {
      p.copy_(torch::randn(p.sizes(), g, torch::kFloat64).to(p.dtype()) * 0.1);
    }
  }
}

GradCheckResult mask_gradient_check(stamps::MaskGanBundle& b, const stamps::Batch& batch, uint64_t seed) {
  const auto params = b.generator_parameters();
  jitter_biases(params, seed);
  {
    torch::NoGradGuard no_grad;
    const auto real = b.discriminator->forward(stamps::mask_discriminator_input(b, batch.m, batch.b, batch.i));
    b.ema.update(real.features);
  }
  stamps::nn::set_requires_grad(*b.discriminator, false);
  auto g = stamps::nn::make_generator(seed + 1);
  const auto z = torch::randn({batch.size(), b.config.z_dim}, g, batch.i.scalar_type());
  std::vector<torch::Tensor> tensors;
  for (const auto& [n, p] : params) tensors.push_back(p);
  auto r = gradient_check(tensors, [&] {
    return stamps::mask_generator_loss(b, batch, stamps::mask_forward(b, batch, z), {}).total;
  });
  stamps::nn::set_requires_grad(*b.discriminator, true);
  return r;
}

GradCheckResult texture_gradient_check(stamps::TextureGanBundle& b, const stamps::Batch& batch,
                                       uint64_t seed) {
  const auto params = b.generator_parameters();
  jitter_biases(params, seed);
  stamps::nn::set_requires_grad(*b.discriminator, false);
  auto g = stamps::nn::make_generator(seed + 1);
  const auto draws = stamps::TextureDraws::sample(batch.size(), b.config.z_dim, batch.i.scalar_type(), g);
  const stamps::TextureLossOptions options;
  auto objective = [&](bool with_rec) {
    auto fwd = stamps::texture_forward(b, batch, batch.m, draws, {});
    auto l = stamps::texture_generator_loss(b, batch, fwd, options);
    return with_rec ? l.total : l.total - options.lambdas.rec * l.rec;
  };
  GradGroup decoder{{}, [&] { return objective(true); }};
  GradGroup encoder{{}, [&] { return objective(false); }};
  for (const auto& [n, p] : params) (n.find("encoder") != std::string::npos ? encoder : decoder).params.push_back(p);
  auto r = gradient_check({decoder, encoder});
  stamps::nn::set_requires_grad(*b.discriminator, true);
  return r;
}

TempDir::TempDir() {
  static std::atomic<int> counter{0};
  std::random_device rd;
  path_ = std::filesystem::temp_directory_path() /
          ("stamps-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++) + "-" +
           std::to_string(rd()));
  std::filesystem::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path_, ec);
}

}  // namespace fixtures
