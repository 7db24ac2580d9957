#include "stamps/mask_gan.hpp"

#include <cmath>

#include "stamps/errors.hpp"
#include "stamps/losses.hpp"

namespace stamps {

namespace F = torch::nn::functional;

// Config -------------------------------------------------------------------------

nlohmann::json MaskNetConfig::to_json() const {
  return {{"resolution", resolution},     {"z_dim", z_dim},
          {"base_channels", base_channels}, {"max_channels", max_channels},
          {"downsamples", downsamples},   {"res_blocks", res_blocks},
          {"mlp_hidden", mlp_hidden},     {"disc_channels", disc_channels},
          {"disc_layers", disc_layers},   {"ema_decay", ema_decay},
          {"mrecon", mrecon},             {"bgcond", bgcond}};
}

MaskNetConfig MaskNetConfig::from_json(const nlohmann::json& j) {
  MaskNetConfig c;
  c.resolution = j.value("resolution", c.resolution);
  c.z_dim = j.value("z_dim", c.z_dim);
  c.base_channels = j.value("base_channels", c.base_channels);
  c.max_channels = j.value("max_channels", c.max_channels);
  c.downsamples = j.value("downsamples", c.downsamples);
  c.res_blocks = j.value("res_blocks", c.res_blocks);
  c.mlp_hidden = j.value("mlp_hidden", c.mlp_hidden);
  c.disc_channels = j.value("disc_channels", c.disc_channels);
  c.disc_layers = j.value("disc_layers", c.disc_layers);
  c.ema_decay = j.value("ema_decay", c.ema_decay);
  c.mrecon = j.value("mrecon", c.mrecon);
  c.bgcond = j.value("bgcond", c.bgcond);
  c.validate();
  return c;
}

void MaskNetConfig::validate() const {
  if (z_dim <= 0) throw ConfigError("mask z_dim must be positive");
  if (base_channels <= 0 || max_channels < base_channels) throw ConfigError("bad mask channel widths");
  if (downsamples < 0 || res_blocks < 0 || mlp_hidden < 0) throw ConfigError("negative mask layer count");
  if (resolution % (int64_t{1} << downsamples) != 0) {
    throw ConfigError("mask resolution must be divisible by 2^downsamples");
  }
  if (!(ema_decay >= 0.0 && ema_decay < 1.0)) throw ConfigError("ema_decay must lie in [0, 1)");
  if (disc_layers < 1 || disc_channels <= 0) throw ConfigError("bad mask discriminator shape");
}

// Networks -----------------------------------------------------------------------

MlpImpl::MlpImpl(int64_t in, int64_t hidden, int64_t out) {
  if (hidden == 0) {
    layers_.push_back(register_module("fc0", torch::nn::Linear(in, out)));
    return;
  }
  layers_.push_back(register_module("fc0", torch::nn::Linear(in, hidden)));
  layers_.push_back(register_module("fc1", torch::nn::Linear(hidden, hidden)));
  layers_.push_back(register_module("fc2", torch::nn::Linear(hidden, out)));
}

torch::Tensor MlpImpl::forward(const torch::Tensor& x) {
  auto h = x;
  for (size_t k = 0; k < layers_.size(); ++k) {
    h = layers_[k]->forward(h);
    if (k + 1 < layers_.size()) h = nn::leaky_relu(h);
  }
  return h;
}

MaskGeneratorImpl::MaskGeneratorImpl(const MaskNetConfig& config) : config_(config) {
  config.validate();
  auto conv = [](int64_t in, int64_t out, int64_t k, int64_t stride, int64_t pad) {
    return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, k).stride(stride).padding(pad));
  };
  std::vector<int64_t> widths{config.base_channels};
  for (int64_t k = 0; k < config.downsamples; ++k) {
    widths.push_back(std::min(widths.back() * 2, config.max_channels));
  }
  stem_ = register_module("stem", conv(4, widths[0], 3, 1, 1));
  adain_channels_.push_back(widths[0]);
  for (int64_t k = 0; k < config.downsamples; ++k) {
    down_.push_back(register_module("down" + std::to_string(k), conv(widths[k], widths[k + 1], 4, 2, 1)));
    adain_channels_.push_back(widths[k + 1]);
  }
  const int64_t deep = widths.back();
  for (int64_t r = 0; r < config.res_blocks; ++r) {
    auto a = register_module("res" + std::to_string(r) + "a", conv(deep, deep, 3, 1, 1));
    auto b = register_module("res" + std::to_string(r) + "b", conv(deep, deep, 3, 1, 1));
    res_.emplace_back(a, b);
    adain_channels_.push_back(deep);
    adain_channels_.push_back(deep);
  }
  for (int64_t k = config.downsamples; k > 0; --k) {
    up_.push_back(register_module("up" + std::to_string(k - 1), conv(widths[k], widths[k - 1], 3, 1, 1)));
    adain_channels_.push_back(widths[k - 1]);
  }
  head_ = register_module("head", conv(widths[0], 1, 3, 1, 1));
  for (int64_t c : adain_channels_) adain_total_ += 2 * c;
}

torch::Tensor MaskGeneratorImpl::norm(const torch::Tensor& x, const torch::Tensor& adain,
                                      int64_t& offset) const {
  const int64_t c = x.size(1);
  auto gamma = adain.narrow(1, offset, c);
  auto beta = adain.narrow(1, offset + c, c);
  offset += 2 * c;
  return nn::adain(x, gamma, beta);
}

torch::Tensor MaskGeneratorImpl::forward(const torch::Tensor& input, const torch::Tensor& adain) {
  if (input.dim() != 4 || input.size(1) != 4) {
    throw DimensionError("mask generator expects [N, 4, H, W] input");
  }
  if (adain.dim() != 2 || adain.size(1) != adain_total_ || adain.size(0) != input.size(0)) {
    throw DimensionError("mask generator: AdaIN parameter shape mismatch");
  }
  int64_t offset = 0;
  auto h = nn::leaky_relu(norm(stem_->forward(input), adain, offset));
  for (auto& d : down_) h = nn::leaky_relu(norm(d->forward(h), adain, offset));
  for (auto& [a, b] : res_) {
    auto r = nn::leaky_relu(norm(a->forward(h), adain, offset));
    r = norm(b->forward(r), adain, offset);
    h = h + r;
  }
  for (auto& u : up_) {
    h = F::interpolate(h, F::InterpolateFuncOptions().scale_factor(std::vector<double>{2.0, 2.0})
                              .mode(torch::kNearest));
    h = nn::leaky_relu(norm(u->forward(h), adain, offset));
  }
  return torch::sigmoid(head_->forward(h));
}

MaskLatentEncoderImpl::MaskLatentEncoderImpl(const MaskNetConfig& config) {
  int64_t in = 1;
  int64_t out = config.base_channels;
  for (int64_t k = 0; k < std::max<int64_t>(config.downsamples, 1); ++k) {
    convs_.push_back(register_module(
        "conv" + std::to_string(k),
        torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 4).stride(2).padding(1))));
    in = out;
    out = std::min(out * 2, config.max_channels);
  }
  out_ = register_module("out", torch::nn::Linear(in, config.z_dim));
}

torch::Tensor MaskLatentEncoderImpl::forward(const torch::Tensor& mask) {
  auto h = mask;
  for (auto& c : convs_) h = nn::leaky_relu(c->forward(h));
  return out_->forward(h.mean({2, 3}));
}

// EMA --------------------------------------------------------------------------------

void EmaFeatures::update(const std::vector<torch::Tensor>& features) {
  torch::NoGradGuard no_grad;
  if (means_.empty()) {
    for (const auto& f : features) means_.push_back(torch::zeros_like(f.select(0, 0)).unsqueeze(0));
  }
  if (features.size() != means_.size()) throw DimensionError("EMA: layer count changed");
  for (size_t l = 0; l < features.size(); ++l) {
    auto batch_mean = features[l].detach().mean(0, /*keepdim=*/true);
    if (batch_mean.sizes() != means_[l].sizes()) throw DimensionError("EMA: feature shape changed");
    means_[l] = means_[l] * decay_ + batch_mean * (1.0 - decay_);
  }
  ++updates_;
}

torch::Tensor EmaFeatures::loss(const std::vector<torch::Tensor>& features) const {
  if (means_.empty()) throw UninitializedEmaError("feature matching before the first EMA update");
  return losses::feature_matching_sum(features, means_);
}

nn::TensorMap EmaFeatures::state(const std::string& prefix) const {
  nn::TensorMap out;
  for (size_t l = 0; l < means_.size(); ++l) out[prefix + ".layer" + std::to_string(l)] = means_[l];
  out[prefix + ".__updates"] = torch::tensor({updates_}, torch::kInt64);
  return out;
}

void EmaFeatures::load_state(const nn::TensorMap& state, const std::string& prefix) {
  means_.clear();
  for (size_t l = 0;; ++l) {
    auto it = state.find(prefix + ".layer" + std::to_string(l));
    if (it == state.end()) break;
    means_.push_back(it->second.clone());
  }
  auto it = state.find(prefix + ".__updates");
  updates_ = it == state.end() ? 0 : it->second.item<int64_t>();
}

void EmaFeatures::to(torch::Dtype dtype) {
  for (auto& m : means_) m = m.to(dtype);
}

// Bundle ---------------------------------------------------------------------------

MaskGanBundle MaskGanBundle::create(const MaskNetConfig& config, uint64_t seed) {
  config.validate();
  MaskGanBundle b;
  b.config = config;
  b.generator = MaskGenerator(config);
  nn::DiscriminatorConfig dc;
  dc.in_channels = config.bgcond ? 5 : 2;
  dc.base_channels = config.disc_channels;
  dc.max_channels = std::max(config.disc_channels, config.max_channels);
  dc.layers = config.disc_layers;
  b.discriminator = nn::FeatureDiscriminator(dc);
  const int64_t p = b.generator->adain_parameter_count();
  b.encoder = Mlp(4 + config.z_dim, config.mlp_hidden, p);
  b.decoder = Mlp(p, config.mlp_hidden, config.z_dim);
  if (config.mrecon) b.mask_encoder = MaskLatentEncoder(config);
  b.ema = EmaFeatures(config.ema_decay);

  nn::init_weights(*b.generator, seed * 8 + 1);
  nn::init_weights(*b.discriminator, seed * 8 + 2);
  // Small output gain keeps the initial AdaIN transform near identity.
  nn::init_weights(*b.encoder, seed * 8 + 3, 0.5);
  nn::init_weights(*b.decoder, seed * 8 + 4);
  if (b.mask_encoder) nn::init_weights(*b.mask_encoder, seed * 8 + 5);
  return b;
}

Adam::NamedParams MaskGanBundle::generator_parameters() {
  auto out = named_params(*generator, "mask.generator");
  auto enc = named_params(*encoder, "mask.encoder");
  out.insert(out.end(), enc.begin(), enc.end());
  if (config.mrecon) {
    auto me = named_params(*mask_encoder, "mask.mask_encoder");
    out.insert(out.end(), me.begin(), me.end());
  } else {
    auto dec = named_params(*decoder, "mask.decoder");
    out.insert(out.end(), dec.begin(), dec.end());
  }
  return out;
}

Adam::NamedParams MaskGanBundle::discriminator_parameters() {
  return named_params(*discriminator, "mask.discriminator");
}

void MaskGanBundle::to(torch::Dtype d) {
  generator->to(d);
  discriminator->to(d);
  encoder->to(d);
  decoder->to(d);
  if (mask_encoder) mask_encoder->to(d);
  ema.to(d);
  dtype = d;
}

nn::TensorMap MaskGanBundle::state() const {
  nn::TensorMap out = nn::state_of(*generator, "mask.generator");
  out.merge(nn::state_of(*discriminator, "mask.discriminator"));
  out.merge(nn::state_of(*encoder, "mask.encoder"));
  out.merge(nn::state_of(*decoder, "mask.decoder"));
  if (mask_encoder) out.merge(nn::state_of(*mask_encoder, "mask.mask_encoder"));
  out.merge(ema.state("mask.ema"));
  return out;
}

void MaskGanBundle::load_state(const nn::TensorMap& state) {
  nn::load_state(*generator, state, "mask.generator");
  nn::load_state(*discriminator, state, "mask.discriminator");
  nn::load_state(*encoder, state, "mask.encoder");
  nn::load_state(*decoder, state, "mask.decoder");
  if (mask_encoder) nn::load_state(*mask_encoder, state, "mask.mask_encoder");
  ema.load_state(state, "mask.ema");
  ema.to(dtype);
}

// Forward / losses --------------------------------------------------------------------

torch::Tensor mask_generator_input(const torch::Tensor& i_b, const torch::Tensor& b_raster) {
  return torch::cat({i_b, b_raster}, 1);
}

MaskForward mask_forward(MaskGanBundle& bundle, const Batch& batch, const torch::Tensor& z) {
  if (z.dim() != 2 || z.size(1) != bundle.config.z_dim) {
    throw ConfigError("z_m has dimension " + std::to_string(z.size(-1)) + ", model expects " +
                      std::to_string(bundle.config.z_dim));
  }
  MaskForward f;
  f.z = z;
  f.adain = bundle.encoder->forward(torch::cat({batch.b_vec, z}, 1));
  f.mask = bundle.generator->forward(mask_generator_input(batch.i_b, batch.b), f.adain);
  f.z_hat = bundle.config.mrecon ? bundle.mask_encoder->forward(f.mask)
                                 : bundle.decoder->forward(f.adain);
  return f;
}

torch::Tensor mask_discriminator_input(const MaskGanBundle& bundle, const torch::Tensor& mask,
                                       const torch::Tensor& b_raster, const torch::Tensor& image) {
  if (!bundle.config.bgcond) return torch::cat({mask, b_raster}, 1);
  return torch::cat({mask, b_raster, image * mask}, 1);
}

double MaskLossBreakdown::weighted_total(double adv, double fm, double rec, const MaskLambdas& l) {
  return adv + l.fm * fm + l.rec * rec;
}

std::map<std::string, double> MaskLossBreakdown::to_map() const {
  return {{"adv_g", adv_g}, {"adv_d", adv_d}, {"fm", fm},
          {"rec", rec},     {"total_g", total_g}, {"total_d", total_d}};
}

MaskGeneratorLoss mask_generator_loss(MaskGanBundle& bundle, const Batch& batch,
                                      const MaskForward& fwd, const MaskLambdas& lambdas,
                                      bool use_fm) {
  auto out = bundle.discriminator->forward(
      mask_discriminator_input(bundle, fwd.mask, batch.b, batch.i));
  MaskGeneratorLoss l;
  l.adv = losses::hinge_g_loss(out.score);
  l.fm = use_fm ? bundle.ema.loss(out.features) : torch::zeros({}, fwd.mask.options());
  l.rec = losses::latent_reconstruction(fwd.z, fwd.z_hat);
  l.total = l.adv + lambdas.fm * l.fm + lambdas.rec * l.rec;
  return l;
}

namespace {

double scalar(const torch::Tensor& t) { return t.detach().to(torch::kFloat64).item<double>(); }

void check_finite(const MaskLossBreakdown& b, const char* phase) {
  for (const auto& [k, v] : b.to_map()) {
    if (!std::isfinite(v)) {
      throw DivergenceError(std::string("mask training diverged during ") + phase + " (" + k + ")",
                            b.to_map());
    }
  }
}

}  // namespace

MaskLossBreakdown mask_train_step(const Batch& batch, MaskGanBundle& bundle, Adam& g_opt,
                                  Adam& d_opt, at::Generator& rng, const MaskStepOptions& options) {
  MaskLossBreakdown out;
  auto z = torch::randn({batch.size(), bundle.config.z_dim}, rng,
                        torch::TensorOptions().dtype(bundle.dtype));
  auto fwd = mask_forward(bundle, batch, z);
  const auto real_in = mask_discriminator_input(bundle, batch.m, batch.b, batch.i);

  // Discriminator update.
  nn::set_requires_grad(*bundle.discriminator, true);
  auto d_real = bundle.discriminator->forward(real_in);
  auto d_fake = bundle.discriminator->forward(
      mask_discriminator_input(bundle, fwd.mask.detach(), batch.b, batch.i));
  auto adv_d = losses::hinge_d_loss(d_real.score, d_fake.score);
  out.adv_d = out.total_d = scalar(adv_d);
  check_finite(out, "the discriminator step");
  d_opt.zero_grad();
  adv_d.backward();
  d_opt.step();

  if (!bundle.ema.initialized()) {
    torch::NoGradGuard no_grad;
    bundle.ema.update(bundle.discriminator->forward(real_in).features);
  }

  // Generator update against the pre-update running means.
  nn::set_requires_grad(*bundle.discriminator, false);
  auto g = mask_generator_loss(bundle, batch, fwd, options.lambdas, options.use_fm);
  out.adv_g = scalar(g.adv);
  out.fm = scalar(g.fm);
  out.rec = scalar(g.rec);
  out.total_g = MaskLossBreakdown::weighted_total(out.adv_g, out.fm, out.rec, options.lambdas);
  check_finite(out, "the generator step");
  g_opt.zero_grad();
  g.total.backward();
  g_opt.step();
  nn::set_requires_grad(*bundle.discriminator, true);

  {
    torch::NoGradGuard no_grad;
    bundle.ema.update(bundle.discriminator->forward(real_in).features);
  }
  return out;
}

MaskTensor gen_mask(MaskGanBundle& bundle, const ImageTensor& i_b, const LatentVector& z,
                    const BoundingBox& b) {
  if (z.dim() != bundle.config.z_dim) {
    throw ConfigError("z_m has dimension " + std::to_string(z.dim()) + ", model expects " +
                      std::to_string(bundle.config.z_dim));
  }
  if (i_b.height() != b.raster.height() || i_b.width() != b.raster.width()) {
    throw DimensionError("gen_mask: image and box raster sizes differ");
  }
  torch::NoGradGuard no_grad;
  Batch batch;
  batch.i_b = i_b.to_nchw().to(bundle.dtype);
  batch.b = b.raster.to_nchw().to(bundle.dtype);
  batch.b_vec = b.vec_tensor().unsqueeze(0).to(bundle.dtype);
  auto fwd = mask_forward(bundle, batch, z.values.unsqueeze(0).to(bundle.dtype));
  return MaskTensor::from_chw(fwd.mask.to(torch::kFloat32));
}

}  // namespace stamps
