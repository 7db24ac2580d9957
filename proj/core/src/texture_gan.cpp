#include "stamps/texture_gan.hpp"

#include <cmath>

#include "stamps/errors.hpp"
#include "stamps/losses.hpp"

namespace stamps {

namespace F = torch::nn::functional;

// Config -------------------------------------------------------------------------

nlohmann::json TextureNetConfig::to_json() const {
  return {{"resolution", resolution},
          {"z_dim", z_dim},
          {"base_channels", base_channels},
          {"max_channels", max_channels},
          {"downsamples", downsamples},
          {"res_blocks", res_blocks},
          {"disc_channels", disc_channels},
          {"disc_layers", disc_layers},
          {"enc_channels", enc_channels},
          {"enc_layers", enc_layers},
          {"noise", noise},
          {"noise_init", noise_init},
          {"logvar_min", logvar_min},
          {"logvar_max", logvar_max},
          {"perceptual", perceptual.to_json()}};
}

TextureNetConfig TextureNetConfig::from_json(const nlohmann::json& j) {
  TextureNetConfig c;
  c.resolution = j.value("resolution", c.resolution);
  c.z_dim = j.value("z_dim", c.z_dim);
  c.base_channels = j.value("base_channels", c.base_channels);
  c.max_channels = j.value("max_channels", c.max_channels);
  c.downsamples = j.value("downsamples", c.downsamples);
  c.res_blocks = j.value("res_blocks", c.res_blocks);
  c.disc_channels = j.value("disc_channels", c.disc_channels);
  c.disc_layers = j.value("disc_layers", c.disc_layers);
  c.enc_channels = j.value("enc_channels", c.enc_channels);
  c.enc_layers = j.value("enc_layers", c.enc_layers);
  c.noise = j.value("noise", c.noise);
  c.noise_init = j.value("noise_init", c.noise_init);
  c.logvar_min = j.value("logvar_min", c.logvar_min);
  c.logvar_max = j.value("logvar_max", c.logvar_max);
  if (j.contains("perceptual")) c.perceptual = PerceptualConfig::from_json(j.at("perceptual"));
  c.validate();
  return c;
}

void TextureNetConfig::validate() const {
  if (z_dim <= 0) throw ConfigError("texture z_dim must be positive");
  if (base_channels <= 0 || max_channels < base_channels) throw ConfigError("bad texture channel widths");
  if (downsamples < 1 || res_blocks < 0) throw ConfigError("bad texture layer counts");
  if (resolution % (int64_t{1} << downsamples) != 0) {
    throw ConfigError("texture resolution must be divisible by 2^downsamples");
  }
  if (enc_layers < 1 || enc_channels <= 0) throw ConfigError("bad texture encoder shape");
  if (!(logvar_min < logvar_max)) throw ConfigError("logvar clamp range is empty");
}

// Networks -----------------------------------------------------------------------

namespace {

torch::nn::Conv2d conv(int64_t in, int64_t out, int64_t k, int64_t stride, int64_t pad) {
  return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, k).stride(stride).padding(pad));
}

torch::Tensor norm_act(const torch::Tensor& x) { return nn::leaky_relu(nn::instance_norm(x)); }

}  // namespace

TextureGeneratorImpl::TextureGeneratorImpl(const TextureNetConfig& config) : config_(config) {
  config.validate();
  std::vector<int64_t> widths{config.base_channels};
  for (int64_t k = 0; k < config.downsamples; ++k) {
    widths.push_back(std::min(widths.back() * 2, config.max_channels));
  }
  stem_ = register_module("stem", conv(4, widths[0], 3, 1, 1));
  for (int64_t k = 0; k < config.downsamples; ++k) {
    down_.push_back(register_module("down" + std::to_string(k), conv(widths[k], widths[k + 1], 4, 2, 1)));
  }
  const int64_t deep = widths.back();
  fuse_ = register_module("fuse", conv(deep + config.z_dim, deep, 3, 1, 1));
  for (int64_t r = 0; r < config.res_blocks; ++r) {
    res_.emplace_back(register_module("res" + std::to_string(r) + "a", conv(deep, deep, 3, 1, 1)),
                      register_module("res" + std::to_string(r) + "b", conv(deep, deep, 3, 1, 1)));
  }
  for (int64_t k = config.downsamples; k > 0; --k) {
    up_.push_back(register_module("up" + std::to_string(k - 1),
                                  conv(widths[k] + widths[k - 1], widths[k - 1], 3, 1, 1)));
    noise_.push_back(register_module("noise" + std::to_string(k - 1),
                                     nn::NoiseInjection(widths[k - 1], config.noise_init)));
  }
  head_ = register_module("head", conv(widths[0], 3, 3, 1, 1));
}

torch::Tensor TextureGeneratorImpl::forward(const torch::Tensor& i_masked, const torch::Tensor& mask,
                                            const torch::Tensor& z, nn::NoiseSource& noise) {
  if (i_masked.dim() != 4 || i_masked.size(1) != 3 || mask.dim() != 4 || mask.size(1) != 1) {
    throw DimensionError("texture generator expects [N, 3, H, W] image and [N, 1, H, W] mask");
  }
  if (z.dim() != 2 || z.size(1) != config_.z_dim) {
    throw ConfigError("z_t has dimension " + std::to_string(z.size(-1)) + ", model expects " +
                      std::to_string(config_.z_dim));
  }
  std::vector<torch::Tensor> skips;
  auto h = norm_act(stem_->forward(torch::cat({i_masked, mask}, 1)));
  skips.push_back(h);
  for (auto& d : down_) {
    h = norm_act(d->forward(h));
    skips.push_back(h);
  }
  h = norm_act(fuse_->forward(torch::cat({h, nn::tile_latent(z, h)}, 1)));
  for (auto& [a, b] : res_) {
    auto r = norm_act(a->forward(h));
    h = h + nn::instance_norm(b->forward(r));
  }
  nn::NoiseSource off = nn::NoiseSource::none();
  nn::NoiseSource& src = config_.noise ? noise : off;
  for (size_t k = 0; k < up_.size(); ++k) {
    h = F::interpolate(h, F::InterpolateFuncOptions().scale_factor(std::vector<double>{2.0, 2.0})
                              .mode(torch::kNearest));
    const auto& skip = skips[skips.size() - 2 - k];
    h = up_[k]->forward(torch::cat({h, skip}, 1));
    h = noise_[k]->forward(h, src);
    h = norm_act(h);
  }
  return torch::tanh(head_->forward(h));
}

TextureEncoderImpl::TextureEncoderImpl(const TextureNetConfig& config) : config_(config) {
  int64_t in = 3;
  int64_t out = config.enc_channels;
  for (int64_t k = 0; k < config.enc_layers; ++k) {
    convs_.push_back(register_module("conv" + std::to_string(k), conv(in, out, 4, 2, 1)));
    in = out;
    out = std::min(out * 2, config.max_channels);
  }
  mu_ = register_module("mu", torch::nn::Linear(in, config.z_dim));
  logvar_ = register_module("logvar", torch::nn::Linear(in, config.z_dim));
}

EncodedTexture TextureEncoderImpl::forward(const torch::Tensor& s, bool detach_params) {
  auto w = [detach_params](const torch::Tensor& t) { return detach_params ? t.detach() : t; };
  auto h = s;
  for (auto& c : convs_) {
    h = nn::leaky_relu(F::conv2d(h, w(c->weight),
                                 F::Conv2dFuncOptions().bias(w(c->bias)).stride(2).padding(1)));
  }
  h = h.mean({2, 3});
  EncodedTexture out;
  out.mu = F::linear(h, w(mu_->weight), w(mu_->bias));
  out.logvar = F::linear(h, w(logvar_->weight), w(logvar_->bias))
                   .clamp(config_.logvar_min, config_.logvar_max);
  return out;
}

// Bundle ---------------------------------------------------------------------------

TextureGanBundle TextureGanBundle::create(const TextureNetConfig& config, uint64_t seed,
                                          bool with_perceptual) {
  config.validate();
  TextureGanBundle b;
  b.config = config;
  b.generator = TextureGenerator(config);
  nn::DiscriminatorConfig dc;
  dc.in_channels = 4;
  dc.base_channels = config.disc_channels;
  dc.max_channels = std::max(config.disc_channels, config.max_channels);
  dc.layers = config.disc_layers;
  b.discriminator = nn::FeatureDiscriminator(dc);
  b.encoder = TextureEncoder(config);
  if (with_perceptual) b.perceptual = make_perceptual_net(config.perceptual);
  b.train_noise = nn::make_generator(seed * 8 + 7);

  nn::init_weights(*b.generator, seed * 8 + 1, 1.0, {"scale"});
  nn::init_weights(*b.discriminator, seed * 8 + 2);
  nn::init_weights(*b.encoder, seed * 8 + 3);
  return b;
}

Adam::NamedParams TextureGanBundle::generator_parameters() {
  auto out = named_params(*generator, "texture.generator");
  auto enc = named_params(*encoder, "texture.encoder");
  out.insert(out.end(), enc.begin(), enc.end());
  return out;
}

Adam::NamedParams TextureGanBundle::discriminator_parameters() {
  return named_params(*discriminator, "texture.discriminator");
}

void TextureGanBundle::to(torch::Dtype d) {
  generator->to(d);
  discriminator->to(d);
  encoder->to(d);
  if (perceptual) perceptual->to(d);
  dtype = d;
}

void TextureGanBundle::train(bool on) {
  generator->train(on);
  discriminator->train(on);
  encoder->train(on);
}

bool TextureGanBundle::is_training() const { return generator->is_training(); }

nn::TensorMap TextureGanBundle::state() const {
  auto out = nn::state_of(*generator, "texture.generator");
  out.merge(nn::state_of(*discriminator, "texture.discriminator"));
  out.merge(nn::state_of(*encoder, "texture.encoder"));
  return out;
}

void TextureGanBundle::load_state(const nn::TensorMap& state) {
  nn::load_state(*generator, state, "texture.generator");
  nn::load_state(*discriminator, state, "texture.discriminator");
  nn::load_state(*encoder, state, "texture.encoder");
}

// Forward / losses -------------------------------------------------------------------

torch::Tensor reparametrize(const torch::Tensor& mu, const torch::Tensor& logvar,
                            const torch::Tensor& eps) {
  return mu + (0.5 * logvar).exp() * eps;
}

TextureDraws TextureDraws::sample(int64_t batch, int64_t z_dim, torch::Dtype dtype,
                                  at::Generator& rng) {
  auto opts = torch::TensorOptions().dtype(dtype);
  TextureDraws d;
  d.z_t = torch::randn({batch, z_dim}, rng, opts);
  d.eps = torch::randn({batch, z_dim}, rng, opts);
  d.noise_seed = static_cast<uint64_t>(
      torch::randint(0, int64_t{1} << 62, {1}, rng, torch::TensorOptions().dtype(torch::kInt64))
          .item<int64_t>());
  return d;
}

TextureForward texture_forward(TextureGanBundle& bundle, const Batch& batch,
                               const torch::Tensor& mask_hat, const TextureDraws& draws,
                               const TextureBranchOptions& options) {
  TextureForward f;
  f.mask_hat = mask_hat;
  f.z_t = draws.z_t;

  auto noise_a = options.noise ? nn::NoiseSource::seeded(draws.noise_seed) : nn::NoiseSource::none();
  auto noise_b = options.noise ? nn::NoiseSource::seeded(draws.noise_seed + 1) : nn::NoiseSource::none();

  f.s_hat = bundle.generator->forward(ops::zero_out(batch.i, mask_hat), mask_hat, draws.z_t, noise_a);
  f.i_s_hat = ops::blend(batch.i, f.s_hat, mask_hat);

  if (options.bicycle) {
    auto enc = bundle.encoder->forward(batch.s);
    f.mu = enc.mu;
    f.logvar = enc.logvar;
    f.z_prime = reparametrize(enc.mu, enc.logvar, draws.eps);
  } else {
    // Without the encoder branch the second pass sees an independent random latent.
    f.z_prime = draws.eps;
  }
  f.s_hat_prime = bundle.generator->forward(batch.i_m, batch.m, f.z_prime, noise_b);
  f.i_s_hat_prime = ops::blend(batch.i, f.s_hat_prime, batch.m);
  return f;
}

double TextureLossBreakdown::weighted_total(double adv, double rec, double kl, double fm,
                                            double per, double irec, const TextureLambdas& l) {
  return adv + l.rec * rec + l.kl * kl + l.fm * fm + l.per * per + l.irec * irec;
}

std::map<std::string, double> TextureLossBreakdown::to_map() const {
  return {{"adv_g", adv_g}, {"adv_d", adv_d}, {"rec", rec},         {"kl", kl},
          {"fm", fm},       {"per", per},     {"irec", irec},       {"total_g", total_g},
          {"total_d", total_d}};
}

torch::Tensor loss_t_fm(const std::vector<torch::Tensor>& fake_feats,
                        const std::vector<torch::Tensor>& real_feats) {
  std::vector<torch::Tensor> target;
  target.reserve(real_feats.size());
  for (const auto& r : real_feats) target.push_back(r.detach());
  return losses::feature_matching_mean(fake_feats, target);
}

torch::Tensor loss_t_irec(const torch::Tensor& i_s_hat_prime, const torch::Tensor& i_s) {
  return losses::mean_abs(i_s_hat_prime, i_s);
}

torch::Tensor loss_t_rec(TextureGanBundle& bundle, const torch::Tensor& z_t,
                         const torch::Tensor& s_hat_foreground) {
  auto enc = bundle.encoder->forward(s_hat_foreground, /*detach_params=*/true);
  return losses::latent_reconstruction(z_t, enc.mu);
}

std::pair<torch::Tensor, torch::Tensor> loss_t_adv(const torch::Tensor& real,
                                                   const torch::Tensor& fake_random,
                                                   const torch::Tensor& fake_encoded) {
  return {losses::hinge_g_loss2(fake_random, fake_encoded),
          losses::hinge_d_loss3(real, fake_random, fake_encoded)};
}

torch::Tensor loss_perceptual(PerceptualNet& phi, const torch::Tensor& i,
                              const torch::Tensor& i_s_hat_prime) {
  torch::Tensor target;
  {
    torch::NoGradGuard no_grad;
    target = phi->forward(i);
  }
  return losses::mean_abs(phi->forward(i_s_hat_prime), target);
}

torch::Tensor texture_discriminator_input(const torch::Tensor& image, const torch::Tensor& mask) {
  return torch::cat({image, mask}, 1);
}

TextureGeneratorLoss texture_generator_loss(TextureGanBundle& bundle, const Batch& batch,
                                            const TextureForward& fwd,
                                            const TextureLossOptions& options) {
  auto zero = torch::zeros({}, batch.i.options());
  auto& D = bundle.discriminator;
  auto d_random = D->forward(texture_discriminator_input(fwd.i_s_hat, fwd.mask_hat));
  auto d_encoded = D->forward(texture_discriminator_input(fwd.i_s_hat_prime, batch.m));

  TextureGeneratorLoss l;
  l.adv = losses::hinge_g_loss2(d_random.score, d_encoded.score);
  if (fwd.mu.defined()) {
    l.rec = loss_t_rec(bundle, fwd.z_t, fwd.s_hat * fwd.mask_hat);
    l.kl = losses::kl_to_standard_normal(fwd.mu, fwd.logvar);
  } else {
    l.rec = zero;
    l.kl = zero;
  }
  if (options.use_fm) {
    std::vector<torch::Tensor> real_feats;
    {
      torch::NoGradGuard no_grad;
      real_feats = D->forward(texture_discriminator_input(batch.i, batch.m)).features;
    }
    l.fm = loss_t_fm(d_encoded.features, real_feats);
  } else {
    l.fm = zero;
  }
  if (options.use_per && !bundle.perceptual) throw ConfigError("perceptual loss needs a perceptual network");
  l.per = options.use_per ? loss_perceptual(bundle.perceptual, batch.i, fwd.i_s_hat_prime) : zero;
  l.irec = loss_t_irec(fwd.i_s_hat_prime, batch.i);
  const auto& w = options.lambdas;
  l.total = l.adv + w.rec * l.rec + w.kl * l.kl + w.fm * l.fm + w.per * l.per + w.irec * l.irec;
  return l;
}

torch::Tensor texture_discriminator_loss(TextureGanBundle& bundle, const Batch& batch,
                                         const TextureForward& fwd) {
  auto& D = bundle.discriminator;
  auto real = D->forward(texture_discriminator_input(batch.i, batch.m)).score;
  auto fake_a = D->forward(texture_discriminator_input(fwd.i_s_hat.detach(), fwd.mask_hat.detach())).score;
  auto fake_b = D->forward(texture_discriminator_input(fwd.i_s_hat_prime.detach(), batch.m)).score;
  return losses::hinge_d_loss3(real, fake_a, fake_b);
}

namespace {

double scalar(const torch::Tensor& t) { return t.detach().to(torch::kFloat64).item<double>(); }

void check_finite(const TextureLossBreakdown& b, const char* phase) {
  for (const auto& [k, v] : b.to_map()) {
    if (!std::isfinite(v)) {
      throw DivergenceError(std::string("texture training diverged during ") + phase + " (" + k + ")",
                            b.to_map());
    }
  }
}

}  // namespace

TextureLossBreakdown texture_train_step(const Batch& batch, const torch::Tensor& mask_source,
                                        TextureGanBundle& bundle, Adam& g_opt, Adam& d_opt,
                                        at::Generator& rng, const TextureStepOptions& options,
                                        Adam* joint_mask_opt) {
  TextureLossBreakdown out;
  const auto draws = TextureDraws::sample(batch.size(), bundle.config.z_dim, bundle.dtype, rng);
  auto fwd = texture_forward(bundle, batch, mask_source, draws, options.branches);

  nn::set_requires_grad(*bundle.discriminator, true);
  auto adv_d = texture_discriminator_loss(bundle, batch, fwd);
  out.adv_d = out.total_d = scalar(adv_d);
  check_finite(out, "the discriminator step");
  d_opt.zero_grad();
  adv_d.backward();
  d_opt.step();

  nn::set_requires_grad(*bundle.discriminator, false);
  auto g = texture_generator_loss(bundle, batch, fwd, options.loss);
  out.adv_g = scalar(g.adv);
  out.rec = scalar(g.rec);
  out.kl = scalar(g.kl);
  out.fm = scalar(g.fm);
  out.per = scalar(g.per);
  out.irec = scalar(g.irec);
  out.total_g = TextureLossBreakdown::weighted_total(out.adv_g, out.rec, out.kl, out.fm, out.per,
                                                     out.irec, options.loss.lambdas);
  check_finite(out, "the generator step");
  g_opt.zero_grad();
  if (joint_mask_opt != nullptr) joint_mask_opt->zero_grad();
  g.total.backward();
  g_opt.step();
  if (joint_mask_opt != nullptr) joint_mask_opt->step();
  nn::set_requires_grad(*bundle.discriminator, true);
  return out;
}

ImageTensor gen_texture(TextureGanBundle& bundle, const ImageTensor& i_masked,
                        const MaskTensor& mask, const LatentVector& z, uint64_t noise_seed) {
  if (z.dim() != bundle.config.z_dim) {
    throw ConfigError("z_t has dimension " + std::to_string(z.dim()) + ", model expects " +
                      std::to_string(bundle.config.z_dim));
  }
  if (i_masked.height() != mask.height() || i_masked.width() != mask.width()) {
    throw DimensionError("gen_texture: image and mask sizes differ");
  }
  torch::NoGradGuard no_grad;
  auto noise = bundle.is_training() ? nn::NoiseSource::from(bundle.train_noise)
                                    : nn::NoiseSource::seeded(noise_seed);
  auto out = bundle.generator->forward(i_masked.to_nchw().to(bundle.dtype),
                                       mask.to_nchw().to(bundle.dtype),
                                       z.values.unsqueeze(0).to(bundle.dtype), noise);
  return ImageTensor::from_chw(out.to(torch::kFloat32));
}

EncodeResult encode_texture(TextureGanBundle& bundle, const ImageTensor& s, at::Generator& rng) {
  torch::NoGradGuard no_grad;
  auto enc = bundle.encoder->forward(s.to_nchw().to(bundle.dtype));
  auto eps = torch::randn(enc.mu.sizes(), rng, enc.mu.options());
  auto z = reparametrize(enc.mu, enc.logvar, eps);
  return {LatentVector::from(enc.mu[0]), LatentVector::from(enc.logvar[0]), LatentVector::from(z[0])};
}

}  // namespace stamps
