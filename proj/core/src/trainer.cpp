#include "stamps/trainer.hpp"

#include <fstream>
#include <sstream>

#include "stamps/errors.hpp"

namespace stamps {

std::string to_string(Stage s) {
  switch (s) {
    case Stage::kMask: return "mask";
    case Stage::kTexture: return "texture";
    case Stage::kJoint: return "joint";
  }
  return "?";
}

Stage parse_stage(const std::string& s) {
  if (s == "mask") return Stage::kMask;
  if (s == "texture") return Stage::kTexture;
  if (s == "joint") return Stage::kJoint;
  throw ConfigError("unknown stage '" + s + "' (expected mask, texture or joint)");
}

// Config ---------------------------------------------------------------------------

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

int64_t to_int(const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    const auto out = std::stoll(v, &used);
    if (used == v.size()) return out;
  } catch (const std::exception&) {
  }
  throw ConfigError(key + ": expected an integer, got '" + v + "'");
}

double to_double(const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    const auto out = std::stod(v, &used);
    if (used == v.size()) return out;
  } catch (const std::exception&) {
  }
  throw ConfigError(key + ": expected a number, got '" + v + "'");
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError(key + ": expected a boolean, got '" + v + "'");
}

using Setter = std::function<void(TrainConfig&, const std::string&, const std::string&)>;

Setter int_field(int64_t TrainConfig::*f) {
  return [f](TrainConfig& c, const std::string& k, const std::string& v) { c.*f = to_int(k, v); };
}
Setter bool_field(bool TrainConfig::*f) {
  return [f](TrainConfig& c, const std::string& k, const std::string& v) { c.*f = to_bool(k, v); };
}
Setter string_field(std::string TrainConfig::*f) {
  return [f](TrainConfig& c, const std::string&, const std::string& v) { c.*f = v; };
}
template <typename Get>
Setter double_at(Get get) {
  return [get](TrainConfig& c, const std::string& k, const std::string& v) { get(c) = to_double(k, v); };
}
template <typename Get>
Setter int_at(Get get) {
  return [get](TrainConfig& c, const std::string& k, const std::string& v) { get(c) = to_int(k, v); };
}

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table{
      {"stage", [](TrainConfig& c, const std::string&, const std::string& v) { c.stage = parse_stage(v); }},
      {"epochs", int_field(&TrainConfig::epochs)},
      {"batch_size", int_field(&TrainConfig::batch_size)},
      {"lr", double_at([](TrainConfig& c) -> double& { return c.adam.lr; })},
      {"beta1", double_at([](TrainConfig& c) -> double& { return c.adam.beta1; })},
      {"beta2", double_at([](TrainConfig& c) -> double& { return c.adam.beta2; })},
      {"seed", [](TrainConfig& c, const std::string& k, const std::string& v) {
         c.seed = static_cast<uint64_t>(to_int(k, v));
       }},
      {"no_fm", bool_field(&TrainConfig::no_fm)},
      {"no_noise", bool_field(&TrainConfig::no_noise)},
      {"no_bicycle", bool_field(&TrainConfig::no_bicycle)},
      {"no_vgg", bool_field(&TrainConfig::no_vgg)},
      {"mrecon", bool_field(&TrainConfig::mrecon)},
      {"bgcond", bool_field(&TrainConfig::bgcond)},
      {"generated_masks", bool_field(&TrainConfig::generated_masks)},
      {"checkpoint_every", int_field(&TrainConfig::checkpoint_every)},
      {"dataset", string_field(&TrainConfig::dataset)},
      {"out_dir", string_field(&TrainConfig::out_dir)},
      {"init", string_field(&TrainConfig::init)},
      {"resume", string_field(&TrainConfig::resume)},
      {"lambda_m_fm", double_at([](TrainConfig& c) -> double& { return c.mask_lambdas.fm; })},
      {"lambda_m_rec", double_at([](TrainConfig& c) -> double& { return c.mask_lambdas.rec; })},
      {"lambda_t_rec", double_at([](TrainConfig& c) -> double& { return c.texture_lambdas.rec; })},
      {"lambda_t_kl", double_at([](TrainConfig& c) -> double& { return c.texture_lambdas.kl; })},
      {"lambda_t_fm", double_at([](TrainConfig& c) -> double& { return c.texture_lambdas.fm; })},
      {"lambda_t_per", double_at([](TrainConfig& c) -> double& { return c.texture_lambdas.per; })},
      {"lambda_t_irec", double_at([](TrainConfig& c) -> double& { return c.texture_lambdas.irec; })},
      {"z_mask", int_at([](TrainConfig& c) -> int64_t& { return c.mask_net.z_dim; })},
      {"z_texture", int_at([](TrainConfig& c) -> int64_t& { return c.texture_net.z_dim; })},
      {"mask.base_channels", int_at([](TrainConfig& c) -> int64_t& { return c.mask_net.base_channels; })},
      {"mask.max_channels", int_at([](TrainConfig& c) -> int64_t& { return c.mask_net.max_channels; })},
      {"mask.downsamples", int_at([](TrainConfig& c) -> int64_t& { return c.mask_net.downsamples; })},
      {"mask.res_blocks", int_at([](TrainConfig& c) -> int64_t& { return c.mask_net.res_blocks; })},
      {"mask.mlp_hidden", int_at([](TrainConfig& c) -> int64_t& { return c.mask_net.mlp_hidden; })},
      {"mask.disc_channels", int_at([](TrainConfig& c) -> int64_t& { return c.mask_net.disc_channels; })},
      {"mask.disc_layers", int_at([](TrainConfig& c) -> int64_t& { return c.mask_net.disc_layers; })},
      {"mask.ema_decay", double_at([](TrainConfig& c) -> double& { return c.mask_net.ema_decay; })},
      {"texture.base_channels", int_at([](TrainConfig& c) -> int64_t& { return c.texture_net.base_channels; })},
      {"texture.max_channels", int_at([](TrainConfig& c) -> int64_t& { return c.texture_net.max_channels; })},
      {"texture.downsamples", int_at([](TrainConfig& c) -> int64_t& { return c.texture_net.downsamples; })},
      {"texture.res_blocks", int_at([](TrainConfig& c) -> int64_t& { return c.texture_net.res_blocks; })},
      {"texture.disc_channels", int_at([](TrainConfig& c) -> int64_t& { return c.texture_net.disc_channels; })},
      {"texture.disc_layers", int_at([](TrainConfig& c) -> int64_t& { return c.texture_net.disc_layers; })},
      {"texture.enc_channels", int_at([](TrainConfig& c) -> int64_t& { return c.texture_net.enc_channels; })},
      {"texture.enc_layers", int_at([](TrainConfig& c) -> int64_t& { return c.texture_net.enc_layers; })},
      {"texture.noise_init", double_at([](TrainConfig& c) -> double& { return c.texture_net.noise_init; })},
      {"perceptual.weights", [](TrainConfig& c, const std::string&, const std::string& v) {
         c.texture_net.perceptual.weights_path = v;
       }},
      {"perceptual.tap_stage", int_at([](TrainConfig& c) -> int64_t& { return c.texture_net.perceptual.tap_stage; })},
      {"perceptual.width_divisor",
       int_at([](TrainConfig& c) -> int64_t& { return c.texture_net.perceptual.width_divisor; })},
      {"perceptual.seed", [](TrainConfig& c, const std::string& k, const std::string& v) {
         c.texture_net.perceptual.seed = static_cast<uint64_t>(to_int(k, v));
       }},
      {"perceptual.imagenet_normalize", [](TrainConfig& c, const std::string& k, const std::string& v) {
         c.texture_net.perceptual.imagenet_normalize = to_bool(k, v);
       }},
  };
  return table;
}

}  // namespace

int64_t TrainConfig::total_epochs() const {
  if (epochs > 0) return epochs;
  switch (stage) {
    case Stage::kMask: return 1000;
    case Stage::kTexture: return 400;
    case Stage::kJoint: return 100;
  }
  return 1;
}

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("epochs must be >= 1 (0 selects the stage default)");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(adam.lr > 0)) throw ConfigError("lr must be positive");
  if (!(adam.beta1 >= 0 && adam.beta1 < 1 && adam.beta2 >= 0 && adam.beta2 < 1)) {
    throw ConfigError("betas must lie in [0, 1)");
  }
  for (double l : {mask_lambdas.fm, mask_lambdas.rec, texture_lambdas.rec, texture_lambdas.kl,
                   texture_lambdas.fm, texture_lambdas.per, texture_lambdas.irec}) {
    if (!(l >= 0)) throw ConfigError("loss weights must be >= 0");
  }
  if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be >= 0");
  mask_net.validate();
  texture_net.validate();
}

nlohmann::json TrainConfig::to_json() const {
  return {{"stage", to_string(stage)},
          {"epochs", total_epochs()},
          {"batch_size", batch_size},
          {"lr", adam.lr},
          {"beta1", adam.beta1},
          {"beta2", adam.beta2},
          {"seed", seed},
          {"no_fm", no_fm},
          {"no_noise", no_noise},
          {"no_bicycle", no_bicycle},
          {"no_vgg", no_vgg},
          {"mrecon", mrecon},
          {"bgcond", bgcond},
          {"generated_masks", generated_masks},
          {"checkpoint_every", checkpoint_every},
          {"mask_lambdas", {{"fm", mask_lambdas.fm}, {"rec", mask_lambdas.rec}}},
          {"texture_lambdas",
           {{"rec", texture_lambdas.rec},
            {"kl", texture_lambdas.kl},
            {"fm", texture_lambdas.fm},
            {"per", texture_lambdas.per},
            {"irec", texture_lambdas.irec}}},
          {"mask_net", mask_net.to_json()},
          {"texture_net", texture_net.to_json()}};
}

void TrainConfig::set(const std::string& key, const std::string& value) {
  const auto& table = setters();
  const auto it = table.find(key);
  if (it == table.end()) throw ConfigError("unknown config key '" + key + "'");
  it->second(*this, key, value);
}

TrainConfig TrainConfig::parse(const std::string& text) {
  TrainConfig c;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    }
    c.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  c.validate();
  return c;
}

TrainConfig TrainConfig::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

double lr_at(int64_t epoch, int64_t total_epochs, double base_lr) {
  if (total_epochs < 1 || epoch < 0 || epoch >= total_epochs) {
    throw ConfigError("epoch " + std::to_string(epoch) + " outside [0, " +
                      std::to_string(total_epochs) + ")");
  }
  const double half = static_cast<double>(total_epochs) / 2.0;
  const double e = static_cast<double>(epoch);
  if (e <= half) return base_lr;
  return base_lr * (static_cast<double>(total_epochs) - e) / (static_cast<double>(total_epochs) - half);
}

nlohmann::json EpochMetrics::to_json(Stage stage) const {
  nlohmann::json j{{"stage", to_string(stage)}, {"epoch", epoch}, {"lr", lr}};
  for (const auto& [k, v] : mean) j[k] = v;
  return j;
}

// Trainer ----------------------------------------------------------------------------

namespace {

std::map<std::string, double> prefixed(const std::string& prefix, const std::map<std::string, double>& m) {
  std::map<std::string, double> out;
  for (const auto& [k, v] : m) out[prefix + k] = v;
  return out;
}

void merge_into(nn::TensorMap& dst, const nn::TensorMap& src) {
  for (const auto& [k, v] : src) dst[k] = v;
}

}  // namespace

Trainer::Trainer(TrainConfig config, std::vector<InstanceRecord> records, std::string dataset_hash)
    : config_(std::move(config)), dataset_hash_(std::move(dataset_hash)) {
  config_.validate();
  if (static_cast<int64_t>(records.size()) < config_.batch_size) {
    throw ConfigError("dataset has " + std::to_string(records.size()) +
                      " records, fewer than one batch of " + std::to_string(config_.batch_size));
  }
  label_ = records.front().label;
  const int64_t resolution = records.front().image.height();
  examples_.reserve(records.size());
  for (const auto& r : records) examples_.push_back(make_example(r));

  auto& mc = config_.mask_net;
  mc.resolution = resolution;
  mc.mrecon = config_.mrecon;
  mc.bgcond = config_.bgcond;
  auto& tc = config_.texture_net;
  tc.resolution = resolution;
  tc.noise = !config_.no_noise;

  rng_ = nn::make_generator(config_.seed);
  const AdamOptions& adam = config_.adam;

  std::optional<Checkpoint> init;
  if (!config_.init.empty()) init = load_checkpoint(config_.init);

  switch (config_.stage) {
    case Stage::kMask:
      mask_ = MaskGanBundle::create(mc, config_.seed);
      break;
    case Stage::kTexture:
      texture_ = TextureGanBundle::create(tc, config_.seed, !config_.no_vgg);
      if (init && init->mask) {
        mask_ = restore_mask_bundle(*init);
        nn::set_requires_grad(*mask_->generator, false);
      }
      if (config_.generated_masks && !mask_) {
        throw StageOrderError("texture stage on generated masks needs a trained mask model (init)");
      }
      break;
    case Stage::kJoint:
      if (!init || !init->mask || !init->texture) {
        throw StageOrderError("joint stage needs a checkpoint with trained mask and texture models");
      }
      mask_ = restore_mask_bundle(*init);
      texture_ = restore_texture_bundle(*init, !config_.no_vgg);
      config_.mask_net = *init->mask;
      config_.texture_net = *init->texture;
      break;
  }
  if (mask_ && config_.stage != Stage::kTexture) {
    mask_g_opt_ = std::make_unique<Adam>(mask_->generator_parameters(), adam);
    mask_d_opt_ = std::make_unique<Adam>(mask_->discriminator_parameters(), adam);
  }
  if (texture_) {
    tex_g_opt_ = std::make_unique<Adam>(texture_->generator_parameters(), adam);
    tex_d_opt_ = std::make_unique<Adam>(texture_->discriminator_parameters(), adam);
  }
  if (!config_.resume.empty()) restore(load_checkpoint(config_.resume));
}

void Trainer::begin_epoch() {
  order_ = epoch_batches(static_cast<int64_t>(examples_.size()), config_.batch_size, config_.seed,
                         epoch_, true);
  const double lr = lr_at(epoch_, config_.total_epochs(), config_.adam.lr);
  for (auto* opt : {mask_g_opt_.get(), mask_d_opt_.get(), tex_g_opt_.get(), tex_d_opt_.get()}) {
    if (opt != nullptr) opt->set_lr(lr);
  }
}

Batch Trainer::batch_at(const std::vector<int64_t>& indices) const {
  std::vector<TrainingExample> picked;
  picked.reserve(indices.size());
  for (auto i : indices) picked.push_back(examples_[static_cast<size_t>(i)]);
  return collate(picked);
}

std::map<std::string, double> Trainer::mask_step(const Batch& batch) {
  MaskStepOptions opts;
  opts.lambdas = config_.mask_lambdas;
  opts.use_fm = !config_.no_fm;
  auto out = mask_train_step(batch, *mask_, *mask_g_opt_, *mask_d_opt_, rng_, opts).to_map();
  double norm = 0;
  for (const auto& m : mask_->ema.means()) norm += m.norm().item<double>();
  out["ema_norm"] = norm;
  return out;
}

std::map<std::string, double> Trainer::texture_step(const Batch& batch) {
  TextureStepOptions opts;
  opts.loss.lambdas = config_.texture_lambdas;
  opts.loss.use_fm = !config_.no_fm;
  opts.loss.use_per = !config_.no_vgg;
  opts.branches.bicycle = !config_.no_bicycle;
  opts.branches.noise = !config_.no_noise;
  torch::Tensor mask_source = batch.m;
  if (config_.generated_masks) {
    torch::NoGradGuard no_grad;
    auto z = torch::randn({batch.size(), mask_->config.z_dim}, rng_,
                          torch::TensorOptions().dtype(mask_->dtype));
    mask_source = mask_forward(*mask_, batch, z).mask;
  }
  return texture_train_step(batch, mask_source, *texture_, *tex_g_opt_, *tex_d_opt_, rng_, opts).to_map();
}

std::map<std::string, double> Trainer::joint_step(const Batch& batch) {
  auto out = prefixed("mask.", mask_step(batch));
  TextureStepOptions opts;
  opts.loss.lambdas = config_.texture_lambdas;
  opts.loss.use_fm = !config_.no_fm;
  opts.loss.use_per = !config_.no_vgg;
  opts.branches.bicycle = !config_.no_bicycle;
  opts.branches.noise = !config_.no_noise;
  auto z = torch::randn({batch.size(), mask_->config.z_dim}, rng_,
                        torch::TensorOptions().dtype(mask_->dtype));
  auto mask_source = mask_forward(*mask_, batch, z).mask;
  auto tex = texture_train_step(batch, mask_source, *texture_, *tex_g_opt_, *tex_d_opt_, rng_, opts,
                                mask_g_opt_.get());
  for (const auto& [k, v] : prefixed("texture.", tex.to_map())) out[k] = v;
  return out;
}

void Trainer::step() {
  if (finished()) throw Error("training already finished");
  if (order_.empty()) {
    begin_epoch();
    epoch_log_.clear();
  }
  const auto batch = batch_at(order_[static_cast<size_t>(batch_index_)]);
  std::map<std::string, double> m;
  switch (config_.stage) {
    case Stage::kMask: m = mask_step(batch); break;
    case Stage::kTexture: m = texture_step(batch); break;
    case Stage::kJoint: m = joint_step(batch); break;
  }
  epoch_log_.push_back(m);
  step_log_.push_back(std::move(m));
  ++steps_;
  if (++batch_index_ >= static_cast<int64_t>(order_.size())) {
    batch_index_ = 0;
    ++epoch_;
    order_.clear();
  }
}

EpochMetrics Trainer::run_epoch() {
  EpochMetrics out;
  out.epoch = epoch_;
  out.lr = lr_at(epoch_, config_.total_epochs(), config_.adam.lr);
  const int64_t current = epoch_;
  do {
    step();
  } while (epoch_ == current);
  for (const auto& m : epoch_log_) {
    for (const auto& [k, v] : m) out.mean[k] += v / static_cast<double>(epoch_log_.size());
  }
  return out;
}

std::filesystem::path Trainer::train(const std::function<void(const EpochMetrics&)>& on_epoch) {
  const std::filesystem::path dir(config_.out_dir);
  std::filesystem::create_directories(dir);
  std::ofstream metrics(dir / "metrics.jsonl", config_.resume.empty() ? std::ios::trunc : std::ios::app);
  while (!finished()) {
    const auto m = run_epoch();
    metrics << m.to_json(config_.stage).dump() << '\n';
    metrics.flush();
    if (on_epoch) on_epoch(m);
    if (config_.checkpoint_every > 0 && epoch_ % config_.checkpoint_every == 0 && !finished()) {
      char name[32];
      std::snprintf(name, sizeof(name), "epoch_%05lld.ckpt", static_cast<long long>(epoch_));
      save_checkpoint(dir / name, snapshot());
    }
  }
  const auto path = dir / "final.ckpt";
  save_checkpoint(path, snapshot());
  return path;
}

Checkpoint Trainer::snapshot() const {
  Checkpoint c;
  c.label = label_;
  c.resolution = config_.mask_net.resolution;
  c.stage = to_string(config_.stage);
  if (mask_) {
    c.mask = mask_->config;
    merge_into(c.tensors, mask_->state());
  }
  if (texture_) {
    c.texture = texture_->config;
    if (texture_->perceptual) c.perceptual_identity = texture_->perceptual->identity();
    merge_into(c.tensors, texture_->state());
  }
  if (mask_g_opt_) merge_into(c.tensors, mask_g_opt_->state("opt.mask.g"));
  if (mask_d_opt_) merge_into(c.tensors, mask_d_opt_->state("opt.mask.d"));
  if (tex_g_opt_) merge_into(c.tensors, tex_g_opt_->state("opt.texture.g"));
  if (tex_d_opt_) merge_into(c.tensors, tex_d_opt_->state("opt.texture.d"));
  c.tensors["rng.trainer"] = rng_.get_state();
  c.trainer = {{"epoch", epoch_},
               {"batch", batch_index_},
               {"steps", steps_},
               {"seed", config_.seed},
               {"dataset_hash", dataset_hash_},
               {"config", config_.to_json()}};
  return c;
}

void Trainer::restore(const Checkpoint& checkpoint) {
  const auto& t = checkpoint.trainer;
  if (!t.contains("config") || t["config"].value("stage", "") != to_string(config_.stage)) {
    throw StageOrderError("resume checkpoint was written by a different stage");
  }
  if (mask_) mask_->load_state(checkpoint.tensors);
  if (texture_) texture_->load_state(checkpoint.tensors);
  if (mask_g_opt_) mask_g_opt_->load_state(checkpoint.tensors, "opt.mask.g");
  if (mask_d_opt_) mask_d_opt_->load_state(checkpoint.tensors, "opt.mask.d");
  if (tex_g_opt_) tex_g_opt_->load_state(checkpoint.tensors, "opt.texture.g");
  if (tex_d_opt_) tex_d_opt_->load_state(checkpoint.tensors, "opt.texture.d");
  const auto it = checkpoint.tensors.find("rng.trainer");
  if (it == checkpoint.tensors.end()) throw FormatError("checkpoint lacks trainer RNG state");
  rng_.set_state(it->second);
  epoch_ = t.value("epoch", int64_t{0});
  batch_index_ = t.value("batch", int64_t{0});
  steps_ = t.value("steps", int64_t{0});
  order_.clear();
  epoch_log_.clear();
  if (batch_index_ > 0) begin_epoch();
}

}  // namespace stamps
