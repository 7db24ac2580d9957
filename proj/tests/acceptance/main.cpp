// Acceptance suite: one PASS/FAIL line per criterion. Tolerances and the
// desk-scale training budget are fixed here.

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <future>
#include <iostream>
#include <set>
#include <sstream>

#include "stamps/checkpoint.hpp"
#include "stamps/codec.hpp"
#include "stamps/errors.hpp"
#include "stamps/evaluation.hpp"
#include "stamps/image_io.hpp"
#include "stamps/losses.hpp"
#include "stamps/service.hpp"
#include "stamps/trainer.hpp"
#include "support/fixtures.hpp"

using namespace stamps;
using nlohmann::json;

namespace {

constexpr double kOracleRelTol = 1e-6;
constexpr double kGradRelTol = 1e-3;
constexpr int64_t kGradMaxParams = 500;
constexpr double kKidBruteTol = 1e-10;

constexpr int64_t kDeskResolution = 64;
constexpr int64_t kDeskTrain = 48;
constexpr int64_t kDeskHeldOut = 48;
constexpr uint64_t kHeldOutSeed = 100000;
constexpr int64_t kDeskMaskEpochs = 200;
constexpr int64_t kDeskTextureEpochs = 100;
constexpr double kMassInside = 0.95;
constexpr double kMasksInside = 0.95;
constexpr int64_t kDiversitySamples = 10;
constexpr int64_t kDiversityQueries = 16;
constexpr int64_t kKidSubsets = 50;
constexpr int64_t kKidSubsetSize = 40;

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << "[failed: " << what << "] ";
    }
  }
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3g", v);
  return buf;
}

double max_rel(double a, double b, double acc) { return std::max(acc, fixtures::rel_diff(a, b)); }

// 1 ------------------------------------------------------------------------------

void loss_oracles(Outcome& out) {
  auto g = nn::make_generator(101);
  auto mask = MaskGanBundle::create(fixtures::small_mask_config(), 1);
  mask.to(torch::kFloat64);
  auto tex = TextureGanBundle::create(fixtures::small_texture_config(), 2);
  tex.to(torch::kFloat64);
  const auto batch = fixtures::toy_batch(fixtures::toy_records(4, 16, 300), torch::kFloat64);
  std::map<std::string, double> worst;
  for (int trial = 0; trial < 10; ++trial) {
    const auto r = torch::randn({6}, g, torch::kFloat64) * 2;
    const auto a = torch::randn({6}, g, torch::kFloat64) * 2;
    const auto b = torch::randn({6}, g, torch::kFloat64) * 2;
    auto& t1 = worst["hinge"];
    t1 = max_rel(losses::hinge_d_loss(r, a).item<double>(), oracle::hinge_d(fixtures::to_vec(r), fixtures::to_vec(a)), t1);
    t1 = max_rel(losses::hinge_g_loss(a).item<double>(), oracle::hinge_g(fixtures::to_vec(a)), t1);

    torch::NoGradGuard no_grad;
    const auto z = torch::randn({4, 4}, g, torch::kFloat64);
    const auto fwd = mask_forward(mask, batch, z);
    auto& t2 = worst["mask_rec"];
    t2 = max_rel(mask_generator_loss(mask, batch, fwd, {}, false).rec.item<double>(),
                 oracle::latent_rec(fixtures::to_matrix(z), fixtures::to_matrix(fwd.z_hat)), t2);

    const auto real_in = mask_discriminator_input(mask, batch.m, batch.b, batch.i);
    mask.ema.update(mask.discriminator->forward(real_in).features);
    const auto fake = mask.discriminator->forward(mask_discriminator_input(mask, fwd.mask, batch.b, batch.i)).features;
    auto& t3 = worst["mask_fm"];
    t3 = max_rel(mask.ema.loss(fake).item<double>(),
                 oracle::fm_sum(fixtures::to_arrays(fake), fixtures::to_arrays(mask.ema.means())), t3);

    const auto draws = TextureDraws::sample(4, 4, torch::kFloat64, g);
    const auto tf = texture_forward(tex, batch, batch.m, draws, {});
    const auto real_feats = tex.discriminator->forward(texture_discriminator_input(batch.i, batch.m)).features;
    const auto enc_feats =
        tex.discriminator->forward(texture_discriminator_input(tf.i_s_hat_prime, batch.m)).features;
    auto& t5 = worst["texture_fm"];
    t5 = max_rel(loss_t_fm(enc_feats, real_feats).item<double>(),
                 oracle::fm_mean(fixtures::to_arrays(enc_feats), fixtures::to_arrays(real_feats)), t5);

    const auto fg = tf.s_hat * tf.mask_hat;
    const auto mu = tex.encoder->forward(fg).mu;
    auto& t6 = worst["texture_rec"];
    t6 = max_rel(loss_t_rec(tex, draws.z_t, fg).item<double>(),
                 oracle::latent_rec(fixtures::to_matrix(draws.z_t), fixtures::to_matrix(mu)), t6);

    const auto [g_adv, d_adv] = loss_t_adv(r, a, b);
    auto& t7 = worst["texture_adv"];
    t7 = max_rel(g_adv.item<double>(), oracle::hinge_g2(fixtures::to_vec(a), fixtures::to_vec(b)), t7);
    t7 = max_rel(d_adv.item<double>(),
                 oracle::hinge_d3(fixtures::to_vec(r), fixtures::to_vec(a), fixtures::to_vec(b)), t7);

    const auto phi_i = tex.perceptual->forward(batch.i);
    const auto phi_x = tex.perceptual->forward(tf.i_s_hat_prime);
    auto& t8 = worst["perceptual"];
    t8 = max_rel(loss_perceptual(tex.perceptual, batch.i, tf.i_s_hat_prime).item<double>(),
                 oracle::mean_abs(fixtures::to_vec(phi_i), fixtures::to_vec(phi_x)), t8);

    auto& kl = worst["kl"];
    kl = max_rel(losses::kl_to_standard_normal(tf.mu, tf.logvar).item<double>(),
                 oracle::kl_standard_normal(fixtures::to_matrix(tf.mu), fixtures::to_matrix(tf.logvar)), kl);
  }
  for (const auto& [term, err] : worst) {
    out.detail << term << " " << fmt(err) << " ";
    out.require(err <= kOracleRelTol, term + " relative error " + fmt(err));
  }
  out.detail << "(tol " << fmt(kOracleRelTol) << ")";
}

// 2 ------------------------------------------------------------------------------

void gradient_checks(Outcome& out) {
  const auto batch = fixtures::toy_batch(fixtures::toy_records(4, 16, 400), torch::kFloat64);
  auto report = [&](const char* name, const fixtures::GradCheckResult& r) {
    out.detail << name << " " << r.parameters << " params rel " << fmt(r.relative_error) << "; ";
    out.require(r.parameters <= kGradMaxParams, std::string(name) + " toy model too large");
    out.require(r.relative_error <= kGradRelTol, std::string(name) + " gradient mismatch");
  };
  auto mask = MaskGanBundle::create(fixtures::tiny_mask_config(), 0);
  mask.to(torch::kFloat64);
  report("mask-G", fixtures::mask_gradient_check(mask, batch, 5));
  auto tex = TextureGanBundle::create(fixtures::tiny_texture_config(), 0);
  tex.to(torch::kFloat64);
  report("texture-G", fixtures::texture_gradient_check(tex, batch, 6));
  out.detail << "(tol " << fmt(kGradRelTol) << ")";
}

// 3 ------------------------------------------------------------------------------

void freeze_contracts(Outcome& out) {
  const auto batch = fixtures::toy_batch(fixtures::toy_records(4, 16, 500));
  auto tex = TextureGanBundle::create(fixtures::small_texture_config(), 3);
  Adam g_opt(tex.generator_parameters(), {});
  Adam d_opt(tex.discriminator_parameters(), {});
  auto rng = nn::make_generator(7);

  const auto draws = TextureDraws::sample(4, 4, torch::kFloat32, rng);
  auto fwd = texture_forward(tex, batch, batch.m, draws, {});
  const auto enc_before = fixtures::clone_map(nn::state_of(*tex.encoder, "enc"));
  g_opt.zero_grad();
  loss_t_rec(tex, fwd.z_t, fwd.s_hat * fwd.mask_hat).backward();
  bool zero = true;
  for (const auto& p : tex.encoder->parameters()) {
    zero &= !p.grad().defined() || p.grad().abs().max().item<float>() == 0.0f;
  }
  g_opt.step();
  out.require(zero, "encoder received gradient from the latent reconstruction term");
  out.require(fixtures::maps_equal(enc_before, nn::state_of(*tex.encoder, "enc")),
              "encoder changed after a rec-only step");

  const auto phi_before = fixtures::clone_map(nn::state_of(*tex.perceptual, "phi"));
  for (int k = 0; k < 3; ++k) texture_train_step(batch, batch.m, tex, g_opt, d_opt, rng, {});
  out.require(fixtures::maps_equal(phi_before, nn::state_of(*tex.perceptual, "phi")),
              "perceptual network changed during training");

  auto mask = MaskGanBundle::create(fixtures::small_mask_config(), 4);
  Adam mg(mask.generator_parameters(), {});
  Adam md(mask.discriminator_parameters(), {});
  mask_train_step(batch, mask, mg, md, rng, {});
  const auto ema_before = fixtures::clone_map(mask.ema.state("ema"));
  for (int k = 0; k < 3; ++k) {
    auto mf = mask_forward(mask, batch, torch::randn({4, 4}, rng));
    auto loss = mask_generator_loss(mask, batch, mf, {});
    mg.zero_grad();
    loss.total.backward();
    mg.step();
  }
  out.require(fixtures::maps_equal(ema_before, mask.ema.state("ema")), "EMA changed under generator updates");
  out.detail << "Enc^T grad zero and unchanged; phi and EMA bitwise unchanged";
}

// 4 ------------------------------------------------------------------------------

void compositing_algebra(Outcome& out) {
  auto g = nn::make_generator(8);
  int checks = 0;
  for (int trial = 0; trial < 25; ++trial) {
    const auto i = ImageTensor::from(torch::rand({12, 10, 3}, g) * 2 - 1);
    const auto s = ImageTensor::from(torch::rand({12, 10, 3}, g) * 2 - 1);
    const auto mb = MaskTensor::from((torch::rand({12, 10}, g) > 0.5).to(torch::kFloat32), true);
    out.require(composite(i, s, MaskTensor::filled(12, 10, 1)).equal(s), "m=1 blend");
    out.require(composite(i, s, MaskTensor::filled(12, 10, 0)).equal(i), "m=0 blend");
    out.require(composite(cutout(i, mb), foreground(i, mb), mb).equal(i), "cutout round trip");
    const auto once = composite(i, s, mb);
    out.require(composite(once, s, mb).equal(once), "idempotence");
    checks += 4;
  }
  const auto batch = fixtures::toy_batch(fixtures::toy_records(4, 16, 600));
  auto mask = MaskGanBundle::create(fixtures::small_mask_config(), 5);
  Adam mg(mask.generator_parameters(), {});
  Adam md(mask.discriminator_parameters(), {});
  auto tex = TextureGanBundle::create(fixtures::small_texture_config(), 6);
  Adam tg(tex.generator_parameters(), {});
  Adam td(tex.discriminator_parameters(), {});
  for (int step = 0; step < 5; ++step) {
    const double l1 = torch::rand({1}, g, torch::kFloat64).item<double>() * 10;
    const double l2 = torch::rand({1}, g, torch::kFloat64).item<double>() * 10;
    MaskStepOptions mo;
    mo.lambdas = {l1, l2};
    const auto mb = mask_train_step(batch, mask, mg, md, g, mo);
    out.require(mb.total_g == mb.adv_g + l1 * mb.fm + l2 * mb.rec, "mask breakdown identity");
    TextureStepOptions to;
    to.loss.lambdas = {l1, 0.05, l2, l1 * 0.5, l2 * 0.5};
    const auto tb = texture_train_step(batch, batch.m, tex, tg, td, g, to);
    out.require(tb.total_g == tb.adv_g + l1 * tb.rec + 0.05 * tb.kl + l2 * tb.fm + (l1 * 0.5) * tb.per +
                                  (l2 * 0.5) * tb.irec,
                "texture breakdown identity");
    checks += 2;
  }
  out.detail << checks << " exact identities checked";
}

// 5 ------------------------------------------------------------------------------

void kid_checks(Outcome& out) {
  auto g = nn::make_generator(9);
  double worst = 0;
  for (int64_t n = 2; n <= 10; ++n) {
    for (int64_t m = 2; m <= 10; m += 4) {
      const auto x = torch::randn({n, 5}, g, torch::kFloat64);
      const auto y = torch::randn({m, 5}, g, torch::kFloat64) * 1.3 + 0.2;
      worst = std::max(worst, std::fabs(kid(x, y) - oracle::kid(fixtures::to_matrix(x), fixtures::to_matrix(y))));
    }
  }
  out.require(worst <= kKidBruteTol, "brute-force mismatch " + fmt(worst));
  const auto real = torch::randn({80, 6}, g, torch::kFloat64);
  const auto other = torch::randn({80, 6}, g, torch::kFloat64) + 2.0;
  const auto a = subset_protocol(real, {real.clone(), other}, kKidSubsets, 30, 17);
  const auto b = subset_protocol(real, {real.clone(), other}, kKidSubsets, 30, 17);
  out.require(a.to_json() == b.to_json(), "subset protocol not deterministic");
  out.require(a.count_best[0] == 1.0, "real copy did not win every subset");
  const auto self = subset_protocol(real, {other}, kKidSubsets, 30, 3);
  out.require(self.count_best[0] == 1.0, "single-system count_best != 100%");
  out.detail << "max |kid - oracle| " << fmt(worst) << " (tol " << fmt(kKidBruteTol)
             << "); deterministic; self count_best " << self.count_best[0] * 100 << "%";
}

// 6 ------------------------------------------------------------------------------

std::filesystem::path train_run(const std::filesystem::path& root, const std::string& name, Stage stage,
                                int64_t epochs, const std::vector<InstanceRecord>& records,
                                const std::function<void(TrainConfig&)>& tweak) {
  TrainConfig c;
  c.stage = stage;
  c.epochs = epochs;
  c.seed = 0;
  c.out_dir = (root / name).string();
  tweak(c);
  const auto start = std::chrono::steady_clock::now();
  Trainer t(c, records, "synthetic");
  const auto path = t.train([&](const EpochMetrics& m) {
    if ((m.epoch + 1) % 50 == 0) {
      std::cerr << "  " << name << " epoch " << m.epoch + 1 << "/" << epochs << " total_g "
                << fmt(m.mean.count("total_g") ? m.mean.at("total_g") : 0) << "\n";
    }
  });
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::cerr << "  " << name << " done in " << fmt(secs) << " s\n";
  return path;
}

MaskTensor sample_mask(MaskGanBundle& b, const TrainingExample& ex, uint64_t seed) {
  auto g = nn::make_generator(seed);
  const auto z = LatentVector::from(torch::randn({b.config.z_dim}, g));
  return gen_mask(b, ex.i_b, z, ex.b);
}

void desk_training(Outcome& out, const std::filesystem::path& root) {
  SynthConfig sc;
  sc.resolution = kDeskResolution;
  const auto train = synth_records(0, kDeskTrain, sc);
  const auto held = synth_records(kHeldOutSeed, kDeskHeldOut, sc);
  std::vector<TrainingExample> held_ex;
  for (const auto& r : held) held_ex.push_back(make_example(r));

  const auto full_mask = train_run(root, "mask_full", Stage::kMask, kDeskMaskEpochs, train, [](TrainConfig&) {});
  const auto mrecon = train_run(root, "mask_mrecon", Stage::kMask, kDeskMaskEpochs, train,
                                [](TrainConfig& c) { c.mrecon = true; });
  const auto no_fm = train_run(root, "mask_nofm", Stage::kMask, kDeskMaskEpochs, train,
                               [](TrainConfig& c) { c.no_fm = true; });
  const auto full_tex = train_run(root, "texture_full", Stage::kTexture, kDeskTextureEpochs, train,
                                  [](TrainConfig&) {});
  const auto no_bicycle = train_run(root, "texture_nobicycle", Stage::kTexture, kDeskTextureEpochs, train,
                                    [](TrainConfig& c) { c.no_bicycle = true; });

  auto m_full = restore_mask_bundle(load_checkpoint(full_mask));
  auto m_mrecon = restore_mask_bundle(load_checkpoint(mrecon));
  auto m_nofm = restore_mask_bundle(load_checkpoint(no_fm));

  // (a) mass inside the box.
  int64_t inside = 0, total = 0;
  double mean_mass = 0;
  for (size_t k = 0; k < held_ex.size(); ++k) {
    for (uint64_t s = 0; s < 2; ++s) {
      const double mass = mass_inside_box(sample_mask(m_full, held_ex[k], 1000 + 2 * k + s), held_ex[k].b);
      inside += mass >= kMassInside ? 1 : 0;
      mean_mass += mass;
      ++total;
    }
  }
  const double share = static_cast<double>(inside) / static_cast<double>(total);
  out.detail << "(a) " << fmt(share * 100) << "% of masks with >= " << kMassInside * 100
             << "% mass inside (mean " << fmt(mean_mass / total) << "); ";
  out.require(share >= kMasksInside, "(a) box containment");

  // (b) latent diversity.
  auto diversity = [&](MaskGanBundle& b) {
    double acc = 0;
    for (int64_t q = 0; q < kDiversityQueries; ++q) {
      std::vector<torch::Tensor> masks;
      for (int64_t s = 0; s < kDiversitySamples; ++s) {
        masks.push_back(sample_mask(b, held_ex[q], 5000 + 100 * q + s).tensor());
      }
      acc += mean_pairwise_l1(masks);
    }
    return acc / kDiversityQueries;
  };
  const double div_full = diversity(m_full);
  const double div_mrecon = diversity(m_mrecon);
  out.detail << "(b) L1 full " << fmt(div_full) << " vs mrecon " << fmt(div_mrecon) << "; ";
  out.require(div_full > div_mrecon, "(b) mask diversity");

  // (c) texture diversity.
  auto t_full = restore_texture_bundle(load_checkpoint(full_tex), false);
  auto t_nob = restore_texture_bundle(load_checkpoint(no_bicycle), false);
  t_full.train(false);
  t_nob.train(false);
  auto phi = make_perceptual_net({});
  auto tex_diversity = [&](TextureGanBundle& b) {
    double acc = 0;
    for (int64_t q = 0; q < kDiversityQueries; ++q) {
      std::vector<ImageTensor> imgs;
      for (int64_t s = 0; s < kDiversitySamples; ++s) {
        const uint64_t seed = 9000 + 100 * q + s;
        auto g = nn::make_generator(seed);
        const auto z = LatentVector::from(torch::randn({b.config.z_dim}, g));
        const auto tex = gen_texture(b, held_ex[q].i_m, held_ex[q].m, z, seed);
        imgs.push_back(composite(held_ex[q].i, tex, held_ex[q].m));
      }
      acc += mean_pairwise_perceptual(phi, imgs);
    }
    return acc / kDiversityQueries;
  };
  const double tdiv_full = tex_diversity(t_full);
  const double tdiv_nob = tex_diversity(t_nob);
  out.detail << "(c) feature distance bicycle " << fmt(tdiv_full) << " vs no-bicycle " << fmt(tdiv_nob) << "; ";
  out.require(tdiv_full > tdiv_nob, "(c) texture diversity");

  // (d) KID of generated masks against held-out real masks.
  auto embedder = make_feature_embedder({});
  std::vector<MaskTensor> real_masks;
  for (const auto& ex : held_ex) real_masks.push_back(ex.m);
  auto generated = [&](MaskGanBundle& b) {
    std::vector<MaskTensor> masks;
    for (size_t k = 0; k < held_ex.size(); ++k) masks.push_back(binarize(sample_mask(b, held_ex[k], 20000 + k)));
    return extract_mask_features(embedder, masks);
  };
  const auto report = subset_protocol(extract_mask_features(embedder, real_masks),
                                      {generated(m_full), generated(m_nofm)}, kKidSubsets, kKidSubsetSize, 0,
                                      {"full", "no_fm"});
  out.detail << "(d) KID full " << fmt(report.mean[0]) << " +- " << fmt(report.std[0]) << " vs no-FM "
             << fmt(report.mean[1]) << " +- " << fmt(report.std[1]) << " (best in " << fmt(report.count_best[0] * 100)
             << "% of subsets)";
  out.require(report.mean[0] < report.mean[1], "(d) KID direction");
}

// 7 ------------------------------------------------------------------------------

void service_checks(Outcome& out) {
  fixtures::TempDir dir;
  std::filesystem::create_directories(dir.path() / "models");
  Checkpoint c;
  c.label = "blob-stripes";
  c.resolution = 16;
  c.stage = "texture";
  c.mask = fixtures::small_mask_config();
  c.texture = fixtures::small_texture_config();
  auto mb = MaskGanBundle::create(*c.mask, 11);
  auto tb = TextureGanBundle::create(*c.texture, 12);
  c.perceptual_identity = tb.perceptual->identity();
  for (const auto& [k, v] : mb.state()) c.tensors[k] = v;
  for (const auto& [k, v] : tb.state()) c.tensors[k] = v;
  save_checkpoint(dir.path() / "models" / "blob.ckpt", c);

  ServiceConfig cfg;
  cfg.model_dir = dir.path() / "models";
  cfg.async_load = false;
  cfg.load_on_start = false;
  cfg.queue_capacity = 1;
  StampService svc(cfg);

  const auto recs = fixtures::toy_records(2, 16, 700);
  const auto b64 = [](const auto& v) { return base64_encode(encode_png(v)); };
  const json stamp{{"background", b64(recs[0].image)}, {"bbox", {0.2, 0.2, 0.8, 0.8}}};
  const json retexture{{"image", b64(recs[0].image)}, {"mask", b64(recs[0].mask)}};
  const json insert{{"background", b64(recs[1].image)}, {"bbox", {0.1, 0.3, 0.6, 0.9}}, {"shape", b64(recs[0].mask)}};
  const json interpolate{{"background", b64(recs[1].image)}, {"bbox", {0.2, 0.2, 0.8, 0.8}}, {"axis", "texture"},
                         {"frames", 3}, {"from", json::object()}, {"to", json::object()}};

  std::map<std::string, int> codes;
  codes["503 loading"] = svc.handle("POST", "/v1/stamp", stamp.dump()).status;
  svc.load_models();

  int replays = 0;
  for (const auto& [ep, req] : std::vector<std::pair<std::string, json>>{
           {"stamp", stamp}, {"retexture", retexture}, {"insert", insert}, {"interpolate", interpolate}}) {
    const auto first = svc.handle("POST", "/v1/" + ep, req.dump());
    out.require(first.status == 200, ep + " returned " + std::to_string(first.status));
    if (first.status != 200) continue;
    const auto id = first.body.at("session").get<std::string>();
    for (int k = 0; k < 2; ++k) {
      const auto again = svc.handle("POST", "/v1/sessions/" + id + "/replay", "");
      out.require(again.status == 200 && again.body.value("replay_matches", false), ep + " replay mismatch");
      bool bytes_equal = again.body.at("hashes") == first.body.at("hashes");
      if (ep != "interpolate") bytes_equal &= again.body.at("composite") == first.body.at("composite");
      out.require(bytes_equal, ep + " replay bytes differ");
      ++replays;
    }
  }

  auto with = [](json j, const std::string& key, json v) {
    j[key] = std::move(v);
    return j;
  };
  codes["422 invalid bbox"] = svc.handle("POST", "/v1/stamp", with(stamp, "bbox", {0, 0, 0, 0}).dump()).status;
  codes["404 unknown model"] = svc.handle("POST", "/v1/stamp", with(stamp, "model", "nope").dump()).status;
  codes["422 empty mask"] =
      svc.handle("POST", "/v1/retexture", with(retexture, "mask", b64(MaskTensor::filled(16, 16, 0))).dump()).status;
  codes["422 mask outside image"] =
      svc.handle("POST", "/v1/retexture", with(retexture, "mask", b64(MaskTensor::filled(24, 24, 1))).dump()).status;
  codes["422 invalid axis"] = svc.handle("POST", "/v1/interpolate", with(interpolate, "axis", "depth").dump()).status;
  codes["422 latent dimension"] = svc.handle("POST", "/v1/stamp", with(stamp, "z_mask", {1.0}).dump()).status;
  codes["400 malformed body"] = svc.handle("POST", "/v1/stamp", "{").status;
  codes["404 unknown session"] = svc.handle("GET", "/v1/sessions/none", "").status;
  {
    std::promise<void> release;
    auto gate = release.get_future().share();
    std::promise<void> started;
    auto blocker = svc.lane().submit([&] {
      started.set_value();
      gate.wait();
    });
    started.get_future().wait();
    auto queued = svc.lane().submit([] {});
    codes["429 queue full"] = svc.handle("POST", "/v1/stamp", stamp.dump()).status;
    release.set_value();
    blocker.get();
    queued.get();
  }
  int ok = 0;
  for (const auto& [name, code] : codes) {
    const int want = std::stoi(name.substr(0, 3));
    out.require(code == want, name + " got " + std::to_string(code));
    ok += code == want ? 1 : 0;
  }
  out.detail << replays << " byte-identical replays; " << ok << "/" << codes.size() << " error cases";
}

struct Criterion {
  int id;
  const char* name;
  std::function<void(Outcome&)> run;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::vector<int> only;
  std::string workdir;
  app.add_option("--only", only, "Run only these criteria")->delimiter(',');
  app.add_option("--workdir", workdir, "Keep desk-training runs in this directory");
  CLI11_PARSE(app, argc, argv);

  torch::set_num_threads(1);
  std::unique_ptr<fixtures::TempDir> scratch;
  std::filesystem::path root = workdir;
  if (root.empty()) {
    scratch = std::make_unique<fixtures::TempDir>();
    root = scratch->path();
  }

  const std::vector<Criterion> criteria{
      {1, "loss oracles", loss_oracles},
      {2, "gradient checks", gradient_checks},
      {3, "stop-gradient and freeze contracts", freeze_contracts},
      {4, "compositing algebra", compositing_algebra},
      {5, "KID", kid_checks},
      {6, "desk-scale training", [&](Outcome& o) { desk_training(o, root); }},
      {7, "service determinism and 4xx cases", service_checks},
  };
  const std::set<int> selected(only.begin(), only.end());
  int failed = 0, ran = 0;
  for (const auto& c : criteria) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    Outcome o;
    const auto start = std::chrono::steady_clock::now();
    try {
      c.run(o);
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << "[exception: " << e.what() << "]";
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << c.id << " (" << c.name << "): " << o.detail.str()
              << " [" << fmt(secs) << " s]" << std::endl;
    failed += o.pass ? 0 : 1;
    ++ran;
  }
  std::cout << ran - failed << "/" << ran << " criteria passed" << std::endl;
  return failed == 0 ? 0 : 1;
}
