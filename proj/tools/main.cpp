#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>

#include "stamps/checkpoint.hpp"
#include "stamps/coco.hpp"
#include "stamps/dataset.hpp"
#include "stamps/errors.hpp"
#include "stamps/evaluation.hpp"
#include "stamps/feature_nets.hpp"
#include "stamps/image_io.hpp"
#include "stamps/service.hpp"
#include "stamps/trainer.hpp"

namespace fs = std::filesystem;
using namespace stamps;

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

std::vector<ImageTensor> load_image_dir(const fs::path& dir, std::optional<int64_t> size) {
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto ext = e.path().extension().string();
    if (e.is_regular_file() && (ext == ".png" || ext == ".jpg" || ext == ".jpeg")) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<ImageTensor> out;
  for (const auto& f : files) out.push_back(load_image(f.string(), size));
  return out;
}

int cmd_dataset_build(const std::string& out, const std::string& source, int64_t count, uint64_t seed,
                      int64_t resolution, const std::string& shape, const std::string& texture,
                      const std::string& annotations, const std::string& images,
                      const std::string& category) {
  DatasetManifest manifest;
  manifest.source = source;
  manifest.resolution = resolution;
  std::vector<InstanceRecord> records;
  if (source == "synth") {
    SynthConfig cfg;
    cfg.resolution = resolution;
    cfg.shape = parse_shape_family(shape);
    cfg.texture = parse_texture_family(texture);
    records = synth_records(seed, count, cfg);
    manifest.label = cfg.label();
    manifest.provenance = {{"synth", cfg.to_json()}, {"first_seed", seed}, {"count", count}};
  } else if (source == "coco") {
    coco::ReadOptions opts;
    opts.category = category;
    opts.size = resolution;
    const auto all = coco::read_instances(annotations, images, opts);
    records = filter_instances(all);
    manifest.label = category;
    manifest.provenance = {{"annotations", annotations}, {"read", all.size()}, {"kept", records.size()}};
  } else {
    throw ConfigError("unknown source '" + source + "' (synth or coco)");
  }
  write_dataset(out, manifest, records);
  std::cout << "wrote " << records.size() << " records to " << out << " (hash " << dataset_hash(out)
            << ")\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& stage,
              const std::vector<std::string>& overrides, const std::string& dataset,
              const std::string& out) {
  auto config = config_path.empty() ? TrainConfig{} : TrainConfig::from_file(config_path);
  if (!stage.empty()) config.stage = parse_stage(stage);
  for (const auto& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    config.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (!dataset.empty()) config.dataset = dataset;
  if (!out.empty()) config.out_dir = out;
  config.validate();
  if (config.dataset.empty()) throw ConfigError("no dataset given (config key 'dataset' or --dataset)");
  auto records = load_dataset(config.dataset);
  Trainer trainer(config, std::move(records), dataset_hash(config.dataset));
  const auto path = trainer.train([&](const EpochMetrics& m) {
    std::cerr << m.to_json(config.stage).dump() << '\n';
  });
  std::cout << path.string() << '\n';
  return 0;
}

int cmd_eval_kid(const std::string& real, const std::string& fake, int64_t subsets, int64_t subset_size,
                 uint64_t seed, const std::string& out, const std::string& embedder_weights,
                 int64_t resolution) {
  EmbedderConfig ec;
  ec.weights_path = embedder_weights;
  auto embedder = make_feature_embedder(ec);
  const auto real_imgs = load_image_dir(real, resolution);
  const auto real_feats = extract_features(embedder, real_imgs);
  std::vector<torch::Tensor> fakes;
  std::vector<std::string> names;
  for (const auto& dir : split(fake, ',')) {
    const auto imgs = load_image_dir(dir, resolution);
    fakes.push_back(extract_features(embedder, imgs));
    names.push_back(dir);
  }
  auto report = subset_protocol(real_feats, fakes, subsets, subset_size, seed, names);
  auto j = report.to_json();
  j["embedder"] = embedder->identity();
  if (out.empty()) {
    std::cout << j.dump(2) << '\n';
  } else {
    std::ofstream(out) << j.dump(2) << '\n';
    for (size_t s = 0; s < names.size(); ++s) {
      std::cout << names[s] << ": mean " << report.mean[s] << " std " << report.std[s] << " best "
                << report.count_best[s] * 100 << "%\n";
    }
  }
  return 0;
}

int cmd_serve(std::string host, int port) {
  if (const char* p = std::getenv("PORT"); p != nullptr && *p != '\0') port = std::atoi(p);
  auto config = ServiceConfig::from_env();
  StampService service(config);
  serve(service, host, port);
  return 0;
}

int cmd_stamp(const std::string& model, const std::string& background, const std::string& bbox,
              uint64_t seed, int64_t samples, const std::string& out) {
  const auto ckpt = load_checkpoint(model);
  auto mask_net = restore_mask_bundle(ckpt);
  auto texture = restore_texture_bundle(ckpt, false);
  texture.train(false);
  const auto parts = split(bbox, ',');
  if (parts.size() != 4) throw ConfigError("--bbox expects x1,y1,x2,y2");
  std::array<double, 4> vec{};
  for (size_t k = 0; k < 4; ++k) vec[k] = std::stod(parts[k]);
  const auto bg = load_image(background, ckpt.resolution);
  const auto box = make_bbox(vec, ckpt.resolution, ckpt.resolution);
  fs::create_directories(out);
  auto gen = nn::make_generator(seed);
  torch::NoGradGuard no_grad;
  for (int64_t k = 0; k < samples; ++k) {
    const auto z_m = LatentVector::from(torch::randn({mask_net.config.z_dim}, gen));
    const auto z_t = LatentVector::from(torch::randn({texture.config.z_dim}, gen));
    const auto mask = binarize(gen_mask(mask_net, cutout(bg, box.raster), z_m, box));
    const auto s = gen_texture(texture, cutout(bg, mask), mask, z_t, seed + static_cast<uint64_t>(k));
    const auto name = "sample_" + std::to_string(k);
    save_mask(mask, (fs::path(out) / (name + "_mask.png")).string());
    save_image(composite(bg, s, mask), (fs::path(out) / (name + ".png")).string());
  }
  std::cout << "wrote " << samples << " samples to " << out << '\n';
  return 0;
}

int cmd_retrieve(const std::string& query, const std::string& corpus) {
  const auto q = load_mask(query);
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(corpus)) {
    if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<MaskTensor> masks;
  for (const auto& f : files) masks.push_back(load_mask(f.string()));
  const auto idx = nn_mask_retrieve(q, masks);
  std::cout << files[static_cast<size_t>(idx)].string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Object stamp generation: datasets, training, evaluation and serving"};
  app.require_subcommand(1);

  auto* dataset = app.add_subcommand("dataset", "Dataset preparation");
  dataset->require_subcommand(1);
  auto* build = dataset->add_subcommand("build", "Build a dataset directory");
  std::string ds_out, ds_source = "synth", ds_shape = "blob", ds_texture = "stripes", ds_ann, ds_images, ds_cat;
  int64_t ds_count = 64, ds_res = 64;
  uint64_t ds_seed = 0;
  build->add_option("--out", ds_out, "Output directory")->required();
  build->add_option("--source", ds_source, "synth or coco");
  build->add_option("--count", ds_count, "Synthetic sample count");
  build->add_option("--seed", ds_seed, "First synthetic seed");
  build->add_option("--size,--resolution", ds_res, "Square output size in pixels");
  build->add_option("--shape", ds_shape, "Synthetic shape family (ellipse, blob)");
  build->add_option("--texture", ds_texture, "Synthetic texture family (stripes, spots, solid)");
  build->add_option("--annotations", ds_ann, "COCO instances JSON");
  build->add_option("--images", ds_images, "COCO image directory");
  build->add_option("--class,--category", ds_cat, "COCO category name or id");

  auto* train = app.add_subcommand("train", "Train a stage");
  std::string tr_config, tr_stage, tr_dataset, tr_out;
  std::vector<std::string> tr_set;
  train->add_option("--config", tr_config, "Flat key = value config file");
  train->add_option("--stage", tr_stage, "mask, texture or joint");
  train->add_option("--set", tr_set, "Override a config key (key=value)");
  train->add_option("--dataset", tr_dataset, "Dataset directory");
  train->add_option("--out", tr_out, "Output directory");

  auto* eval = app.add_subcommand("eval", "Evaluation");
  eval->require_subcommand(1);
  auto* kid_cmd = eval->add_subcommand("kid", "KID with the random-subset protocol");
  std::string kid_real, kid_fake, kid_out, kid_weights;
  int64_t kid_subsets = 50, kid_size = 50, kid_res = 64;
  uint64_t kid_seed = 0;
  kid_cmd->add_option("--real", kid_real, "Directory of real images")->required();
  kid_cmd->add_option("--fake", kid_fake, "Comma-separated directories of generated images")->required();
  kid_cmd->add_option("--subsets", kid_subsets, "Number of subsets");
  kid_cmd->add_option("--subset-size", kid_size, "Images per subset");
  kid_cmd->add_option("--seed", kid_seed, "Subset sampling seed");
  kid_cmd->add_option("--out", kid_out, "Report JSON path");
  kid_cmd->add_option("--embedder", kid_weights, "Embedding network weights (tensor archive)");
  kid_cmd->add_option("--resolution", kid_res, "Resize images to this size");

  auto* serve_cmd = app.add_subcommand("serve", "Run the HTTP inference service");
  std::string sv_host = "0.0.0.0";
  int sv_port = 8080;
  serve_cmd->add_option("--host", sv_host, "Bind address");
  serve_cmd->add_option("--port", sv_port, "Port (PORT overrides)");

  auto* stamp_cmd = app.add_subcommand("stamp", "Generate object stamps offline");
  std::string st_model, st_bg, st_bbox, st_out = "stamps_out";
  uint64_t st_seed = 0;
  int64_t st_samples = 4;
  stamp_cmd->add_option("--model", st_model, "Checkpoint with mask and texture models")->required();
  stamp_cmd->add_option("--background", st_bg, "Background image")->required();
  stamp_cmd->add_option("--bbox", st_bbox, "x1,y1,x2,y2 in [0, 1]")->required();
  stamp_cmd->add_option("--seed", st_seed, "Latent seed");
  stamp_cmd->add_option("--samples", st_samples, "Number of samples");
  stamp_cmd->add_option("--out", st_out, "Output directory");

  auto* retrieve_cmd = app.add_subcommand("retrieve", "Nearest-mask retrieval baseline");
  std::string rt_query, rt_corpus;
  retrieve_cmd->add_option("--query", rt_query, "Query mask PNG")->required();
  retrieve_cmd->add_option("--corpus", rt_corpus, "Directory of mask PNGs")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*build) {
      return cmd_dataset_build(ds_out, ds_source, ds_count, ds_seed, ds_res, ds_shape, ds_texture, ds_ann,
                               ds_images, ds_cat);
    }
    if (*train) return cmd_train(tr_config, tr_stage, tr_set, tr_dataset, tr_out);
    if (*kid_cmd) {
      return cmd_eval_kid(kid_real, kid_fake, kid_subsets, kid_size, kid_seed, kid_out, kid_weights, kid_res);
    }
    if (*serve_cmd) return cmd_serve(sv_host, sv_port);
    if (*stamp_cmd) return cmd_stamp(st_model, st_bg, st_bbox, st_seed, st_samples, st_out);
    if (*retrieve_cmd) return cmd_retrieve(rt_query, rt_corpus);
  } catch (const DivergenceError& e) {
    std::cerr << "error: " << e.what() << '\n';
    for (const auto& [k, v] : e.breakdown()) std::cerr << "  " << k << " = " << v << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
