#include "stamps/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <queue>
#include <random>

#include "stamps/codec.hpp"
#include "stamps/errors.hpp"
#include "stamps/image_io.hpp"

namespace stamps {
namespace fs = std::filesystem;

namespace {

// splitmix64 finalizer; used to derive independent streams from (seed, salt).
uint64_t mix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(mix64(seed)) {}
  double unit() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * unit(); }
  int64_t integer(int64_t lo, int64_t hi_inclusive) {
    return lo + static_cast<int64_t>(unit() * static_cast<double>(hi_inclusive - lo + 1));
  }

 private:
  std::mt19937_64 engine_;
};

std::vector<uint8_t> support_of(const MaskTensor& mask) {
  auto t = (mask.tensor() != 0).to(torch::kUInt8).contiguous();
  return std::vector<uint8_t>(t.data_ptr<uint8_t>(), t.data_ptr<uint8_t>() + t.numel());
}

}  // namespace

InstanceRecord InstanceRecord::make(std::string image_id, std::string label, ImageTensor image,
                                    MaskTensor mask) {
  if (image.height() != mask.height() || image.width() != mask.width()) {
    throw DimensionError("instance image and mask sizes differ");
  }
  if (!mask.binary()) throw Error("instance masks must be binary");
  auto bbox = tight_bbox(mask);
  return InstanceRecord{std::move(image_id), std::move(label), std::move(image), std::move(mask),
                        std::move(bbox)};
}

TrainingExample make_example(const InstanceRecord& record) {
  const auto& i = record.image;
  const auto& m = record.mask;
  return TrainingExample{i, m, record.bbox, cutout(i, record.bbox.raster), cutout(i, m),
                         foreground(i, m)};
}

int count_components(const MaskTensor& mask) {
  const int64_t h = mask.height();
  const int64_t w = mask.width();
  auto on = support_of(mask);
  std::vector<uint8_t> seen(on.size(), 0);
  int components = 0;
  std::queue<int64_t> frontier;
  for (int64_t start = 0; start < h * w; ++start) {
    if (!on[start] || seen[start]) continue;
    ++components;
    seen[start] = 1;
    frontier.push(start);
    while (!frontier.empty()) {
      const int64_t p = frontier.front();
      frontier.pop();
      const int64_t r = p / w;
      const int64_t c = p % w;
      const int64_t nbrs[4][2] = {{r - 1, c}, {r + 1, c}, {r, c - 1}, {r, c + 1}};
      for (const auto& n : nbrs) {
        if (n[0] < 0 || n[0] >= h || n[1] < 0 || n[1] >= w) continue;
        const int64_t q = n[0] * w + n[1];
        if (on[q] && !seen[q]) {
          seen[q] = 1;
          frontier.push(q);
        }
      }
    }
  }
  return components;
}

bool touches_border(const MaskTensor& mask) {
  const auto& t = mask.tensor();
  return (t.select(0, 0) != 0).any().item<bool>() ||
         (t.select(0, t.size(0) - 1) != 0).any().item<bool>() ||
         (t.select(1, 0) != 0).any().item<bool>() ||
         (t.select(1, t.size(1) - 1) != 0).any().item<bool>();
}

double area_fraction(const MaskTensor& mask) {
  return static_cast<double>(mask.nonzero_count()) /
         static_cast<double>(mask.height() * mask.width());
}

bool passes_instance_filter(const MaskTensor& mask) {
  return area_fraction(mask) >= kMinAreaFraction && count_components(mask) == 1 &&
         !touches_border(mask);
}

std::vector<InstanceRecord> filter_instances(std::span<const InstanceRecord> records) {
  std::vector<InstanceRecord> kept;
  for (const auto& r : records) {
    if (passes_instance_filter(r.mask)) kept.push_back(r);
  }
  return kept;
}

BoundingBox tight_bbox(const MaskTensor& mask) {
  const auto& t = mask.tensor();
  auto rows = (t != 0).any(1).nonzero();
  auto cols = (t != 0).any(0).nonzero();
  if (rows.numel() == 0) throw EmptyMaskError("tight_bbox: mask is empty");
  const auto h = static_cast<double>(mask.height());
  const auto w = static_cast<double>(mask.width());
  const auto r0 = rows.min().item<int64_t>();
  const auto r1 = rows.max().item<int64_t>() + 1;
  const auto c0 = cols.min().item<int64_t>();
  const auto c1 = cols.max().item<int64_t>() + 1;
  return make_bbox({c0 / w, r0 / h, c1 / w, r1 / h}, mask.height(), mask.width());
}

// Synthetic data -----------------------------------------------------------------

std::string to_string(ShapeFamily f) { return f == ShapeFamily::kEllipse ? "ellipse" : "blob"; }

std::string to_string(TextureFamily f) {
  switch (f) {
    case TextureFamily::kStripes: return "stripes";
    case TextureFamily::kSpots: return "spots";
    case TextureFamily::kSolid: return "solid";
  }
  return "solid";
}

ShapeFamily parse_shape_family(const std::string& s) {
  if (s == "ellipse") return ShapeFamily::kEllipse;
  if (s == "blob") return ShapeFamily::kBlob;
  throw ConfigError("unknown shape family '" + s + "'");
}

TextureFamily parse_texture_family(const std::string& s) {
  if (s == "stripes") return TextureFamily::kStripes;
  if (s == "spots") return TextureFamily::kSpots;
  if (s == "solid") return TextureFamily::kSolid;
  throw ConfigError("unknown texture family '" + s + "'");
}

nlohmann::json SynthConfig::to_json() const {
  return {{"resolution", resolution},     {"shape", to_string(shape)},
          {"texture", to_string(texture)}, {"min_area", min_area},
          {"max_area", max_area},          {"gradient_strength", gradient_strength}};
}

SynthConfig SynthConfig::from_json(const nlohmann::json& j) {
  SynthConfig c;
  c.resolution = j.value("resolution", c.resolution);
  c.shape = parse_shape_family(j.value("shape", to_string(c.shape)));
  c.texture = parse_texture_family(j.value("texture", to_string(c.texture)));
  c.min_area = j.value("min_area", c.min_area);
  c.max_area = j.value("max_area", c.max_area);
  c.gradient_strength = j.value("gradient_strength", c.gradient_strength);
  return c;
}

std::string SynthConfig::label() const { return to_string(shape) + "-" + to_string(texture); }

SynthSample synth_sample(uint64_t seed, const SynthConfig& config) {
  const int64_t n = config.resolution;
  if (n < 16) throw ConfigError("synthetic resolution must be at least 16");
  if (!(config.min_area >= kMinAreaFraction && config.min_area < config.max_area &&
        config.max_area <= 0.6)) {
    throw ConfigError("synthetic area bounds must satisfy 0.01 <= min < max <= 0.6");
  }
  constexpr double pi = std::numbers::pi;
  Rng rng(seed);
  const double nd = static_cast<double>(n);

  // Illumination ramp shared by background and foreground.
  const double ramp_dir = rng.uniform(0.0, 2.0 * pi);
  const double strength = std::clamp(config.gradient_strength, 0.0, 1.0);
  auto illumination = [&](double x, double y) {
    const double proj = ((x / nd - 0.5) * std::cos(ramp_dir) + (y / nd - 0.5) * std::sin(ramp_dir)) /
                        std::numbers::sqrt2 * 2.0;
    return std::clamp(0.6 + 0.5 * strength * proj, 0.05, 1.0);
  };

  std::array<double, 3> bg_color{};
  for (auto& c : bg_color) c = rng.uniform(0.35, 0.95);
  const double bg_fx = rng.uniform(1.0, 3.0);
  const double bg_fy = rng.uniform(1.0, 3.0);
  const double bg_phase = rng.uniform(0.0, 2.0 * pi);

  // Shape: rejection-sample until the mask passes the instance filter and the
  // configured area bounds.
  std::vector<uint8_t> inside(static_cast<size_t>(n * n));
  double cx = 0, cy = 0, rx = 0, ry = 0, rot = 0;
  for (int attempt = 0;; ++attempt) {
    if (attempt > 1000) throw Error("synth_sample: could not place a valid shape");
    const double area = rng.uniform(config.min_area, config.max_area);
    const double aspect = rng.uniform(0.6, 1.6);
    const double r0 = std::sqrt(area * nd * nd / pi);
    rx = r0 * std::sqrt(aspect);
    ry = r0 / std::sqrt(aspect);
    rot = rng.uniform(0.0, pi);
    std::array<double, 3> amp{}, phase{};
    if (config.shape == ShapeFamily::kBlob) {
      for (size_t k = 0; k < amp.size(); ++k) {
        amp[k] = rng.uniform(0.0, 0.12);
        phase[k] = rng.uniform(0.0, 2.0 * pi);
      }
    }
    const double reach = std::max(rx, ry) * (1.0 + amp[0] + amp[1] + amp[2]) + 1.5;
    if (2.0 * reach >= nd) continue;
    cx = rng.uniform(reach, nd - reach);
    cy = rng.uniform(reach, nd - reach);
    const double cr = std::cos(rot), sr = std::sin(rot);
    for (int64_t y = 0; y < n; ++y) {
      for (int64_t x = 0; x < n; ++x) {
        const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
        const double u = (dx * cr + dy * sr) / rx;
        const double v = (-dx * sr + dy * cr) / ry;
        const double rho = std::hypot(u, v);
        const double alpha = std::atan2(v, u);
        double limit = 1.0;
        for (size_t k = 0; k < amp.size(); ++k) {
          limit += amp[k] * std::cos(static_cast<double>(k + 2) * alpha + phase[k]);
        }
        inside[static_cast<size_t>(y * n + x)] = rho <= limit ? 1 : 0;
      }
    }
    auto mask_t = torch::from_blob(inside.data(), {n, n}, torch::kUInt8).to(torch::kFloat32);
    auto mask = MaskTensor::from(mask_t, /*binary=*/true);
    const double frac = area_fraction(mask);
    if (frac < config.min_area || frac > config.max_area || !passes_instance_filter(mask)) continue;
    break;
  }

  // Foreground texture.
  std::array<double, 3> fg_a{}, fg_b{};
  for (auto& c : fg_a) c = rng.uniform(0.1, 1.0);
  for (auto& c : fg_b) c = rng.uniform(0.0, 0.6);
  const double stripe_freq = rng.uniform(2.5, 6.0);
  const double stripe_dir = rng.uniform(0.0, pi);
  struct Spot {
    double x, y, r;
  };
  std::vector<Spot> spots;
  if (config.texture == TextureFamily::kSpots) {
    const int64_t count = rng.integer(5, 12);
    for (int64_t k = 0; k < count; ++k) {
      spots.push_back({cx + rng.uniform(-rx, rx), cy + rng.uniform(-ry, ry),
                       rng.uniform(1.0, std::max(1.5, 0.25 * std::min(rx, ry)))});
    }
  }
  const double scale = 2.0 * std::max(rx, ry);

  auto image = torch::empty({n, n, 3});
  auto acc = image.accessor<float, 3>();
  for (int64_t y = 0; y < n; ++y) {
    for (int64_t x = 0; x < n; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      const double light = illumination(px, py);
      std::array<double, 3> rgb{};
      if (inside[static_cast<size_t>(y * n + x)]) {
        double mix = 1.0;
        switch (config.texture) {
          case TextureFamily::kStripes: {
            const double t = ((px - cx) * std::cos(stripe_dir) + (py - cy) * std::sin(stripe_dir)) / scale;
            mix = 0.5 + 0.5 * std::sin(2.0 * pi * stripe_freq * t);
            break;
          }
          case TextureFamily::kSpots: {
            mix = 1.0;
            for (const auto& s : spots) {
              const double d2 = ((px - s.x) * (px - s.x) + (py - s.y) * (py - s.y)) / (s.r * s.r);
              mix = std::min(mix, 1.0 - std::exp(-d2));
            }
            break;
          }
          case TextureFamily::kSolid: {
            const double d = std::hypot((px - cx) / rx, (py - cy) / ry);
            mix = 1.0 - 0.25 * std::min(d, 1.0);
            break;
          }
        }
        for (int c = 0; c < 3; ++c) rgb[c] = light * (fg_a[c] * mix + fg_b[c] * (1.0 - mix));
      } else {
        const double wobble =
            0.05 * std::sin(2.0 * pi * (bg_fx * px / nd + bg_fy * py / nd) + bg_phase);
        for (int c = 0; c < 3; ++c) rgb[c] = light * std::clamp(bg_color[c] + wobble, 0.0, 1.0);
      }
      for (int c = 0; c < 3; ++c) {
        acc[y][x][c] = static_cast<float>(2.0 * std::clamp(rgb[c], 0.0, 1.0) - 1.0);
      }
    }
  }
  auto mask_t = torch::from_blob(inside.data(), {n, n}, torch::kUInt8).to(torch::kFloat32);
  return SynthSample{ImageTensor::from(image), MaskTensor::from(mask_t, /*binary=*/true)};
}

std::vector<InstanceRecord> synth_records(uint64_t first_seed, int64_t count,
                                          const SynthConfig& config) {
  std::vector<InstanceRecord> out;
  out.reserve(static_cast<size_t>(std::max<int64_t>(count, 0)));
  for (int64_t k = 0; k < count; ++k) {
    const uint64_t seed = first_seed + static_cast<uint64_t>(k);
    auto sample = synth_sample(seed, config);
    out.push_back(InstanceRecord::make("synth-" + std::to_string(seed), config.label(),
                                       std::move(sample.image), std::move(sample.mask)));
  }
  return out;
}

// Batching -------------------------------------------------------------------------

Batch Batch::to(torch::Dtype dtype) const {
  return Batch{i.to(dtype), m.to(dtype), b.to(dtype), b_vec.to(dtype),
               i_b.to(dtype), i_m.to(dtype), s.to(dtype)};
}

Batch collate(std::span<const TrainingExample> examples) {
  if (examples.empty()) throw Error("collate: empty batch");
  std::vector<torch::Tensor> i, m, b, bv, ib, im, s;
  for (const auto& e : examples) {
    i.push_back(e.i.to_nchw());
    m.push_back(e.m.to_nchw());
    b.push_back(e.b.raster.to_nchw());
    bv.push_back(e.b.vec_tensor().unsqueeze(0));
    ib.push_back(e.i_b.to_nchw());
    im.push_back(e.i_m.to_nchw());
    s.push_back(e.s.to_nchw());
  }
  return Batch{torch::cat(i), torch::cat(m), torch::cat(b), torch::cat(bv),
               torch::cat(ib), torch::cat(im), torch::cat(s)};
}

std::vector<std::vector<int64_t>> epoch_batches(int64_t dataset_size, int64_t batch_size,
                                                uint64_t seed, int64_t epoch, bool drop_last) {
  if (batch_size <= 0) throw ConfigError("batch size must be positive");
  std::vector<int64_t> order(static_cast<size_t>(std::max<int64_t>(dataset_size, 0)));
  for (size_t k = 0; k < order.size(); ++k) order[k] = static_cast<int64_t>(k);
  Rng rng(mix64(seed) ^ mix64(static_cast<uint64_t>(epoch) + 0x51ed27ULL));
  for (size_t k = order.size(); k > 1; --k) {
    const auto j = static_cast<size_t>(rng.integer(0, static_cast<int64_t>(k) - 1));
    std::swap(order[k - 1], order[j]);
  }
  std::vector<std::vector<int64_t>> batches;
  for (size_t start = 0; start < order.size(); start += static_cast<size_t>(batch_size)) {
    const size_t end = std::min(order.size(), start + static_cast<size_t>(batch_size));
    if (drop_last && end - start < static_cast<size_t>(batch_size)) break;
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

// Manifest -------------------------------------------------------------------------

namespace {

constexpr const char* kManifestFormat = "stamps-dataset";
constexpr int kManifestVersion = 1;

std::string record_name(size_t k) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%06zu", k);
  return buf;
}

}  // namespace

void write_dataset(const fs::path& dir, const DatasetManifest& manifest,
                   std::span<const InstanceRecord> records) {
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "masks");
  nlohmann::json entries = nlohmann::json::array();
  for (size_t k = 0; k < records.size(); ++k) {
    const auto name = record_name(k);
    save_image(records[k].image, (dir / "images" / (name + ".png")).string());
    save_mask(records[k].mask, (dir / "masks" / (name + ".png")).string());
    entries.push_back({{"id", name}, {"image_id", records[k].image_id}});
  }
  nlohmann::json j{{"format", kManifestFormat},
                   {"version", kManifestVersion},
                   {"source", manifest.source},
                   {"label", manifest.label},
                   {"resolution", manifest.resolution},
                   {"provenance", manifest.provenance},
                   {"records", entries}};
  std::ofstream out(dir / "manifest.json");
  out << j.dump(2) << "\n";
  if (!out) throw FormatError("cannot write manifest in " + dir.string());
}

DatasetManifest read_manifest(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw FormatError("no manifest.json in " + dir.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("manifest.json: ") + e.what());
  }
  if (j.value("format", "") != kManifestFormat || j.value("version", 0) != kManifestVersion) {
    throw FormatError("unsupported dataset manifest in " + dir.string());
  }
  DatasetManifest m;
  m.source = j.value("source", "");
  m.label = j.value("label", "");
  m.resolution = j.value("resolution", int64_t{0});
  m.provenance = j.value("provenance", nlohmann::json::object());
  for (const auto& e : j.at("records")) m.ids.push_back(e.at("id").get<std::string>());
  return m;
}

std::vector<InstanceRecord> load_dataset(const fs::path& dir) {
  const auto manifest = read_manifest(dir);
  std::ifstream in(dir / "manifest.json");
  const auto j = nlohmann::json::parse(in);
  std::vector<InstanceRecord> records;
  for (const auto& e : j.at("records")) {
    const auto id = e.at("id").get<std::string>();
    auto image = load_image((dir / "images" / (id + ".png")).string());
    auto mask = load_mask((dir / "masks" / (id + ".png")).string());
    records.push_back(InstanceRecord::make(e.value("image_id", id), manifest.label,
                                           std::move(image), std::move(mask)));
  }
  return records;
}

std::string dataset_hash(const fs::path& dir) {
  const auto manifest = read_manifest(dir);
  std::string acc = sha256_file((dir / "manifest.json").string());
  for (const auto& id : manifest.ids) {
    acc += sha256_file((dir / "images" / (id + ".png")).string());
    acc += sha256_file((dir / "masks" / (id + ".png")).string());
  }
  return sha256_hex(acc);
}

}  // namespace stamps
