#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stamps/domain.hpp"

namespace stamps {

struct InstanceRecord {
  std::string image_id;
  std::string label;
  ImageTensor image;
  MaskTensor mask;  // binary
  BoundingBox bbox;  // tight bound of the mask support

  /// Builds a record and derives its tight bounding box.
  static InstanceRecord make(std::string image_id, std::string label, ImageTensor image,
                             MaskTensor mask);
};

/// One training tuple. Every derived field is recomputable from (i, m, b).
struct TrainingExample {
  ImageTensor i;
  MaskTensor m;
  BoundingBox b;
  ImageTensor i_b;  // cutout(i, b.raster)
  ImageTensor i_m;  // cutout(i, m)
  ImageTensor s;    // i * m
};

TrainingExample make_example(const InstanceRecord& record);

// Filtering -----------------------------------------------------------------

constexpr double kMinAreaFraction = 0.01;

/// Number of 4-connected components of the nonzero support.
int count_components(const MaskTensor& mask);
/// True when any nonzero pixel lies on the outermost one-pixel ring.
bool touches_border(const MaskTensor& mask);
double area_fraction(const MaskTensor& mask);
/// Area >= 1% of the image, one 4-connected component, no border contact.
bool passes_instance_filter(const MaskTensor& mask);

std::vector<InstanceRecord> filter_instances(std::span<const InstanceRecord> records);

/// Minimal box containing every nonzero pixel, normalized to [0, 1].
/// Throws EmptyMaskError for an all-zero mask.
BoundingBox tight_bbox(const MaskTensor& mask);

// Synthetic dataset ------------------------------------------------------------

enum class ShapeFamily { kEllipse, kBlob };
enum class TextureFamily { kStripes, kSpots, kSolid };

struct SynthConfig {
  int64_t resolution = 64;
  ShapeFamily shape = ShapeFamily::kBlob;
  TextureFamily texture = TextureFamily::kStripes;
  double min_area = 0.05;
  double max_area = 0.40;
  /// Peak-to-peak strength of the background illumination ramp, in [0, 1].
  double gradient_strength = 0.6;

  nlohmann::json to_json() const;
  static SynthConfig from_json(const nlohmann::json& j);
  /// Label used as the class id, e.g. "blob-stripes".
  std::string label() const;
};

std::string to_string(ShapeFamily f);
std::string to_string(TextureFamily f);
ShapeFamily parse_shape_family(const std::string& s);
TextureFamily parse_texture_family(const std::string& s);

struct SynthSample {
  ImageTensor image;
  MaskTensor mask;
};

/// Deterministic procedural sample. The mask always passes the instance
/// filter and its area lies in [min_area, max_area]; the foreground is lit by
/// the same illumination ramp as the background.
SynthSample synth_sample(uint64_t seed, const SynthConfig& config);

std::vector<InstanceRecord> synth_records(uint64_t first_seed, int64_t count,
                                          const SynthConfig& config);

// Batching ----------------------------------------------------------------------

/// Stacked NCHW tensors for a minibatch of TrainingExamples.
struct Batch {
  torch::Tensor i;       // [N, 3, H, W]
  torch::Tensor m;       // [N, 1, H, W]
  torch::Tensor b;       // [N, 1, H, W]  box raster
  torch::Tensor b_vec;   // [N, 4]
  torch::Tensor i_b;     // [N, 3, H, W]
  torch::Tensor i_m;     // [N, 3, H, W]
  torch::Tensor s;       // [N, 3, H, W]

  int64_t size() const { return i.defined() ? i.size(0) : 0; }
  Batch to(torch::Dtype dtype) const;
};

Batch collate(std::span<const TrainingExample> examples);

/// Deterministic shuffled minibatch order for (seed, epoch). The last partial
/// batch is dropped when `drop_last` is set.
std::vector<std::vector<int64_t>> epoch_batches(int64_t dataset_size, int64_t batch_size,
                                                uint64_t seed, int64_t epoch,
                                                bool drop_last = true);

// Manifest -------------------------------------------------------------------------

/// A dataset directory: images/<id>.png, masks/<id>.png and manifest.json.
struct DatasetManifest {
  std::string source;  // "synth" or "coco"
  std::string label;
  int64_t resolution = 0;
  nlohmann::json provenance;  // synth config + seeds, or annotation file
  std::vector<std::string> ids;
};

void write_dataset(const std::filesystem::path& dir, const DatasetManifest& manifest,
                   std::span<const InstanceRecord> records);
DatasetManifest read_manifest(const std::filesystem::path& dir);
std::vector<InstanceRecord> load_dataset(const std::filesystem::path& dir);
/// Content hash over the manifest and every image/mask file.
std::string dataset_hash(const std::filesystem::path& dir);

}  // namespace stamps
