#pragma once

// Minimal COCO-style instance annotation reader: single-class mask extraction.

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stamps/dataset.hpp"

namespace stamps::coco {

/// Decodes an RLE segmentation ({"counts": [...] or "...", "size": [h, w]}).
/// Counts run column-major, starting with background.
MaskTensor decode_rle(const nlohmann::json& rle);
/// Fills polygon lists ([[x0, y0, x1, y1, ...], ...]) into an h x w mask.
MaskTensor rasterize_polygons(const nlohmann::json& polygons, int64_t height, int64_t width);
/// Dispatches on the segmentation encoding.
MaskTensor decode_segmentation(const nlohmann::json& segmentation, int64_t height, int64_t width);

struct ReadOptions {
  std::string category;  // category name, or numeric id as a string
  int64_t size = 64;     // square output resolution
  bool skip_crowd = true;
};

/// Reads every instance of one category. Images come from `images_dir`;
/// images and masks are resized to size x size. No filtering is applied.
std::vector<InstanceRecord> read_instances(const std::filesystem::path& annotation_file,
                                           const std::filesystem::path& images_dir,
                                           const ReadOptions& options);

}  // namespace stamps::coco
