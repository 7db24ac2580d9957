#include "stamps/coco.hpp"

#include <fstream>
#include <map>

#include <opencv2/imgproc.hpp>

#include "stamps/errors.hpp"
#include "stamps/image_io.hpp"

namespace stamps::coco {
namespace fs = std::filesystem;

namespace {

std::vector<int64_t> rle_counts(const nlohmann::json& counts) {
  std::vector<int64_t> out;
  if (counts.is_array()) {
    for (const auto& c : counts) out.push_back(c.get<int64_t>());
    return out;
  }
  // Compressed form used by pycocotools: 5-bit groups with a continuation
  // flag, deltas against the count two positions back.
  const auto s = counts.get<std::string>();
  size_t p = 0;
  while (p < s.size()) {
    int64_t x = 0;
    int k = 0;
    bool more = true;
    while (more) {
      if (p >= s.size()) throw FormatError("truncated compressed RLE");
      const int64_t c = static_cast<int64_t>(s[p]) - 48;
      x |= (c & 0x1f) << (5 * k);
      more = (c & 0x20) != 0;
      ++p;
      ++k;
      if (!more && (c & 0x10)) x |= -1LL << (5 * k);
    }
    if (out.size() > 2) x += out[out.size() - 2];
    out.push_back(x);
  }
  return out;
}

}  // namespace

MaskTensor decode_rle(const nlohmann::json& rle) {
  const auto size = rle.at("size");
  const int64_t h = size.at(0).get<int64_t>();
  const int64_t w = size.at(1).get<int64_t>();
  if (h <= 0 || w <= 0) throw FormatError("RLE size must be positive");
  const auto counts = rle_counts(rle.at("counts"));
  // Column-major fill, then transpose to row-major.
  std::vector<float> colmajor(static_cast<size_t>(h * w), 0.0f);
  int64_t pos = 0;
  float value = 0.0f;
  for (int64_t run : counts) {
    if (run < 0 || pos + run > h * w) throw FormatError("RLE counts exceed mask size");
    std::fill(colmajor.begin() + pos, colmajor.begin() + pos + run, value);
    pos += run;
    value = 1.0f - value;
  }
  auto t = torch::from_blob(colmajor.data(), {w, h}, torch::kFloat32).t().contiguous().clone();
  return MaskTensor::from(t, /*binary=*/true);
}

MaskTensor rasterize_polygons(const nlohmann::json& polygons, int64_t height, int64_t width) {
  cv::Mat canvas = cv::Mat::zeros(static_cast<int>(height), static_cast<int>(width), CV_8UC1);
  std::vector<std::vector<cv::Point>> polys;
  for (const auto& poly : polygons) {
    if (poly.size() < 6 || poly.size() % 2 != 0) continue;
    std::vector<cv::Point> pts;
    for (size_t k = 0; k + 1 < poly.size(); k += 2) {
      pts.emplace_back(static_cast<int>(std::lround(poly[k].get<double>())),
                       static_cast<int>(std::lround(poly[k + 1].get<double>())));
    }
    polys.push_back(std::move(pts));
  }
  if (!polys.empty()) cv::fillPoly(canvas, polys, cv::Scalar(1));
  auto t = torch::from_blob(canvas.data, {height, width}, torch::kUInt8).to(torch::kFloat32);
  return MaskTensor::from(t, /*binary=*/true);
}

MaskTensor decode_segmentation(const nlohmann::json& segmentation, int64_t height, int64_t width) {
  if (segmentation.is_array()) return rasterize_polygons(segmentation, height, width);
  if (segmentation.is_object()) return decode_rle(segmentation);
  throw FormatError("unsupported segmentation encoding");
}

std::vector<InstanceRecord> read_instances(const fs::path& annotation_file,
                                           const fs::path& images_dir, const ReadOptions& options) {
  std::ifstream in(annotation_file);
  if (!in) throw FormatError("cannot open " + annotation_file.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("annotation json: ") + e.what());
  }

  int64_t category_id = -1;
  std::string label = options.category;
  for (const auto& c : j.at("categories")) {
    const auto id = c.at("id").get<int64_t>();
    if (c.value("name", "") == options.category || std::to_string(id) == options.category) {
      category_id = id;
      label = c.value("name", options.category);
      break;
    }
  }
  if (category_id < 0) throw ConfigError("category '" + options.category + "' not in annotations");

  struct ImageInfo {
    std::string file;
    int64_t height;
    int64_t width;
  };
  std::map<int64_t, ImageInfo> images;
  for (const auto& im : j.at("images")) {
    images[im.at("id").get<int64_t>()] = {im.at("file_name").get<std::string>(),
                                          im.at("height").get<int64_t>(),
                                          im.at("width").get<int64_t>()};
  }

  std::map<int64_t, ImageTensor> cache;
  std::vector<InstanceRecord> records;
  for (const auto& a : j.at("annotations")) {
    if (a.at("category_id").get<int64_t>() != category_id) continue;
    if (options.skip_crowd && a.value("iscrowd", 0) != 0) continue;
    const auto image_id = a.at("image_id").get<int64_t>();
    const auto it = images.find(image_id);
    if (it == images.end()) throw FormatError("annotation references unknown image");
    const auto& info = it->second;
    auto full = decode_segmentation(a.at("segmentation"), info.height, info.width);
    if (full.nonzero_count() == 0) continue;

    auto cached = cache.find(image_id);
    if (cached == cache.end()) {
      cached = cache.emplace(image_id, load_image((images_dir / info.file).string(), options.size))
                   .first;
    }
    auto small = torch::nn::functional::interpolate(
        full.to_nchw(), torch::nn::functional::InterpolateFuncOptions()
                            .size(std::vector<int64_t>{options.size, options.size})
                            .mode(torch::kNearest));
    auto mask = MaskTensor::from_chw(small, /*binary=*/true);
    if (mask.nonzero_count() == 0) continue;
    records.push_back(InstanceRecord::make(info.file + "#" + std::to_string(a.value("id", 0)),
                                           label, cached->second, std::move(mask)));
  }
  return records;
}

}  // namespace stamps::coco
