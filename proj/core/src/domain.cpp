#include "stamps/domain.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "stamps/errors.hpp"

namespace stamps {
namespace {

std::string shape_str(const torch::Tensor& t) {
  std::ostringstream os;
  os << t.sizes();
  return os.str();
}

torch::Tensor to_cpu_float(torch::Tensor t) {
  return t.to(torch::kCPU, torch::kFloat32).contiguous();
}

void require_same_hw(int64_t h1, int64_t w1, int64_t h2, int64_t w2, const char* what) {
  if (h1 != h2 || w1 != w2) {
    std::ostringstream os;
    os << what << ": shape mismatch " << h1 << "x" << w1 << " vs " << h2 << "x" << w2;
    throw DimensionError(os.str());
  }
}

}  // namespace

// ImageTensor ----------------------------------------------------------------

ImageTensor ImageTensor::from(torch::Tensor hwc) {
  if (!hwc.defined() || hwc.dim() != 3 || hwc.size(2) != 3 || hwc.size(0) <= 0 ||
      hwc.size(1) <= 0) {
    throw DimensionError("ImageTensor expects [H, W, 3], got " +
                         (hwc.defined() ? shape_str(hwc) : std::string("undefined")));
  }
  auto t = to_cpu_float(std::move(hwc));
  if (!torch::isfinite(t).all().item<bool>()) {
    throw Error("ImageTensor contains non-finite values");
  }
  return ImageTensor(t);
}

ImageTensor ImageTensor::from_chw(const torch::Tensor& chw) {
  auto t = chw;
  if (t.dim() == 4) {
    if (t.size(0) != 1) throw DimensionError("ImageTensor::from_chw expects batch of 1");
    t = t.squeeze(0);
  }
  if (t.dim() != 3 || t.size(0) != 3) {
    throw DimensionError("ImageTensor::from_chw expects [3, H, W], got " + shape_str(chw));
  }
  return from(t.detach().permute({1, 2, 0}));
}

ImageTensor ImageTensor::filled(int64_t height, int64_t width, float value) {
  return from(torch::full({height, width, 3}, value));
}

torch::Tensor ImageTensor::to_nchw() const { return data_.permute({2, 0, 1}).unsqueeze(0); }

bool ImageTensor::equal(const ImageTensor& other) const {
  return data_.defined() && other.data_.defined() && torch::equal(data_, other.data_);
}

// MaskTensor -----------------------------------------------------------------

MaskTensor MaskTensor::from(torch::Tensor hw, bool binary) {
  if (!hw.defined() || hw.dim() != 2 || hw.size(0) <= 0 || hw.size(1) <= 0) {
    throw DimensionError("MaskTensor expects [H, W], got " +
                         (hw.defined() ? shape_str(hw) : std::string("undefined")));
  }
  auto t = to_cpu_float(std::move(hw));
  if (!torch::isfinite(t).all().item<bool>()) {
    throw Error("MaskTensor contains non-finite values");
  }
  if (binary) {
    if (!((t == 0) | (t == 1)).all().item<bool>()) {
      throw Error("binary MaskTensor must contain only 0 and 1");
    }
  } else {
    t = t.clamp(0.0, 1.0);
  }
  return MaskTensor(t, binary);
}

MaskTensor MaskTensor::from_chw(const torch::Tensor& chw, bool binary) {
  auto t = chw.detach();
  while (t.dim() > 2 && t.size(0) == 1) t = t.squeeze(0);
  if (t.dim() != 2) throw DimensionError("MaskTensor::from_chw expects [1, H, W], got " + shape_str(chw));
  return from(t, binary);
}

MaskTensor MaskTensor::filled(int64_t height, int64_t width, float value) {
  const bool binary = value == 0.0f || value == 1.0f;
  return from(torch::full({height, width}, value), binary);
}

torch::Tensor MaskTensor::to_nchw() const { return data_.unsqueeze(0).unsqueeze(0); }

int64_t MaskTensor::nonzero_count() const { return (data_ != 0).sum().item<int64_t>(); }

bool MaskTensor::equal(const MaskTensor& other) const {
  return data_.defined() && other.data_.defined() && torch::equal(data_, other.data_);
}

// BoundingBox / LatentVector ---------------------------------------------------

torch::Tensor BoundingBox::vec_tensor() const {
  return torch::tensor({vec[0], vec[1], vec[2], vec[3]}, torch::kFloat32);
}

LatentVector LatentVector::from(torch::Tensor v) {
  auto t = to_cpu_float(v.detach().reshape({-1}));
  if (t.numel() == 0) throw ConfigError("latent vector must be non-empty");
  if (!torch::isfinite(t).all().item<bool>()) throw Error("latent vector contains non-finite values");
  return LatentVector{t};
}

LatentVector LatentVector::from(const std::vector<double>& v) {
  return from(torch::tensor(v, torch::kFloat64));
}

std::vector<double> LatentVector::to_vector() const {
  std::vector<double> out;
  if (!values.defined()) return out;
  auto d = values.to(torch::kFloat64).contiguous();
  out.assign(d.data_ptr<double>(), d.data_ptr<double>() + d.numel());
  return out;
}

// Operations -------------------------------------------------------------------

namespace ops {

torch::Tensor blend(const torch::Tensor& i, const torch::Tensor& s, const torch::Tensor& m) {
  return i * (1 - m) + s * m;
}

torch::Tensor zero_out(const torch::Tensor& i, const torch::Tensor& m) { return i * (1 - m); }

}  // namespace ops

ImageTensor composite(const ImageTensor& i, const ImageTensor& s, const MaskTensor& m) {
  require_same_hw(i.height(), i.width(), s.height(), s.width(), "composite(i, s)");
  require_same_hw(i.height(), i.width(), m.height(), m.width(), "composite(i, m)");
  auto mm = m.tensor().unsqueeze(-1);
  return ImageTensor::from(ops::blend(i.tensor(), s.tensor(), mm));
}

ImageTensor cutout(const ImageTensor& i, const MaskTensor& m) {
  require_same_hw(i.height(), i.width(), m.height(), m.width(), "cutout");
  return ImageTensor::from(ops::zero_out(i.tensor(), m.tensor().unsqueeze(-1)));
}

ImageTensor foreground(const ImageTensor& i, const MaskTensor& m) {
  require_same_hw(i.height(), i.width(), m.height(), m.width(), "foreground");
  return ImageTensor::from(i.tensor() * m.tensor().unsqueeze(-1));
}

std::pair<PixelSpan, PixelSpan> box_pixel_spans(const std::array<double, 4>& vec,
                                                int64_t height, int64_t width) {
  for (double v : vec) {
    if (!std::isfinite(v) || v < 0.0 || v > 1.0) {
      throw InvalidBoxError("bounding box coordinates must lie in [0, 1]");
    }
  }
  if (!(vec[0] < vec[2]) || !(vec[1] < vec[3])) {
    throw InvalidBoxError("bounding box requires x1 < x2 and y1 < y2");
  }
  const auto w = static_cast<double>(width);
  const auto h = static_cast<double>(height);
  PixelSpan cols{static_cast<int64_t>(std::floor(vec[0] * w)),
                 static_cast<int64_t>(std::ceil(vec[2] * w))};
  PixelSpan rows{static_cast<int64_t>(std::floor(vec[1] * h)),
                 static_cast<int64_t>(std::ceil(vec[3] * h))};
  cols.begin = std::clamp<int64_t>(cols.begin, 0, width);
  cols.end = std::clamp<int64_t>(cols.end, 0, width);
  rows.begin = std::clamp<int64_t>(rows.begin, 0, height);
  rows.end = std::clamp<int64_t>(rows.end, 0, height);
  if (cols.end <= cols.begin || rows.end <= rows.begin) {
    throw InvalidBoxError("bounding box has zero area on the pixel grid");
  }
  return {cols, rows};
}

MaskTensor rasterize_bbox(const std::array<double, 4>& vec, int64_t height, int64_t width) {
  if (height <= 0 || width <= 0) throw DimensionError("rasterize_bbox: non-positive size");
  auto [cols, rows] = box_pixel_spans(vec, height, width);
  auto raster = torch::zeros({height, width});
  raster.slice(0, rows.begin, rows.end).slice(1, cols.begin, cols.end).fill_(1.0f);
  return MaskTensor::from(raster, /*binary=*/true);
}

BoundingBox make_bbox(const std::array<double, 4>& vec, int64_t height, int64_t width) {
  return BoundingBox{vec, rasterize_bbox(vec, height, width)};
}

MaskTensor binarize(const MaskTensor& m, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw ConfigError("binarize threshold must lie in (0, 1)");
  }
  return MaskTensor::from((m.tensor() > threshold).to(torch::kFloat32), /*binary=*/true);
}

StampResult make_stamp_result(const ImageTensor& background, const MaskTensor& mask,
                              const ImageTensor& texture, LatentVector z_mask,
                              LatentVector z_texture) {
  return StampResult{mask, texture, composite(background, texture, mask), std::move(z_mask),
                     std::move(z_texture)};
}

}  // namespace stamps
