#pragma once

// Core value types and the compositing algebra.
//
// Images are channel-last float32 tensors [H, W, 3] in [-1, 1]; masks are
// single-channel float32 tensors [H, W] in [0, 1]. The batched helpers in
// stamps::ops work on NCHW tensors and are what the networks use; the
// value-type operations below are thin, validated wrappers over them.

#include <array>
#include <cstdint>
#include <optional>

#include <torch/torch.h>

namespace stamps {

class ImageTensor {
 public:
  ImageTensor() = default;

  /// Takes a [H, W, 3] tensor. Converts to contiguous float32 on CPU.
  /// Throws DimensionError on bad shape and Error on non-finite values.
  static ImageTensor from(torch::Tensor hwc);
  /// Takes a [3, H, W] or [1, 3, H, W] network tensor.
  static ImageTensor from_chw(const torch::Tensor& chw);
  static ImageTensor filled(int64_t height, int64_t width, float value);

  int64_t height() const { return data_.defined() ? data_.size(0) : 0; }
  int64_t width() const { return data_.defined() ? data_.size(1) : 0; }
  const torch::Tensor& tensor() const { return data_; }
  /// [1, 3, H, W] view for feeding networks.
  torch::Tensor to_nchw() const;

  bool equal(const ImageTensor& other) const;

 private:
  explicit ImageTensor(torch::Tensor t) : data_(std::move(t)) {}
  torch::Tensor data_;
};

class MaskTensor {
 public:
  MaskTensor() = default;

  /// Takes a [H, W] tensor and clamps it to [0, 1]. When `binary` is set the
  /// values must already be exactly 0 or 1.
  static MaskTensor from(torch::Tensor hw, bool binary = false);
  /// Takes a [1, H, W] or [1, 1, H, W] network tensor.
  static MaskTensor from_chw(const torch::Tensor& chw, bool binary = false);
  static MaskTensor filled(int64_t height, int64_t width, float value);

  int64_t height() const { return data_.defined() ? data_.size(0) : 0; }
  int64_t width() const { return data_.defined() ? data_.size(1) : 0; }
  bool binary() const { return binary_; }
  const torch::Tensor& tensor() const { return data_; }
  /// [1, 1, H, W] view for feeding networks.
  torch::Tensor to_nchw() const;
  int64_t nonzero_count() const;

  bool equal(const MaskTensor& other) const;

 private:
  MaskTensor(torch::Tensor t, bool binary) : data_(std::move(t)), binary_(binary) {}
  torch::Tensor data_;
  bool binary_ = false;
};

/// Normalized (x1, y1, x2, y2) box plus its rasterization.
struct BoundingBox {
  std::array<double, 4> vec{};
  MaskTensor raster;

  double x1() const { return vec[0]; }
  double y1() const { return vec[1]; }
  double x2() const { return vec[2]; }
  double y2() const { return vec[3]; }
  torch::Tensor vec_tensor() const;
};

/// Half-open pixel range [begin, end) covered by a box along one axis.
struct PixelSpan {
  int64_t begin = 0;
  int64_t end = 0;
};

struct LatentVector {
  torch::Tensor values;  // [dim], float32

  static LatentVector from(torch::Tensor v);
  static LatentVector from(const std::vector<double>& v);
  int64_t dim() const { return values.defined() ? values.numel() : 0; }
  std::vector<double> to_vector() const;
};

struct StampResult {
  MaskTensor mask;
  ImageTensor texture;
  ImageTensor composite;
  LatentVector z_mask;
  LatentVector z_texture;
};

// Value-type operations ------------------------------------------------------

/// i * (1 - m) + s * m.
ImageTensor composite(const ImageTensor& i, const ImageTensor& s, const MaskTensor& m);
/// i * (1 - m).
ImageTensor cutout(const ImageTensor& i, const MaskTensor& m);
/// i * m: the foreground a mask selects.
ImageTensor foreground(const ImageTensor& i, const MaskTensor& m);

/// Pixel columns/rows covered by a normalized box: floor(start), ceil(end).
std::pair<PixelSpan, PixelSpan> box_pixel_spans(const std::array<double, 4>& vec,
                                                int64_t height, int64_t width);
/// Throws InvalidBoxError for out-of-range, inverted or zero-area boxes.
MaskTensor rasterize_bbox(const std::array<double, 4>& vec, int64_t height, int64_t width);
BoundingBox make_bbox(const std::array<double, 4>& vec, int64_t height, int64_t width);

constexpr double kDefaultBinarizeThreshold = 0.5;
/// 1 where m > threshold, else 0. Threshold must lie in (0, 1).
MaskTensor binarize(const MaskTensor& m, double threshold = kDefaultBinarizeThreshold);

StampResult make_stamp_result(const ImageTensor& background, const MaskTensor& mask,
                              const ImageTensor& texture, LatentVector z_mask,
                              LatentVector z_texture);

namespace ops {

// Batched NCHW forms. Masks broadcast over the channel axis.
torch::Tensor blend(const torch::Tensor& i, const torch::Tensor& s, const torch::Tensor& m);
torch::Tensor zero_out(const torch::Tensor& i, const torch::Tensor& m);

}  // namespace ops

}  // namespace stamps
