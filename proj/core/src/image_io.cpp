#include "stamps/image_io.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "stamps/errors.hpp"

namespace stamps {
namespace {

cv::Mat resize_if(const cv::Mat& in, std::optional<int64_t> size, int interp) {
  if (!size || (in.rows == *size && in.cols == *size)) return in;
  if (*size <= 0) throw ConfigError("resize target must be positive");
  cv::Mat out;
  cv::resize(in, out, cv::Size(static_cast<int>(*size), static_cast<int>(*size)), 0, 0, interp);
  return out;
}

ImageTensor mat_to_image(const cv::Mat& bgr, std::optional<int64_t> size) {
  if (bgr.empty()) throw FormatError("could not decode image");
  cv::Mat rgb;
  if (bgr.channels() == 1) {
    cv::cvtColor(bgr, rgb, cv::COLOR_GRAY2RGB);
  } else if (bgr.channels() == 4) {
    cv::cvtColor(bgr, rgb, cv::COLOR_BGRA2RGB);
  } else {
    cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  }
  rgb = resize_if(rgb, size, cv::INTER_AREA);
  auto t = torch::from_blob(rgb.data, {rgb.rows, rgb.cols, 3}, torch::kUInt8).clone();
  return from_uint8(t);
}

MaskTensor mat_to_mask(const cv::Mat& in, std::optional<int64_t> size) {
  if (in.empty()) throw FormatError("could not decode mask");
  cv::Mat gray;
  if (in.channels() == 1) {
    gray = in;
  } else if (in.channels() == 4) {
    cv::cvtColor(in, gray, cv::COLOR_BGRA2GRAY);
  } else {
    cv::cvtColor(in, gray, cv::COLOR_BGR2GRAY);
  }
  gray = resize_if(gray, size, cv::INTER_NEAREST);
  auto t = torch::from_blob(gray.data, {gray.rows, gray.cols}, torch::kUInt8).clone();
  return MaskTensor::from((t > 127).to(torch::kFloat32), /*binary=*/true);
}

cv::Mat image_to_mat(const ImageTensor& image) {
  auto u8 = to_uint8(image).contiguous();
  cv::Mat rgb(static_cast<int>(image.height()), static_cast<int>(image.width()), CV_8UC3,
              u8.data_ptr<std::uint8_t>());
  cv::Mat bgr;
  cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
  return bgr;
}

cv::Mat mask_to_mat(const MaskTensor& mask) {
  auto u8 = (mask.tensor() * 255.0).round().clamp(0, 255).to(torch::kUInt8).contiguous();
  cv::Mat gray(static_cast<int>(mask.height()), static_cast<int>(mask.width()), CV_8UC1,
               u8.data_ptr<std::uint8_t>());
  return gray.clone();
}

Bytes encode(const cv::Mat& mat) {
  std::vector<uchar> buf;
  if (!cv::imencode(".png", mat, buf)) throw FormatError("png encoding failed");
  return Bytes(buf.begin(), buf.end());
}

cv::Mat decode(std::span<const std::uint8_t> bytes, int flags) {
  if (bytes.empty()) throw FormatError("empty image payload");
  cv::Mat raw(1, static_cast<int>(bytes.size()), CV_8UC1, const_cast<std::uint8_t*>(bytes.data()));
  return cv::imdecode(raw, flags);
}

}  // namespace

torch::Tensor to_uint8(const ImageTensor& image) {
  return ((image.tensor() + 1.0) * 127.5).round().clamp(0, 255).to(torch::kUInt8);
}

ImageTensor from_uint8(const torch::Tensor& hwc_u8) {
  return ImageTensor::from(hwc_u8.to(torch::kFloat32) / 127.5 - 1.0);
}

ImageTensor load_image(const std::string& path, std::optional<int64_t> size) {
  cv::Mat m = cv::imread(path, cv::IMREAD_COLOR);
  if (m.empty()) throw FormatError("cannot read image " + path);
  return mat_to_image(m, size);
}

void save_image(const ImageTensor& image, const std::string& path) {
  if (!cv::imwrite(path, image_to_mat(image))) throw FormatError("cannot write image " + path);
}

MaskTensor load_mask(const std::string& path, std::optional<int64_t> size) {
  cv::Mat m = cv::imread(path, cv::IMREAD_UNCHANGED);
  if (m.empty()) throw FormatError("cannot read mask " + path);
  if (m.depth() != CV_8U) m.convertTo(m, CV_8U);
  return mat_to_mask(m, size);
}

void save_mask(const MaskTensor& mask, const std::string& path) {
  if (!cv::imwrite(path, mask_to_mat(mask))) throw FormatError("cannot write mask " + path);
}

Bytes encode_png(const ImageTensor& image) { return encode(image_to_mat(image)); }

Bytes encode_png(const MaskTensor& mask) { return encode(mask_to_mat(mask)); }

ImageTensor decode_image(std::span<const std::uint8_t> bytes, std::optional<int64_t> size) {
  return mat_to_image(decode(bytes, cv::IMREAD_COLOR), size);
}

MaskTensor decode_mask(std::span<const std::uint8_t> bytes, std::optional<int64_t> size) {
  return mat_to_mask(decode(bytes, cv::IMREAD_UNCHANGED), size);
}

}  // namespace stamps
