#pragma once

// PNG/JPEG image and single-channel PNG mask I/O.

#include <optional>
#include <string>

#include "stamps/codec.hpp"
#include "stamps/domain.hpp"

namespace stamps {

/// Loads an RGB image (PNG or JPEG), optionally resized to size x size with area
/// interpolation, and maps [0, 255] to [-1, 1].
ImageTensor load_image(const std::string& path, std::optional<int64_t> size = std::nullopt);
void save_image(const ImageTensor& image, const std::string& path);

/// Loads a single-channel mask; pixels > 127 become 1. Nearest-neighbour resize.
MaskTensor load_mask(const std::string& path, std::optional<int64_t> size = std::nullopt);
void save_mask(const MaskTensor& mask, const std::string& path);

Bytes encode_png(const ImageTensor& image);
Bytes encode_png(const MaskTensor& mask);
ImageTensor decode_image(std::span<const std::uint8_t> bytes, std::optional<int64_t> size = std::nullopt);
/// Decodes any 8-bit image as a mask: grayscale value > 127 becomes 1.
MaskTensor decode_mask(std::span<const std::uint8_t> bytes, std::optional<int64_t> size = std::nullopt);

/// [-1, 1] -> uint8 using round((x + 1) * 127.5). Result is [H, W, 3] uint8.
torch::Tensor to_uint8(const ImageTensor& image);
ImageTensor from_uint8(const torch::Tensor& hwc_u8);

}  // namespace stamps
