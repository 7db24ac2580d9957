#pragma once

// Single-file tensor container: an 8-byte magic, a little-endian u64 header
// length, a JSON header, then raw contiguous tensor payloads. The header's
// "tensors" array records name, dtype, shape, offset and byte length.

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "stamps/nn_blocks.hpp"

namespace stamps {

struct TensorArchive {
  nlohmann::json meta = nlohmann::json::object();
  nn::TensorMap tensors;
};

/// Writes atomically (temp file + rename).
void write_archive(const std::filesystem::path& path, const TensorArchive& archive);
TensorArchive read_archive(const std::filesystem::path& path);
/// Reads only the JSON header (without the "tensors" index).
nlohmann::json read_archive_meta(const std::filesystem::path& path);

}  // namespace stamps
