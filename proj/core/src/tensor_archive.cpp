#include "stamps/tensor_archive.hpp"

#include <cstring>
#include <fstream>

#include "stamps/errors.hpp"

namespace stamps {
namespace fs = std::filesystem;

namespace {

constexpr char kMagic[8] = {'S', 'T', 'M', 'P', 'A', 'R', 'C', '1'};

std::string dtype_name(torch::Dtype d) {
  switch (d) {
    case torch::kFloat32: return "f32";
    case torch::kFloat64: return "f64";
    case torch::kInt64: return "i64";
    case torch::kUInt8: return "u8";
    default: throw FormatError("tensor archive: unsupported dtype");
  }
}

torch::Dtype dtype_from(const std::string& s) {
  if (s == "f32") return torch::kFloat32;
  if (s == "f64") return torch::kFloat64;
  if (s == "i64") return torch::kInt64;
  if (s == "u8") return torch::kUInt8;
  throw FormatError("tensor archive: unknown dtype " + s);
}

void put_u64(std::ostream& out, uint64_t v) {
  unsigned char b[8];
  for (int k = 0; k < 8; ++k) b[k] = static_cast<unsigned char>(v >> (8 * k));
  out.write(reinterpret_cast<const char*>(b), 8);
}

uint64_t get_u64(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  if (!in) throw FormatError("tensor archive: truncated header");
  uint64_t v = 0;
  for (int k = 0; k < 8; ++k) v |= static_cast<uint64_t>(b[k]) << (8 * k);
  return v;
}

nlohmann::json read_header(std::istream& in, const fs::path& path) {
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0) {
    throw FormatError("not a tensor archive: " + path.string());
  }
  const uint64_t len = get_u64(in);
  if (len > (uint64_t{1} << 30)) throw FormatError("tensor archive: header too large");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw FormatError("tensor archive: truncated header");
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("tensor archive header: ") + e.what());
  }
}

}  // namespace

void write_archive(const fs::path& path, const TensorArchive& archive) {
  nlohmann::json header = archive.meta;
  nlohmann::json index = nlohmann::json::array();
  std::vector<torch::Tensor> payloads;
  uint64_t offset = 0;
  for (const auto& [name, t] : archive.tensors) {
    auto c = t.detach().to(torch::kCPU).contiguous();
    const uint64_t nbytes = static_cast<uint64_t>(c.numel()) * c.element_size();
    index.push_back({{"name", name},
                     {"dtype", dtype_name(c.scalar_type())},
                     {"shape", c.sizes().vec()},
                     {"offset", offset},
                     {"nbytes", nbytes}});
    offset += nbytes;
    payloads.push_back(c);
  }
  header["tensors"] = index;
  const std::string text = header.dump();

  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write " + tmp.string());
    out.write(kMagic, 8);
    put_u64(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& c : payloads) {
      out.write(static_cast<const char*>(c.data_ptr()),
                static_cast<std::streamsize>(c.numel() * c.element_size()));
    }
    if (!out) throw FormatError("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

TensorArchive read_archive(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  auto header = read_header(in, path);
  const auto base = static_cast<uint64_t>(in.tellg());
  TensorArchive archive;
  if (!header.contains("tensors") || !header["tensors"].is_array()) {
    throw FormatError("tensor archive: missing tensor index");
  }
  for (const auto& e : header["tensors"]) {
    const auto shape = e.at("shape").get<std::vector<int64_t>>();
    const auto dtype = dtype_from(e.at("dtype").get<std::string>());
    auto t = torch::empty(shape, torch::TensorOptions().dtype(dtype));
    const auto nbytes = e.at("nbytes").get<uint64_t>();
    if (nbytes != static_cast<uint64_t>(t.numel()) * t.element_size()) {
      throw FormatError("tensor archive: size mismatch for " + e.at("name").get<std::string>());
    }
    in.seekg(static_cast<std::streamoff>(base + e.at("offset").get<uint64_t>()));
    in.read(static_cast<char*>(t.data_ptr()), static_cast<std::streamsize>(nbytes));
    if (!in) throw FormatError("tensor archive: truncated payload");
    archive.tensors[e.at("name").get<std::string>()] = t;
  }
  header.erase("tensors");
  archive.meta = std::move(header);
  return archive;
}

nlohmann::json read_archive_meta(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  auto header = read_header(in, path);
  header.erase("tensors");
  return header;
}

}  // namespace stamps
