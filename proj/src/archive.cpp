#include "lbam/archive.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fmt/format.h>
#include <fstream>

#include "lbam/error.hpp"

namespace lbam {

static_assert(std::endian::native == std::endian::little, "archive I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'L', 'B', 'A', 'M', 'A', 'R', 'C', '\0'};
constexpr uint8_t kFloat32 = 0;

void crc_update(uLong& crc, const char* data, size_t n) {
  while (n > 0) {
    const uInt chunk = static_cast<uInt>(std::min<size_t>(n, 1u << 30));
    crc = crc32(crc, reinterpret_cast<const Bytef*>(data), chunk);
    data += chunk;
    n -= chunk;
  }
}

class Writer {
 public:
  Writer(std::ofstream& out, std::string path) : out_(out), path_(std::move(path)) {}

  template <class T>
  void put(T value) {
    put_bytes(&value, sizeof(T));
  }
  void put_bytes(const void* data, size_t n) {
    const auto* p = static_cast<const char*>(data);
    crc_update(crc_, p, n);
    out_.write(p, static_cast<std::streamsize>(n));
    if (!out_) throw IoError(fmt::format("write to {} failed", path_));
  }
  uint32_t crc() const { return static_cast<uint32_t>(crc_); }

 private:
  std::ofstream& out_;
  std::string path_;
  uLong crc_ = crc32(0L, Z_NULL, 0);
};

// Reads the checksummed body (everything before the trailing CRC).
class Reader {
 public:
  Reader(std::ifstream& in, size_t limit, std::string path) : in_(in), limit_(limit), path_(std::move(path)) {}

  template <class T>
  T get() {
    T value;
    read(&value, sizeof(T));
    return value;
  }
  void read(void* dst, size_t n) {
    if (n > remaining()) throw CorruptFileError(fmt::format("{}: truncated archive", path_));
    in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<size_t>(in_.gcount()) != n) throw CorruptFileError(fmt::format("{}: truncated archive", path_));
    crc_update(crc_, static_cast<const char*>(dst), n);
    pos_ += n;
  }
  size_t remaining() const { return limit_ - pos_; }
  uint32_t crc() const { return static_cast<uint32_t>(crc_); }

 private:
  std::ifstream& in_;
  size_t limit_;
  size_t pos_ = 0;
  std::string path_;
  uLong crc_ = crc32(0L, Z_NULL, 0);
};

}  // namespace

const Tensor& Archive::get(const std::string& name) const {
  for (const NamedTensor& t : tensors) {
    if (t.name == name) return t.tensor;
  }
  throw IoError(fmt::format("archive has no entry '{}'", name));
}

bool Archive::contains(const std::string& name) const {
  for (const NamedTensor& t : tensors) {
    if (t.name == name) return true;
  }
  return false;
}

void save_archive(const std::filesystem::path& path, const Archive& archive) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(fmt::format("cannot open {} for writing", tmp.string()));
    Writer w(out, tmp.string());
    w.put_bytes(kMagic, sizeof(kMagic));
    w.put<uint32_t>(kArchiveVersion);
    const std::string meta = archive.metadata.dump();
    w.put<uint64_t>(meta.size());
    w.put_bytes(meta.data(), meta.size());
    w.put<uint32_t>(static_cast<uint32_t>(archive.tensors.size()));
    for (const NamedTensor& t : archive.tensors) {
      w.put<uint32_t>(static_cast<uint32_t>(t.name.size()));
      w.put_bytes(t.name.data(), t.name.size());
      w.put<uint8_t>(kFloat32);
      w.put<uint32_t>(static_cast<uint32_t>(t.tensor.dim()));
      for (int64_t d : t.tensor.shape()) w.put<uint64_t>(static_cast<uint64_t>(d));
      w.put_bytes(t.tensor.data(), static_cast<size_t>(t.tensor.numel()) * sizeof(float));
    }
    const uint32_t crc = w.crc();
    out.write(reinterpret_cast<const char*>(&crc), sizeof(crc));
    out.flush();
    if (!out) throw IoError(fmt::format("write to {} failed", tmp.string()));
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError(fmt::format("cannot move {} to {}: {}", tmp.string(), path.string(), ec.message()));
}

Archive load_archive(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(fmt::format("cannot open {}", path.string()));
  const std::string name = path.string();
  std::error_code ec;
  const auto size = static_cast<size_t>(std::filesystem::file_size(path, ec));
  if (ec) throw IoError(fmt::format("cannot stat {}", name));
  char magic[sizeof(kMagic)] = {};
  in.read(magic, sizeof(magic));
  if (size < sizeof(kMagic) + 4 || !in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw CorruptFileError(fmt::format("{}: not a tensor archive", name));
  }
  uint32_t version = 0;
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  if (version > kArchiveVersion) {
    throw VersionError(fmt::format("{}: archive version {} is newer than supported version {}", name,
                                   version, kArchiveVersion),
                       static_cast<int>(version), static_cast<int>(kArchiveVersion));
  }
  if (size < sizeof(kMagic) + 8) throw CorruptFileError(fmt::format("{}: truncated archive", name));

  in.seekg(0);
  Reader r(in, size - 4, name);
  r.read(magic, sizeof(magic));
  r.get<uint32_t>();
  Archive archive;
  const auto meta_len = r.get<uint64_t>();
  if (meta_len > r.remaining()) throw CorruptFileError(fmt::format("{}: truncated archive", name));
  std::string meta(static_cast<size_t>(meta_len), '\0');
  r.read(meta.data(), meta.size());
  try {
    archive.metadata = nlohmann::json::parse(meta);
  } catch (const nlohmann::json::exception& e) {
    throw CorruptFileError(fmt::format("{}: bad metadata: {}", name, e.what()));
  }
  const auto count = r.get<uint32_t>();
  for (uint32_t i = 0; i < count; ++i) {
    const auto name_len = r.get<uint32_t>();
    if (name_len > r.remaining()) throw CorruptFileError(fmt::format("{}: truncated archive", name));
    std::string entry(name_len, '\0');
    r.read(entry.data(), entry.size());
    if (r.get<uint8_t>() != kFloat32) {
      throw CorruptFileError(fmt::format("{}: entry '{}' has an unknown dtype", name, entry));
    }
    const auto ndim = r.get<uint32_t>();
    if (ndim > r.remaining() / sizeof(uint64_t)) throw CorruptFileError(fmt::format("{}: truncated archive", name));
    Shape shape;
    uint64_t n = 1;
    for (uint32_t d = 0; d < ndim; ++d) {
      const auto dim = r.get<uint64_t>();
      shape.push_back(static_cast<int64_t>(dim));
      if (dim != 0 && n > r.remaining() / dim) throw CorruptFileError(fmt::format("{}: truncated archive", name));
      n *= dim;
    }
    if (n > r.remaining() / sizeof(float)) throw CorruptFileError(fmt::format("{}: truncated archive", name));
    Tensor t = Tensor::empty(std::move(shape));
    r.read(t.mutable_data(), static_cast<size_t>(n) * sizeof(float));
    archive.tensors.push_back({std::move(entry), std::move(t)});
  }
  if (r.remaining() != 0) throw CorruptFileError(fmt::format("{}: trailing bytes", name));
  uint32_t stored_crc = 0;
  in.read(reinterpret_cast<char*>(&stored_crc), sizeof(stored_crc));
  if (!in || r.crc() != stored_crc) {
    throw CorruptFileError(fmt::format("{}: checksum mismatch (truncated or corrupt)", name));
  }
  return archive;
}

void restore_tensors(const Archive& archive, const std::vector<NamedTensor>& targets) {
  for (const NamedTensor& t : targets) {
    const Tensor& src = archive.get(t.name);
    if (src.shape() != t.tensor.shape()) {
      throw ShapeError(fmt::format("entry '{}' has shape {}, expected {}", t.name,
                                   shape_str(src.shape()), shape_str(t.tensor.shape())));
    }
    t.tensor.copy_from(src);
  }
}

}  // namespace lbam
