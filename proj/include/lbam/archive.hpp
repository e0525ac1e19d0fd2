#pragma once

// Single-file tensor archive:
//   "LBAMARC\0" | u32 version | u64 n | n bytes of JSON metadata | u32 count |
//   count × (u32 name length | name | u8 dtype | u32 ndim | ndim × u64 dim | float32 data) |
//   u32 crc32 of everything before it
// All integers and floats little-endian.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "lbam/tensor.hpp"

namespace lbam {

inline constexpr uint32_t kArchiveVersion = 1;

struct Archive {
  nlohmann::json metadata = nlohmann::json::object();
  std::vector<NamedTensor> tensors;

  /// Throws IoError when the entry is absent.
  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const;
};

/// Writes atomically (temporary file + rename).
void save_archive(const std::filesystem::path& path, const Archive& archive);
Archive load_archive(const std::filesystem::path& path);

/// Copies archive entries into same-named tensors; every target must be present.
void restore_tensors(const Archive& archive, const std::vector<NamedTensor>& targets);

}  // namespace lbam
