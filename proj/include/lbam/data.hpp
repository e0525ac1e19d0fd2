#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "lbam/tensor.hpp"

namespace lbam {

struct DatasetManifest {
  std::filesystem::path root;
  std::vector<std::string> files;  // relative to root; sorted, unique
  std::string split = "train";
  uint64_t seed = 0;

  /// Line-delimited relative paths; blank lines and '#' comments are skipped.
  /// Paths resolve against the manifest's directory.
  static DatasetManifest from_file(const std::filesystem::path& manifest, const std::string& split = "train",
                                   uint64_t seed = 0);
  /// Every PNG/JPEG directly inside `dir`.
  static DatasetManifest from_directory(const std::filesystem::path& dir, const std::string& split = "train",
                                        uint64_t seed = 0);

  size_t size() const { return files.size(); }
  std::filesystem::path path(size_t i) const { return root / files.at(i); }
};

struct CropOptions {
  int64_t crop = 256;
  int64_t min_side = 350;
  bool augment = true;  // random horizontal flip
};

struct CropInfo {
  int64_t x = 0;
  int64_t y = 0;
  bool flipped = false;
  int64_t resized_width = 0;
  int64_t resized_height = 0;
};

/// Resize (bilinear, aspect kept) so the short side equals min_side, take a
/// random crop, optionally flip, and map to [-1,1]. Returns 3×crop×crop.
Tensor load_and_crop(const std::filesystem::path& path, uint64_t seed, const CropOptions& options = {},
                     CropInfo* info = nullptr);

/// Full image as 3×H×W in [-1,1]; IoError naming the path when undecodable.
Tensor load_image(const std::filesystem::path& path);
Tensor decode_image(const std::vector<unsigned char>& bytes);
/// 3×H×W or 1×3×H×W in [-1,1] → 8-bit PNG/JPEG by extension.
void save_image(const Tensor& image, const std::filesystem::path& path);
std::vector<unsigned char> encode_png(const Tensor& image);

/// Stacks equal-shaped C×H×W tensors into N×C×H×W.
Tensor stack(const std::vector<Tensor>& items);

}  // namespace lbam
