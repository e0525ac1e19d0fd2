#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "lbam/tensor.hpp"

namespace lbam {

/// Hole-ratio interval (lower, upper].
struct RatioBucket {
  double lower = 0.0;
  double upper = 0.0;

  bool contains(double ratio) const { return ratio > lower && ratio <= upper; }
  /// "(0.1,0.2]"
  std::string label() const;
  bool operator==(const RatioBucket&) const = default;
};

const std::array<RatioBucket, 4>& canonical_buckets();
/// Accepts "0.1-0.2", "0.1,0.2" or "(0.1,0.2]".
RatioBucket parse_bucket(const std::string& text);

/// Fraction of hole pixels (value < 0.5). Multi-channel masks count pixels of channel 0.
double compute_mask_ratio(const Tensor& mask);
std::optional<RatioBucket> bucket_of(double ratio);

struct MaskOptions {
  int64_t size = 256;
  int max_attempts = 100;
};

/// Random brush strokes plus a few ellipses/rectangles, rejection-sampled
/// until the hole ratio falls in `bucket`. Returns 1×size×size, 1 = known.
Tensor generate_irregular_mask(const RatioBucket& bucket, uint64_t seed, const MaskOptions& options = {});

/// 8-bit grayscale PNG, 255 = known; thresholded at 128. Returns 1×H×W.
Tensor load_mask(const std::filesystem::path& path);
Tensor decode_mask(const std::vector<unsigned char>& bytes);
void save_mask(const Tensor& mask, const std::filesystem::path& path);
std::vector<unsigned char> encode_mask_png(const Tensor& mask);
/// Sorted PNG files of a mask directory.
std::vector<std::filesystem::path> list_masks(const std::filesystem::path& dir);

struct NetworkInput {
  Tensor image;  // image ⊙ mask
  Tensor mask;   // replicated to 3 channels
};

/// Accepts C×H×W or N×C×H×W images with a 1- or 3-channel mask of equal layout.
NetworkInput compose_network_input(const Tensor& image, const Tensor& mask);

}  // namespace lbam
