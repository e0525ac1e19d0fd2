#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "lbam/data.hpp"
#include "lbam/generator.hpp"
#include "lbam/masks.hpp"
#include "lbam/tensor.hpp"

namespace lbam {

struct MetricTriple {
  double psnr = 0.0;
  double ssim = 0.0;
  double mean_l1_percent = 0.0;
};

/// Metrics of two [-1,1] images after mapping both to [0,1].
MetricTriple compare_images(const Tensor& output, const Tensor& gt);

struct BucketResult {
  RatioBucket bucket;
  int64_t count = 0;
  MetricTriple raw;                         // means; zeros when count == 0
  std::optional<MetricTriple> composited;  // set in composite mode
};

struct EvalReport {
  std::vector<BucketResult> buckets;  // canonical order
  int64_t unbucketed = 0;             // pairs whose mask ratio fits no bucket
  std::string model_name = "model";

  /// Rows grouped by metric then mask bucket, one column per output mode.
  std::string table() const;
  /// One JSON object per bucket and mode.
  std::vector<nlohmann::json> records() const;
};

/// (masked input image, mask, ground truth) → N×3×H×W output in [-1,1].
/// The ground truth is passed only so oracle models can be plugged in.
using Predictor = std::function<Tensor(const Tensor& input, const Tensor& mask, const Tensor& gt)>;

Predictor network_predictor(const LbamUNet& net);
/// Returns the ground truth unchanged.
Predictor identity_predictor();

struct EvalOptions {
  int64_t image_size = 256;
  int64_t min_side = 350;
  uint64_t seed = 0;
  bool composite = false;
  std::string model_name = "model";
};

/// Pairs image k mod |images| with mask k mod |masks| for
/// k < max(|images|, |masks|), buckets each pair by mask ratio and averages.
EvalReport evaluate_buckets(const Predictor& predictor, const DatasetManifest& manifest,
                            const std::vector<Tensor>& masks, const EvalOptions& options = {});

/// Channel-mean of sample 0 of an N×C×h×w map, min-max scaled to [0,1] (all
/// zeros when constant). Returns h×w.
Tensor normalize_heatmap(const Tensor& map, bool magnitude = false);

/// Writes JET-colored PNGs for forward attention layers 1-3, reverse attention
/// layers 11-13 and feature magnitudes of layers 1 and 13. Returns the paths.
std::vector<std::filesystem::path> render_heatmaps(const ForwardState& state, const std::filesystem::path& out_dir);

}  // namespace lbam
