#include "lbam/evaluation.hpp"

#include <algorithm>
#include <fmt/format.h>

#include "lbam/autograd.hpp"
#include "lbam/error.hpp"
#include "lbam/metrics.hpp"
#include "lbam/ops.hpp"
#include "lbam/random.hpp"

namespace lbam {

namespace {

struct Accumulator {
  int64_t count = 0;
  MetricTriple raw;
  MetricTriple comp;

  static void add(MetricTriple& into, const MetricTriple& m) {
    into.psnr += m.psnr;
    into.ssim += m.ssim;
    into.mean_l1_percent += m.mean_l1_percent;
  }
  static MetricTriple mean(const MetricTriple& sum, int64_t n) {
    if (n == 0) return {};
    const double d = static_cast<double>(n);
    return {sum.psnr / d, sum.ssim / d, sum.mean_l1_percent / d};
  }
};

Tensor batched_mask(const Tensor& mask) {
  if (mask.dim() == 4) return mask;
  if (mask.dim() == 3) return Tensor::from_data({1, mask.size(0), mask.size(1), mask.size(2)},
                                                std::vector<float>(mask.data(), mask.data() + mask.numel()));
  throw ShapeError("mask must be C×H×W or N×C×H×W, got " + shape_str(mask.shape()));
}

}  // namespace

MetricTriple compare_images(const Tensor& output, const Tensor& gt) {
  const Tensor a = to_unit_range(output);
  const Tensor b = to_unit_range(gt);
  return {psnr(a, b), ssim(a, b), mean_l1_percent(a, b)};
}

std::string EvalReport::table() const {
  const bool comp = !buckets.empty() && buckets.front().composited.has_value();
  std::string out = fmt::format("{:<12}{:<12}{:>14}", "Metric", "Mask", model_name);
  if (comp) out += fmt::format("{:>24}", model_name + " (composited)");
  out += fmt::format("{:>8}\n", "n");
  struct Row {
    const char* label;
    double MetricTriple::*field;
    const char* format;
  };
  const Row rows[] = {{"PSNR", &MetricTriple::psnr, "{:.2f}"},
                      {"SSIM", &MetricTriple::ssim, "{:.3f}"},
                      {"Mean l1(%)", &MetricTriple::mean_l1_percent, "{:.2f}"}};
  for (const Row& row : rows) {
    for (const BucketResult& b : buckets) {
      const std::string raw = b.count ? fmt::format(fmt::runtime(row.format), b.raw.*row.field) : "-";
      out += fmt::format("{:<12}{:<12}{:>14}", row.label, b.bucket.label(), raw);
      if (comp) {
        const std::string c =
            b.count ? fmt::format(fmt::runtime(row.format), (*b.composited).*row.field) : "-";
        out += fmt::format("{:>24}", c);
      }
      out += fmt::format("{:>8}\n", b.count);
    }
  }
  if (unbucketed > 0) out += fmt::format("({} pairs outside every bucket were skipped)\n", unbucketed);
  return out;
}

std::vector<nlohmann::json> EvalReport::records() const {
  std::vector<nlohmann::json> out;
  for (const BucketResult& b : buckets) {
    auto emit = [&](const char* mode, const MetricTriple& m) {
      nlohmann::json j = {{"bucket", b.bucket.label()}, {"mode", mode}, {"n", b.count}, {"model", model_name}};
      if (b.count > 0) {
        j["psnr"] = m.psnr;
        j["ssim"] = m.ssim;
        j["mean_l1_percent"] = m.mean_l1_percent;
      } else {
        j["psnr"] = nullptr;
        j["ssim"] = nullptr;
        j["mean_l1_percent"] = nullptr;
      }
      out.push_back(std::move(j));
    };
    emit("raw", b.raw);
    if (b.composited) emit("composited", *b.composited);
  }
  return out;
}

Predictor network_predictor(const LbamUNet& net) {
  return [&net](const Tensor& input, const Tensor& mask, const Tensor&) { return net.infer(input, mask); };
}

Predictor identity_predictor() {
  return [](const Tensor&, const Tensor&, const Tensor& gt) { return gt; };
}

EvalReport evaluate_buckets(const Predictor& predictor, const DatasetManifest& manifest,
                            const std::vector<Tensor>& masks, const EvalOptions& options) {
  if (manifest.size() == 0) throw ConfigError("evaluation manifest is empty");
  if (masks.empty()) throw ConfigError("evaluation needs at least one mask");
  const auto& canon = canonical_buckets();
  std::vector<Accumulator> acc(canon.size());
  EvalReport report;
  report.model_name = options.model_name;

  CropOptions crop;
  crop.crop = options.image_size;
  crop.min_side = options.min_side;
  crop.augment = false;
  const size_t pairs = std::max(manifest.size(), masks.size());
  for (size_t k = 0; k < pairs; ++k) {
    const Tensor mask = batched_mask(masks[k % masks.size()]);
    const auto bucket = bucket_of(compute_mask_ratio(mask));
    if (!bucket) {
      ++report.unbucketed;
      continue;
    }
    const size_t b = static_cast<size_t>(std::find(canon.begin(), canon.end(), *bucket) - canon.begin());
    const Tensor image = load_and_crop(manifest.path(k % manifest.size()),
                                       derive_seed(options.seed, {static_cast<uint64_t>(k)}), crop);
    const Tensor gt = Tensor::from_data({1, 3, image.size(1), image.size(2)},
                                        std::vector<float>(image.data(), image.data() + image.numel()));
    if (mask.size(2) != gt.size(2) || mask.size(3) != gt.size(3)) {
      throw ShapeError(fmt::format("mask {} does not match evaluation size {}", shape_str(mask.shape()),
                                   options.image_size));
    }
    const Tensor m3 = mask_to_rgb(mask);
    Tensor output;
    {
      NoGradGuard no_grad;
      const Tensor input = gt * m3;
      output = predictor(input, mask, gt);
      if (output.shape() != gt.shape()) {
        throw ShapeError(fmt::format("predictor returned {}, expected {}", shape_str(output.shape()),
                                     shape_str(gt.shape())));
      }
      Accumulator::add(acc[b].raw, compare_images(output, gt));
      if (options.composite) Accumulator::add(acc[b].comp, compare_images(composite_output(output, gt, m3, true), gt));
    }
    ++acc[b].count;
  }
  for (size_t b = 0; b < canon.size(); ++b) {
    BucketResult r;
    r.bucket = canon[b];
    r.count = acc[b].count;
    r.raw = Accumulator::mean(acc[b].raw, r.count);
    if (options.composite) r.composited = Accumulator::mean(acc[b].comp, r.count);
    report.buckets.push_back(r);
  }
  return report;
}

}  // namespace lbam
