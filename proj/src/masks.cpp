#include "lbam/masks.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <numbers>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "lbam/error.hpp"
#include "lbam/generator.hpp"
#include "lbam/ops.hpp"
#include "lbam/random.hpp"

namespace lbam {

namespace {

double hole_ratio(const cv::Mat& hole) {
  return static_cast<double>(cv::countNonZero(hole)) / static_cast<double>(hole.total());
}

cv::Point random_point(Rng& rng, int size) {
  return {static_cast<int>(rng.uniform_int(0, size - 1)), static_cast<int>(rng.uniform_int(0, size - 1))};
}

void draw_shape(cv::Mat& hole, Rng& rng, double scale) {
  const int size = hole.cols;
  const cv::Point center = random_point(rng, size);
  const int lo = std::max(2, static_cast<int>(std::lround(8 * scale)));
  const int hi = std::max(lo + 1, static_cast<int>(std::lround(32 * scale)));
  const int ax = static_cast<int>(rng.uniform_int(lo, hi));
  const int ay = static_cast<int>(rng.uniform_int(lo, hi));
  if (rng.bernoulli(0.5)) {
    const double angle = rng.uniform(0.0, 180.0);
    cv::ellipse(hole, center, cv::Size(ax, ay), angle, 0.0, 360.0, cv::Scalar(255), cv::FILLED);
  } else {
    cv::rectangle(hole, cv::Point(center.x - ax, center.y - ay), cv::Point(center.x + ax, center.y + ay),
                  cv::Scalar(255), cv::FILLED);
  }
}

Tensor hole_to_mask(const cv::Mat& hole) {
  Tensor mask = Tensor::empty({1, hole.rows, hole.cols});
  float* out = mask.mutable_data();
  for (int y = 0; y < hole.rows; ++y) {
    const auto* row = hole.ptr<unsigned char>(y);
    for (int x = 0; x < hole.cols; ++x) out[static_cast<int64_t>(y) * hole.cols + x] = row[x] ? 0.0f : 1.0f;
  }
  return mask;
}

double parse_number(const std::string& s, const std::string& whole) {
  try {
    size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(fmt::format("cannot parse ratio bucket '{}'", whole));
  }
}

}  // namespace

std::string RatioBucket::label() const { return fmt::format("({:g},{:g}]", lower, upper); }

const std::array<RatioBucket, 4>& canonical_buckets() {
  static const std::array<RatioBucket, 4> buckets{{{0.1, 0.2}, {0.2, 0.3}, {0.3, 0.4}, {0.4, 0.5}}};
  return buckets;
}

RatioBucket parse_bucket(const std::string& text) {
  std::string s;
  for (char c : text) {
    if (c != '(' && c != ']' && c != ' ') s.push_back(c);
  }
  const auto sep = s.find_first_of("-,:");
  if (sep == std::string::npos || sep == 0) throw ConfigError(fmt::format("cannot parse ratio bucket '{}'", text));
  RatioBucket b{parse_number(s.substr(0, sep), text), parse_number(s.substr(sep + 1), text)};
  if (b.lower < 0.0 || b.upper > 1.0 || b.upper < b.lower) {
    throw ConfigError(fmt::format("ratio bucket '{}' must satisfy 0 <= lower <= upper <= 1", text));
  }
  return b;
}

double compute_mask_ratio(const Tensor& mask) {
  int64_t planes = 1;
  int64_t plane_size = mask.numel();
  int64_t channels = 1;
  if (mask.dim() == 4) {
    planes = mask.size(0);
    channels = mask.size(1);
    plane_size = mask.size(2) * mask.size(3);
  } else if (mask.dim() == 3) {
    channels = mask.size(0);
    plane_size = mask.size(1) * mask.size(2);
  }
  if (plane_size == 0) throw ShapeError("mask ratio of an empty mask");
  const float* m = mask.data();
  int64_t holes = 0;
  for (int64_t p = 0; p < planes; ++p) {
    const float* plane = m + p * channels * plane_size;
    for (int64_t i = 0; i < plane_size; ++i) holes += plane[i] < 0.5f ? 1 : 0;
  }
  return static_cast<double>(holes) / static_cast<double>(planes * plane_size);
}

std::optional<RatioBucket> bucket_of(double ratio) {
  for (const RatioBucket& b : canonical_buckets()) {
    if (b.contains(ratio)) return b;
  }
  return std::nullopt;
}

Tensor generate_irregular_mask(const RatioBucket& bucket, uint64_t seed, const MaskOptions& options) {
  const int size = static_cast<int>(options.size);
  if (size < 16) throw ConfigError(fmt::format("mask size {} is too small", size));
  const double scale = static_cast<double>(size) / 256.0;
  for (int attempt = 0; attempt < options.max_attempts; ++attempt) {
    Rng rng(derive_seed(seed, {static_cast<uint64_t>(attempt)}));
    cv::Mat hole = cv::Mat::zeros(size, size, CV_8U);

    const int64_t shapes = rng.uniform_int(0, 3);
    for (int64_t k = 0; k < shapes; ++k) {
      cv::Mat trial = hole.clone();
      draw_shape(trial, rng, scale);
      if (hole_ratio(trial) <= bucket.upper) hole = trial;
    }

    double ratio = hole_ratio(hole);
    // Strokes grow the hole to a target drawn across the whole bucket.
    const double target = rng.uniform(bucket.lower, bucket.upper);
    for (int st = 0; st < 64 && ratio <= target; ++st) {
      const int64_t vertices = rng.uniform_int(10, 40);
      const int thickness = std::max(1, static_cast<int>(std::lround(rng.uniform_int(5, 25) * scale)));
      cv::Point2d p(rng.uniform(0.0, size - 1.0), rng.uniform(0.0, size - 1.0));
      double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
      for (int64_t v = 1; v < vertices && ratio <= target; ++v) {
        angle += rng.uniform(-0.4 * std::numbers::pi, 0.4 * std::numbers::pi);
        const double length = rng.uniform(10.0, 40.0) * scale;
        cv::Point2d next(p.x + length * std::cos(angle), p.y + length * std::sin(angle));
        if (next.x < 0.0 || next.x > size - 1.0) {
          angle = std::numbers::pi - angle;
          next.x = std::clamp(next.x, 0.0, size - 1.0);
        }
        if (next.y < 0.0 || next.y > size - 1.0) {
          angle = -angle;
          next.y = std::clamp(next.y, 0.0, size - 1.0);
        }
        cv::line(hole, cv::Point(static_cast<int>(std::lround(p.x)), static_cast<int>(std::lround(p.y))),
                 cv::Point(static_cast<int>(std::lround(next.x)), static_cast<int>(std::lround(next.y))),
                 cv::Scalar(255), thickness, cv::LINE_8);
        ratio = hole_ratio(hole);
        p = next;
      }
    }
    if (bucket.contains(ratio)) return hole_to_mask(hole);
  }
  throw Error(fmt::format("mask generation could not reach bucket {} in {} attempts", bucket.label(),
                          options.max_attempts));
}

Tensor decode_mask(const std::vector<unsigned char>& bytes) {
  if (bytes.empty()) throw IoError("empty mask payload");
  cv::Mat gray = cv::imdecode(bytes, cv::IMREAD_GRAYSCALE);
  if (gray.empty()) throw IoError("cannot decode mask payload");
  cv::Mat hole;
  cv::threshold(gray, hole, 127, 255, cv::THRESH_BINARY_INV);
  return hole_to_mask(hole);
}

Tensor load_mask(const std::filesystem::path& path) {
  cv::Mat gray = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
  if (gray.empty()) throw IoError(fmt::format("cannot decode mask {}", path.string()));
  cv::Mat hole;
  cv::threshold(gray, hole, 127, 255, cv::THRESH_BINARY_INV);
  return hole_to_mask(hole);
}

namespace {

cv::Mat mask_to_gray(const Tensor& mask) {
  int64_t h = 0;
  int64_t w = 0;
  if (mask.dim() == 2) {
    h = mask.size(0);
    w = mask.size(1);
  } else if (mask.dim() == 3 || (mask.dim() == 4 && mask.size(0) == 1)) {
    h = mask.size(-2);
    w = mask.size(-1);
  } else {
    throw ShapeError("expected a single mask, got " + shape_str(mask.shape()));
  }
  cv::Mat gray(static_cast<int>(h), static_cast<int>(w), CV_8U);
  const float* m = mask.data();
  for (int64_t y = 0; y < h; ++y) {
    auto* row = gray.ptr<unsigned char>(static_cast<int>(y));
    for (int64_t x = 0; x < w; ++x) row[x] = m[y * w + x] >= 0.5f ? 255 : 0;
  }
  return gray;
}

}  // namespace

void save_mask(const Tensor& mask, const std::filesystem::path& path) {
  const cv::Mat gray = mask_to_gray(mask);
  bool ok = false;
  try {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    ok = cv::imwrite(path.string(), gray);
  } catch (const std::exception&) {
    ok = false;
  }
  if (!ok) throw IoError(fmt::format("cannot write mask {}", path.string()));
}

std::vector<unsigned char> encode_mask_png(const Tensor& mask) {
  std::vector<unsigned char> out;
  if (!cv::imencode(".png", mask_to_gray(mask), out)) throw IoError("PNG encoding failed");
  return out;
}

std::vector<std::filesystem::path> list_masks(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError(fmt::format("mask directory not found: {}", dir.string()));
  std::vector<std::filesystem::path> out;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    std::string ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (entry.is_regular_file() && ext == ".png") out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end());
  if (out.empty()) throw IoError(fmt::format("no PNG masks in {}", dir.string()));
  return out;
}

NetworkInput compose_network_input(const Tensor& image, const Tensor& mask) {
  const bool batched = image.dim() == 4;
  if (!batched && image.dim() != 3) throw ShapeError("image must be C×H×W or N×C×H×W, got " + shape_str(image.shape()));
  Tensor img4 = batched ? image : ops::reshape(image, {1, image.size(0), image.size(1), image.size(2)});
  Tensor m4 = mask.dim() == 4 ? mask : ops::reshape(mask, {1, mask.size(0), mask.size(1), mask.size(2)});
  if (m4.size(0) != img4.size(0) || m4.size(2) != img4.size(2) || m4.size(3) != img4.size(3)) {
    throw ShapeError(fmt::format("mask {} does not match image {}", shape_str(mask.shape()), shape_str(image.shape())));
  }
  const Tensor m3 = mask_to_rgb(m4);
  NetworkInput in{img4 * m3, m3};
  if (!batched) {
    in.image = ops::reshape(in.image, image.shape());
    in.mask = ops::reshape(in.mask, in.image.shape());
  }
  return in;
}

}  // namespace lbam
