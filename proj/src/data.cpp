#include "lbam/data.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <fstream>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <set>

#include "lbam/error.hpp"
#include "lbam/random.hpp"

namespace lbam {

namespace {

bool is_image_file(const std::filesystem::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

// 8-bit BGR → 3×H×W RGB in [-1,1].
Tensor mat_to_tensor(const cv::Mat& bgr) {
  const int64_t h = bgr.rows;
  const int64_t w = bgr.cols;
  Tensor t = Tensor::empty({3, h, w});
  float* out = t.mutable_data();
  for (int64_t y = 0; y < h; ++y) {
    const auto* row = bgr.ptr<cv::Vec3b>(static_cast<int>(y));
    for (int64_t x = 0; x < w; ++x) {
      for (int64_t c = 0; c < 3; ++c) {
        out[(c * h + y) * w + x] = static_cast<float>(row[x][static_cast<int>(2 - c)]) / 127.5f - 1.0f;
      }
    }
  }
  return t;
}

cv::Mat tensor_to_mat(const Tensor& image) {
  Tensor t = image;
  if (t.dim() == 4) {
    if (t.size(0) != 1) throw ShapeError("save_image expects a single image, got " + shape_str(t.shape()));
    t = Tensor::from_data({t.size(1), t.size(2), t.size(3)}, std::vector<float>(t.data(), t.data() + t.numel()));
  }
  if (t.dim() != 3 || t.size(0) != 3) throw ShapeError("image must be 3×H×W, got " + shape_str(t.shape()));
  const int h = static_cast<int>(t.size(1));
  const int w = static_cast<int>(t.size(2));
  cv::Mat bgr(h, w, CV_8UC3);
  const float* in = t.data();
  for (int y = 0; y < h; ++y) {
    auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        const float v = (in[(static_cast<int64_t>(c) * h + y) * w + x] + 1.0f) * 127.5f;
        row[x][2 - c] = static_cast<unsigned char>(std::clamp(std::lround(v), 0L, 255L));
      }
    }
  }
  return bgr;
}

cv::Mat read_bgr(const std::filesystem::path& path) {
  cv::Mat img = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (img.empty()) throw IoError(fmt::format("cannot decode image {}", path.string()));
  return img;
}

DatasetManifest finalize(DatasetManifest m) {
  std::set<std::string> unique(m.files.begin(), m.files.end());
  m.files.assign(unique.begin(), unique.end());
  return m;
}

}  // namespace

DatasetManifest DatasetManifest::from_file(const std::filesystem::path& manifest, const std::string& split,
                                           uint64_t seed) {
  std::ifstream in(manifest);
  if (!in) throw IoError(fmt::format("cannot open manifest {}", manifest.string()));
  DatasetManifest m;
  m.root = manifest.has_parent_path() ? manifest.parent_path() : std::filesystem::path(".");
  m.split = split;
  m.seed = seed;
  std::string line;
  while (std::getline(in, line)) {
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    const auto last = line.find_last_not_of(" \t\r");
    m.files.push_back(line.substr(first, last - first + 1));
  }
  return finalize(std::move(m));
}

DatasetManifest DatasetManifest::from_directory(const std::filesystem::path& dir, const std::string& split,
                                                uint64_t seed) {
  if (!std::filesystem::is_directory(dir)) throw IoError(fmt::format("not a directory: {}", dir.string()));
  DatasetManifest m;
  m.root = dir;
  m.split = split;
  m.seed = seed;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && is_image_file(entry.path())) m.files.push_back(entry.path().filename().string());
  }
  return finalize(std::move(m));
}

Tensor load_and_crop(const std::filesystem::path& path, uint64_t seed, const CropOptions& options, CropInfo* info) {
  if (options.crop <= 0 || options.min_side < options.crop) {
    throw ConfigError(fmt::format("crop {} must be positive and no larger than min side {}", options.crop,
                                  options.min_side));
  }
  cv::Mat img = read_bgr(path);
  const double scale = static_cast<double>(options.min_side) / std::min(img.rows, img.cols);
  if (std::min(img.rows, img.cols) != options.min_side) {
    const int w = std::max<int>(static_cast<int>(options.min_side), static_cast<int>(std::lround(img.cols * scale)));
    const int h = std::max<int>(static_cast<int>(options.min_side), static_cast<int>(std::lround(img.rows * scale)));
    cv::Mat resized;
    cv::resize(img, resized, cv::Size(w, h), 0, 0, cv::INTER_LINEAR);
    img = resized;
  }
  Rng rng(seed);
  CropInfo ci;
  ci.resized_width = img.cols;
  ci.resized_height = img.rows;
  ci.x = rng.uniform_int(0, img.cols - options.crop);
  ci.y = rng.uniform_int(0, img.rows - options.crop);
  ci.flipped = options.augment && rng.bernoulli(0.5);
  cv::Mat crop = img(cv::Rect(static_cast<int>(ci.x), static_cast<int>(ci.y), static_cast<int>(options.crop),
                              static_cast<int>(options.crop)))
                     .clone();
  if (ci.flipped) cv::flip(crop, crop, 1);
  if (info) *info = ci;
  return mat_to_tensor(crop);
}

Tensor load_image(const std::filesystem::path& path) { return mat_to_tensor(read_bgr(path)); }

Tensor decode_image(const std::vector<unsigned char>& bytes) {
  if (bytes.empty()) throw IoError("empty image payload");
  cv::Mat img = cv::imdecode(bytes, cv::IMREAD_COLOR);
  if (img.empty()) throw IoError("cannot decode image payload");
  return mat_to_tensor(img);
}

void save_image(const Tensor& image, const std::filesystem::path& path) {
  const cv::Mat bgr = tensor_to_mat(image);
  bool ok = false;
  try {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    ok = cv::imwrite(path.string(), bgr);
  } catch (const std::exception&) {
    ok = false;
  }
  if (!ok) throw IoError(fmt::format("cannot write image {}", path.string()));
}

std::vector<unsigned char> encode_png(const Tensor& image) {
  std::vector<unsigned char> out;
  if (!cv::imencode(".png", tensor_to_mat(image), out)) throw IoError("PNG encoding failed");
  return out;
}

Tensor stack(const std::vector<Tensor>& items) {
  if (items.empty()) throw ShapeError("stack of zero tensors");
  Shape shape = items[0].shape();
  std::vector<float> values;
  values.reserve(static_cast<size_t>(items[0].numel()) * items.size());
  for (const Tensor& t : items) {
    if (t.shape() != shape) throw ShapeError("stack: shapes differ");
    values.insert(values.end(), t.data(), t.data() + t.numel());
  }
  shape.insert(shape.begin(), static_cast<int64_t>(items.size()));
  return Tensor::from_data(std::move(shape), std::move(values));
}

}  // namespace lbam
