#include <algorithm>
#include <fmt/format.h>
#include <limits>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "lbam/error.hpp"
#include "lbam/evaluation.hpp"

namespace lbam {

Tensor normalize_heatmap(const Tensor& map, bool magnitude) {
  if (map.dim() != 4) throw ShapeError("heat-map source must be N×C×h×w, got " + shape_str(map.shape()));
  const int64_t c = map.size(1);
  const int64_t h = map.size(2);
  const int64_t w = map.size(3);
  std::vector<double> plane(static_cast<size_t>(h * w), 0.0);
  const float* m = map.data();
  for (int64_t ch = 0; ch < c; ++ch) {
    for (int64_t i = 0; i < h * w; ++i) {
      const double v = m[ch * h * w + i];
      plane[i] += magnitude ? std::abs(v) : v;
    }
  }
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (double& v : plane) {
    v /= static_cast<double>(c);
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  Tensor out = Tensor::zeros({h, w});
  float* o = out.mutable_data();
  if (hi > lo) {
    for (int64_t i = 0; i < h * w; ++i) o[i] = static_cast<float>((plane[i] - lo) / (hi - lo));
  }
  return out;
}

namespace {

void write_heatmap(const Tensor& unit, const std::filesystem::path& path) {
  const int h = static_cast<int>(unit.size(0));
  const int w = static_cast<int>(unit.size(1));
  cv::Mat gray(h, w, CV_8U);
  const float* u = unit.data();
  for (int y = 0; y < h; ++y) {
    auto* row = gray.ptr<unsigned char>(y);
    for (int x = 0; x < w; ++x) row[x] = static_cast<unsigned char>(std::lround(std::clamp(u[y * w + x], 0.0f, 1.0f) * 255.0f));
  }
  cv::Mat color;
  cv::applyColorMap(gray, color, cv::COLORMAP_JET);
  bool ok = false;
  try {
    ok = cv::imwrite(path.string(), color);
  } catch (const std::exception&) {
    ok = false;
  }
  if (!ok) throw IoError(fmt::format("cannot write heat-map {}", path.string()));
}

}  // namespace

std::vector<std::filesystem::path> render_heatmaps(const ForwardState& state, const std::filesystem::path& out_dir) {
  if (state.forward_maps.size() < 3 || state.reverse_maps.size() < 3 || state.layer_outputs.size() < 13) {
    throw ShapeError("forward state is incomplete; run forward_with_intermediates first");
  }
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec || !std::filesystem::is_directory(out_dir)) {
    throw IoError(fmt::format("cannot create heat-map directory {}", out_dir.string()));
  }
  struct Item {
    std::string name;
    const Tensor* map;
    bool magnitude;
  };
  // Decoder layer 8 + k uses reverse mask index 5 - k, so layers 11..13 read indices 2..0.
  const std::vector<Item> items{
      {"forward_layer1.png", &state.forward_maps[0], false},
      {"forward_layer2.png", &state.forward_maps[1], false},
      {"forward_layer3.png", &state.forward_maps[2], false},
      {"reverse_layer11.png", &state.reverse_maps[2], false},
      {"reverse_layer12.png", &state.reverse_maps[1], false},
      {"reverse_layer13.png", &state.reverse_maps[0], false},
      {"feature_layer1.png", &state.layer_outputs[0], true},
      {"feature_layer13.png", &state.layer_outputs[12], true},
  };
  std::vector<std::filesystem::path> written;
  for (const Item& item : items) {
    const std::filesystem::path path = out_dir / item.name;
    write_heatmap(normalize_heatmap(*item.map, item.magnitude), path);
    written.push_back(path);
  }
  return written;
}

}  // namespace lbam
