#include "lbam/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fmt/format.h>
#include <vector>

#include "lbam/error.hpp"

namespace lbam {

namespace {

constexpr int kWindow = 11;
constexpr double kSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

void check_pair(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(fmt::format("{}: {} vs {}", what, shape_str(a.shape()), shape_str(b.shape())));
  }
  if (a.numel() == 0) throw ShapeError(fmt::format("{}: empty input", what));
}

std::array<double, kWindow> gaussian_window() {
  std::array<double, kWindow> w{};
  double total = 0.0;
  for (int i = 0; i < kWindow; ++i) {
    const double d = i - kWindow / 2;
    w[i] = std::exp(-d * d / (2.0 * kSigma * kSigma));
    total += w[i];
  }
  for (double& v : w) v /= total;
  return w;
}

// Separable valid-region filter of an h×w plane.
std::vector<double> filter_valid(const std::vector<double>& img, int64_t h, int64_t w,
                                 const std::array<double, kWindow>& k) {
  const int64_t oh = h - kWindow + 1;
  const int64_t ow = w - kWindow + 1;
  std::vector<double> rows(static_cast<size_t>(h * ow));
  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int i = 0; i < kWindow; ++i) s += k[i] * img[y * w + x + i];
      rows[y * ow + x] = s;
    }
  }
  std::vector<double> out(static_cast<size_t>(oh * ow));
  for (int64_t y = 0; y < oh; ++y) {
    for (int64_t x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int i = 0; i < kWindow; ++i) s += k[i] * rows[(y + i) * ow + x];
      out[y * ow + x] = s;
    }
  }
  return out;
}

double ssim_plane(const std::vector<double>& a, const std::vector<double>& b, int64_t h, int64_t w) {
  const auto k = gaussian_window();
  std::vector<double> aa(a.size()), bb(a.size()), ab(a.size());
  for (size_t i = 0; i < a.size(); ++i) {
    aa[i] = a[i] * a[i];
    bb[i] = b[i] * b[i];
    ab[i] = a[i] * b[i];
  }
  const auto mu_a = filter_valid(a, h, w, k);
  const auto mu_b = filter_valid(b, h, w, k);
  const auto e_aa = filter_valid(aa, h, w, k);
  const auto e_bb = filter_valid(bb, h, w, k);
  const auto e_ab = filter_valid(ab, h, w, k);
  double total = 0.0;
  for (size_t i = 0; i < mu_a.size(); ++i) {
    const double va = e_aa[i] - mu_a[i] * mu_a[i];
    const double vb = e_bb[i] - mu_b[i] * mu_b[i];
    const double cov = e_ab[i] - mu_a[i] * mu_b[i];
    total += ((2.0 * mu_a[i] * mu_b[i] + kC1) * (2.0 * cov + kC2)) /
             ((mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + kC1) * (va + vb + kC2));
  }
  return total / static_cast<double>(mu_a.size());
}

}  // namespace

Tensor to_unit_range(const Tensor& image) {
  Tensor out = Tensor::empty(image.shape());
  const float* in = image.data();
  float* o = out.mutable_data();
  for (int64_t i = 0; i < image.numel(); ++i) o[i] = std::clamp((in[i] + 1.0f) * 0.5f, 0.0f, 1.0f);
  return out;
}

double psnr(const Tensor& a, const Tensor& b) {
  check_pair(a, b, "psnr");
  const float* x = a.data();
  const float* y = b.data();
  double se = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    const double d = static_cast<double>(x[i]) - static_cast<double>(y[i]);
    se += d * d;
  }
  const double mse = se / static_cast<double>(a.numel());
  if (mse < 1e-10) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

double ssim(const Tensor& a, const Tensor& b) {
  check_pair(a, b, "ssim");
  int64_t n = 1;
  int64_t c = 1;
  if (a.dim() == 4) {
    n = a.size(0);
    c = a.size(1);
  } else if (a.dim() == 3) {
    c = a.size(0);
  } else if (a.dim() != 2) {
    throw ShapeError("ssim expects H×W, C×H×W or N×C×H×W, got " + shape_str(a.shape()));
  }
  const int64_t h = a.size(-2);
  const int64_t w = a.size(-1);
  if (h < kWindow || w < kWindow) {
    throw ShapeError(fmt::format("ssim needs at least {}×{} pixels, got {}×{}", kWindow, kWindow, h, w));
  }
  const float* x = a.data();
  const float* y = b.data();
  double total = 0.0;
  for (int64_t s = 0; s < n; ++s) {
    std::vector<double> ga(static_cast<size_t>(h * w), 0.0);
    std::vector<double> gb(static_cast<size_t>(h * w), 0.0);
    for (int64_t ch = 0; ch < c; ++ch) {
      const int64_t base = (s * c + ch) * h * w;
      for (int64_t i = 0; i < h * w; ++i) {
        ga[i] += x[base + i];
        gb[i] += y[base + i];
      }
    }
    for (int64_t i = 0; i < h * w; ++i) {
      ga[i] /= static_cast<double>(c);
      gb[i] /= static_cast<double>(c);
    }
    total += ssim_plane(ga, gb, h, w);
  }
  return total / static_cast<double>(n);
}

double mean_l1_percent(const Tensor& a, const Tensor& b) {
  check_pair(a, b, "mean_l1_percent");
  const float* x = a.data();
  const float* y = b.data();
  double s = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) s += std::abs(static_cast<double>(x[i]) - static_cast<double>(y[i]));
  return 100.0 * s / static_cast<double>(a.numel());
}

}  // namespace lbam
