#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <unistd.h>
#include <vector>

#include "lbam/autograd.hpp"
#include "lbam/ops.hpp"
#include "lbam/random.hpp"
#include "lbam/tensor.hpp"

namespace lbam::testing {

inline std::filesystem::path fixture_dir() { return LBAM_FIXTURE_DIR; }

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("lbam_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline Tensor random_tensor(const Shape& shape, uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  return rand_uniform(shape, rng, lo, hi);
}

/// Largest relative gap between analytic gradients of `f` (a scalar function
/// of `inputs`) and central differences, over every element of every input.
inline double max_grad_error(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                             std::vector<Tensor> inputs, double h = 1e-2) {
  for (Tensor& t : inputs) {
    t = t.clone();
    t.set_requires_grad(true);
  }
  const std::vector<Tensor> analytic = grad(f(inputs), inputs);
  double worst = 0.0;
  NoGradGuard no_grad;
  for (size_t i = 0; i < inputs.size(); ++i) {
    float* x = inputs[i].mutable_data();
    for (int64_t k = 0; k < inputs[i].numel(); ++k) {
      const float saved = x[k];
      x[k] = static_cast<float>(saved + h);
      const double up = ops::sum_value(f(inputs));
      x[k] = static_cast<float>(saved - h);
      const double down = ops::sum_value(f(inputs));
      x[k] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[i].data()[k];
      worst = std::max(worst, std::abs(a - numeric) / std::max(1.0, std::abs(numeric)));
    }
  }
  return worst;
}

/// Direct-loop convolution oracle: x N×C×H×W, w O×C×k×k.
inline std::vector<double> conv_oracle(const Tensor& x, const Tensor& w, int64_t stride, int64_t pad) {
  const int64_t n = x.size(0), c = x.size(1), h = x.size(2), wd = x.size(3);
  const int64_t o = w.size(0), k = w.size(2);
  const int64_t oh = (h + 2 * pad - k) / stride + 1, ow = (wd + 2 * pad - k) / stride + 1;
  std::vector<double> out(static_cast<size_t>(n * o * oh * ow), 0.0);
  for (int64_t b = 0; b < n; ++b)
    for (int64_t oc = 0; oc < o; ++oc)
      for (int64_t y = 0; y < oh; ++y)
        for (int64_t xx = 0; xx < ow; ++xx) {
          double s = 0.0;
          for (int64_t ic = 0; ic < c; ++ic)
            for (int64_t i = 0; i < k; ++i)
              for (int64_t j = 0; j < k; ++j) {
                const int64_t yy = y * stride - pad + i, xi = xx * stride - pad + j;
                if (yy < 0 || yy >= h || xi < 0 || xi >= wd) continue;
                s += static_cast<double>(x.data()[((b * c + ic) * h + yy) * wd + xi]) *
                     w.data()[((oc * c + ic) * k + i) * k + j];
              }
          out[((b * o + oc) * oh + y) * ow + xx] = s;
        }
  return out;
}

inline double max_diff(const Tensor& a, const std::vector<double>& b) {
  double worst = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) worst = std::max(worst, std::abs(a.data()[i] - b[i]));
  return worst;
}

inline uint64_t hash_tensors(const std::vector<NamedTensor>& tensors) {
  uint64_t h = 1469598103934665603ULL;
  for (const NamedTensor& t : tensors) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(t.tensor.data());
    for (int64_t i = 0; i < t.tensor.numel() * 4; ++i) h = (h ^ bytes[i]) * 1099511628211ULL;
  }
  return h;
}

}  // namespace lbam::testing
