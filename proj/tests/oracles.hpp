#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "lbam/tensor.hpp"

// Reference computations shared by unit tests and the acceptance run.
namespace lbam::testing {

struct Conv {
  int64_t in, out;
};

// Encoder and decoder kernels written out layer by layer.
inline const std::vector<Conv> kEncoder{{3, 64}, {64, 128}, {128, 256}, {256, 512}, {512, 512}, {512, 512}, {512, 512}};
// deconv in → out, then concatenated skip channels (0 for layer 14)
inline const std::vector<std::array<int64_t, 3>> kDecoder{{512, 512, 512},  {1024, 512, 512}, {1024, 512, 512},
                                                   {1024, 256, 256}, {512, 128, 128},  {256, 64, 64},
                                                   {128, 3, 0}};

inline int64_t closed_form_count(bool learned, bool reverse) {
  int64_t n = 0;
  for (size_t i = 0; i < kEncoder.size(); ++i) {
    const int64_t k = kEncoder[i].in * kEncoder[i].out * 16;
    n += k;                          // feature kernel
    if (learned) n += k + 4;         // mask kernel + quadruple
    if (i > 0) n += 2 * kEncoder[i].out;  // BN
  }
  if (learned) {
    for (size_t j = 0; j < 6; ++j) n += kEncoder[j].in * kEncoder[j].out * 16 + (reverse ? 4 : 0);
  }
  for (const auto& [in, out, skip] : kDecoder) {
    n += in * out * 16;
    if (skip > 0) n += (learned ? 4 : 0) + 2 * (out + skip);
  }
  return n;
}

inline int64_t count(const std::vector<NamedTensor>& params) {
  int64_t n = 0;
  for (const NamedTensor& p : params) n += p.tensor.numel();
  return n;
}

/// (channels, side) of layers 1..14 for a 256×256 input.
inline const std::vector<std::array<int64_t, 2>> kShapeChain256{
    {64, 128}, {128, 64}, {256, 32}, {512, 16}, {512, 8}, {512, 4}, {512, 2},
    {1024, 4}, {1024, 8}, {1024, 16}, {512, 32}, {256, 64}, {128, 128}, {3, 256}};

inline Tensor centered_hole(int64_t size, int64_t hole) {
  Tensor m = Tensor::ones({1, 1, size, size});
  const int64_t lo = (size - hole) / 2;
  for (int64_t y = lo; y < lo + hole; ++y)
    for (int64_t x = lo; x < lo + hole; ++x) m.mutable_data()[y * size + x] = 0.0f;
  return m;
}

// G[b][i][j] = Σ_k F[b][i][k]·F[b][j][k]
inline std::vector<double> gram_loops(const Tensor& f) {
  const int64_t n = f.size(0), c = f.size(1), hw = f.size(2) * f.size(3);
  std::vector<double> g(static_cast<size_t>(n * c * c), 0.0);
  for (int64_t b = 0; b < n; ++b)
    for (int64_t i = 0; i < c; ++i)
      for (int64_t j = 0; j < c; ++j) {
        double s = 0;
        for (int64_t k = 0; k < hw; ++k) {
          s += static_cast<double>(f.data()[(b * c + i) * hw + k]) * f.data()[(b * c + j) * hw + k];
        }
        g[static_cast<size_t>((b * c + i) * c + j)] = s;
      }
  return g;
}

inline double perceptual_loops(const std::vector<Tensor>& a, const std::vector<Tensor>& b) {
  double total = 0;
  for (size_t t = 0; t < a.size(); ++t) {
    double s = 0;
    for (int64_t i = 0; i < a[t].numel(); ++i) {
      const double d = static_cast<double>(b[t].data()[i]) - a[t].data()[i];
      s += d * d;
    }
    total += s / static_cast<double>(a[t].numel());
  }
  return total / static_cast<double>(a.size());
}

inline double style_loops(const std::vector<Tensor>& a, const std::vector<Tensor>& b) {
  double total = 0;
  for (size_t t = 0; t < a.size(); ++t) {
    const std::vector<double> ga = gram_loops(a[t]), gb = gram_loops(b[t]);
    const double c = static_cast<double>(a[t].size(1));
    double s = 0;
    for (size_t i = 0; i < ga.size(); ++i) s += (gb[i] - ga[i]) * (gb[i] - ga[i]);
    total += s / static_cast<double>(ga.size()) / (c * c);
  }
  return total / static_cast<double>(a.size());
}

}  // namespace lbam::testing
