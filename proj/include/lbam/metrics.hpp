#pragma once

#include "lbam/tensor.hpp"

namespace lbam {

inline constexpr double kPsnrCap = 100.0;

/// Maps [-1,1] to [0,1] and clamps.
Tensor to_unit_range(const Tensor& image);

/// 10·log10(1/MSE) on [0,1] data; kPsnrCap when MSE < 1e-10.
double psnr(const Tensor& a, const Tensor& b);

/// Mean local SSIM over valid 11×11 windows (Gaussian, σ = 1.5, K1 = 0.01,
/// K2 = 0.03, range 1). Accepts H×W, C×H×W or N×C×H×W; channels are averaged
/// to gray first and batches are averaged. ShapeError below 11×11.
double ssim(const Tensor& a, const Tensor& b);

/// 100 × mean |a − b|.
double mean_l1_percent(const Tensor& a, const Tensor& b);

}  // namespace lbam
