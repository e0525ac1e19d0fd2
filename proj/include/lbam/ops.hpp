#pragma once

#include <array>
#include <vector>

#include "lbam/tensor.hpp"

namespace lbam::ops {

// Element-wise arithmetic with numpy-style broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);
/// s - a
Tensor rsub_scalar(const Tensor& a, double s);
Tensor neg(const Tensor& a);

Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor pow(const Tensor& a, double exponent);
Tensor square(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor leaky_relu(const Tensor& a, double slope);
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);

// Reductions. Scalars have shape {}.
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor sum_dims(const Tensor& a, const std::vector<int64_t>& dims, bool keepdim);
Tensor mean_dims(const Tensor& a, const std::vector<int64_t>& dims, bool keepdim);
/// Broadcast `a` to `shape`.
Tensor expand(const Tensor& a, const Shape& shape);
/// Sum `a` down to a broadcast-compatible `shape`.
Tensor sum_to(const Tensor& a, const Shape& shape);

/// View with a new shape; one entry may be -1.
Tensor reshape(const Tensor& a, Shape shape);
Tensor concat(const std::vector<Tensor>& parts, int64_t dim);
Tensor slice(const Tensor& a, int64_t dim, int64_t start, int64_t length);
/// Places `a` at [start, start+a.size(dim)) of a zero tensor with `total` entries along dim.
Tensor embed(const Tensor& a, int64_t dim, int64_t start, int64_t total);

struct Conv2dOptions {
  int64_t stride = 1;
  int64_t padding = 0;
};

/// x: N×C×H×W, weight: O×C×kh×kw, no bias.
Tensor conv2d(const Tensor& x, const Tensor& weight, Conv2dOptions options);
/// Adjoint of conv2d with respect to its input. weight: C_in×C_out×kh×kw.
/// output_hw defaults to (H-1)*stride - 2*padding + k.
Tensor conv_transpose2d(const Tensor& x, const Tensor& weight, Conv2dOptions options,
                        std::array<int64_t, 2> output_hw = {-1, -1});
/// Adjoint of conv2d with respect to its weight.
Tensor conv2d_weight_grad(const Tensor& x, const Tensor& grad_out, Conv2dOptions options,
                          std::array<int64_t, 2> kernel_hw);
/// Adds a per-channel bias of shape {C} to N×C×H×W.
Tensor add_channel_bias(const Tensor& x, const Tensor& bias);

/// 2×2 max pooling with stride 2 (first-order differentiable only).
Tensor max_pool2d(const Tensor& x);

/// Batched matrix product of B×M×K by B×K×N, with optional transposes of the
/// trailing two dimensions.
Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_a = false, bool transpose_b = false);

Tensor detach(const Tensor& a);

// Queries that never record.
bool all_finite(const Tensor& a);
float max_abs_diff(const Tensor& a, const Tensor& b);
double sum_value(const Tensor& a);

}  // namespace lbam::ops

namespace lbam {

inline Tensor operator+(const Tensor& a, const Tensor& b) { return ops::add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return ops::sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return ops::mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return ops::div(a, b); }
inline Tensor operator+(const Tensor& a, double s) { return ops::add_scalar(a, s); }
inline Tensor operator+(double s, const Tensor& a) { return ops::add_scalar(a, s); }
inline Tensor operator-(const Tensor& a, double s) { return ops::add_scalar(a, -s); }
inline Tensor operator-(double s, const Tensor& a) { return ops::rsub_scalar(a, s); }
inline Tensor operator*(const Tensor& a, double s) { return ops::mul_scalar(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return ops::mul_scalar(a, s); }
inline Tensor operator/(const Tensor& a, double s) { return ops::mul_scalar(a, 1.0 / s); }
inline Tensor operator-(const Tensor& a) { return ops::neg(a); }

}  // namespace lbam
