#include "lbam/ops.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <numeric>

#include "lbam/autograd.hpp"
#include "lbam/error.hpp"

namespace lbam::ops {

namespace {

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const size_t rank = std::max(a.size(), b.size());
  Shape out(rank, 1);
  for (size_t i = 0; i < rank; ++i) {
    const int64_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const int64_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw ShapeError(fmt::format("cannot broadcast {} with {}", shape_str(a), shape_str(b)));
    }
    out[i] = da == 1 ? db : da;
  }
  return out;
}

// Strides of `in` expressed over the dimensions of `out`, zero where `in` broadcasts.
std::vector<int64_t> broadcast_strides(const Shape& in, const Shape& out) {
  std::vector<int64_t> strides(out.size(), 0);
  int64_t stride = 1;
  for (size_t k = 0; k < in.size(); ++k) {
    const size_t i = in.size() - 1 - k;
    const size_t o = out.size() - 1 - k;
    strides[o] = in[i] == 1 ? 0 : stride;
    stride *= in[i];
  }
  return strides;
}

// Visits every element of `out_shape`, calling fn(out_index, offset_a, offset_b)
// with offsets computed from broadcast strides.
template <class F>
void for_each_broadcast(const Shape& out_shape, const std::vector<int64_t>& sa,
                        const std::vector<int64_t>& sb, F&& fn) {
  const int64_t total = numel_of(out_shape);
  if (total == 0) return;
  if (out_shape.empty()) {
    fn(0, 0, 0);
    return;
  }
  const size_t rank = out_shape.size();
  const int64_t inner = out_shape.back();
  const int64_t ia = sa.back();
  const int64_t ib = sb.back();
  std::vector<int64_t> idx(rank, 0);
  int64_t oa = 0;
  int64_t ob = 0;
  for (int64_t base = 0; base < total; base += inner) {
    for (int64_t j = 0; j < inner; ++j) fn(base + j, oa + j * ia, ob + j * ib);
    for (int64_t d = static_cast<int64_t>(rank) - 2; d >= 0; --d) {
      const size_t ud = static_cast<size_t>(d);
      ++idx[ud];
      oa += sa[ud];
      ob += sb[ud];
      if (idx[ud] < out_shape[ud]) break;
      oa -= sa[ud] * out_shape[ud];
      ob -= sb[ud] * out_shape[ud];
      idx[ud] = 0;
    }
  }
}

template <class F>
Tensor binary_kernel(const Tensor& a, const Tensor& b, F f) {
  const float* pa = a.data();
  const float* pb = b.data();
  if (a.shape() == b.shape()) {
    Tensor out = Tensor::empty(a.shape());
    float* po = out.mutable_data();
    const int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) po[i] = f(pa[i], pb[i]);
    return out;
  }
  const Shape os = broadcast_shape(a.shape(), b.shape());
  Tensor out = Tensor::empty(os);
  float* po = out.mutable_data();
  const int64_t n = out.numel();
  if (b.numel() == 1 && a.numel() == n) {
    const float s = pb[0];
    for (int64_t i = 0; i < n; ++i) po[i] = f(pa[i], s);
    return out;
  }
  if (a.numel() == 1 && b.numel() == n) {
    const float s = pa[0];
    for (int64_t i = 0; i < n; ++i) po[i] = f(s, pb[i]);
    return out;
  }
  for_each_broadcast(os, broadcast_strides(a.shape(), os), broadcast_strides(b.shape(), os),
                     [&](int64_t o, int64_t ia, int64_t ib) { po[o] = f(pa[ia], pb[ib]); });
  return out;
}

template <class F>
Tensor unary_kernel(const Tensor& a, F f) {
  Tensor out = Tensor::empty(a.shape());
  const float* pa = a.data();
  float* po = out.mutable_data();
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = f(pa[i]);
  return out;
}

void require_first_order(std::string_view op) {
  if (GradMode::enabled()) {
    throw Error(fmt::format("double backward through '{}' is not supported", op));
  }
}

int64_t normalize_dim(int64_t dim, int64_t rank) {
  if (dim < 0) dim += rank;
  if (dim < 0 || dim >= rank) throw ShapeError(fmt::format("dim {} out of range", dim));
  return dim;
}

// ---- convolution kernels ------------------------------------------------

struct ConvGeometry {
  int64_t n, c, h, w;     // conv input
  int64_t o, kh, kw;      // filters
  int64_t ho, wo;         // conv output
  int64_t stride, pad;
  int64_t col_rows() const { return c * kh * kw; }
  int64_t col_cols() const { return ho * wo; }
};

void im2col(const float* x, const ConvGeometry& g, float* col) {
  const int64_t cols = g.ho * g.wo;
  for (int64_t c = 0; c < g.c; ++c) {
    const float* xc = x + c * g.h * g.w;
    for (int64_t ki = 0; ki < g.kh; ++ki) {
      for (int64_t kj = 0; kj < g.kw; ++kj) {
        float* dst = col + ((c * g.kh + ki) * g.kw + kj) * cols;
        for (int64_t oy = 0; oy < g.ho; ++oy) {
          const int64_t iy = oy * g.stride - g.pad + ki;
          float* row = dst + oy * g.wo;
          if (iy < 0 || iy >= g.h) {
            std::fill(row, row + g.wo, 0.0f);
            continue;
          }
          const float* src = xc + iy * g.w;
          for (int64_t ox = 0; ox < g.wo; ++ox) {
            const int64_t ix = ox * g.stride - g.pad + kj;
            row[ox] = (ix >= 0 && ix < g.w) ? src[ix] : 0.0f;
          }
        }
      }
    }
  }
}

// Accumulates columns back into an (already zeroed) image.
void col2im(const float* col, const ConvGeometry& g, float* x) {
  const int64_t cols = g.ho * g.wo;
  for (int64_t c = 0; c < g.c; ++c) {
    float* xc = x + c * g.h * g.w;
    for (int64_t ki = 0; ki < g.kh; ++ki) {
      for (int64_t kj = 0; kj < g.kw; ++kj) {
        const float* src = col + ((c * g.kh + ki) * g.kw + kj) * cols;
        for (int64_t oy = 0; oy < g.ho; ++oy) {
          const int64_t iy = oy * g.stride - g.pad + ki;
          if (iy < 0 || iy >= g.h) continue;
          float* row = xc + iy * g.w;
          const float* s = src + oy * g.wo;
          for (int64_t ox = 0; ox < g.wo; ++ox) {
            const int64_t ix = ox * g.stride - g.pad + kj;
            if (ix >= 0 && ix < g.w) row[ix] += s[ox];
          }
        }
      }
    }
  }
}

int64_t conv_out_size(int64_t in, int64_t k, int64_t stride, int64_t pad) {
  const int64_t span = in + 2 * pad - k;
  if (span < 0) return 0;
  return span / stride + 1;
}

void check_rank(const Tensor& t, int64_t rank, std::string_view what) {
  if (t.dim() != rank) {
    throw ShapeError(fmt::format("{} expects rank {}, got {}", what, rank, shape_str(t.shape())));
  }
}

// conv input geometry from x (N×C×H×W) and filters (O×C×kh×kw)
ConvGeometry forward_geometry(const Shape& x, const Shape& w, Conv2dOptions opt) {
  if (x[1] != w[1]) {
    throw ShapeError(fmt::format("conv2d: input {} incompatible with weight {}", shape_str(x),
                                 shape_str(w)));
  }
  ConvGeometry g{x[0], x[1], x[2], x[3], w[0], w[2], w[3], 0, 0, opt.stride, opt.padding};
  g.ho = conv_out_size(g.h, g.kh, opt.stride, opt.padding);
  g.wo = conv_out_size(g.w, g.kw, opt.stride, opt.padding);
  if (g.ho <= 0 || g.wo <= 0) {
    throw ShapeError(fmt::format("conv2d: input {} too small for kernel {}", shape_str(x),
                                 shape_str(w)));
  }
  return g;
}

Tensor conv2d_raw(const Tensor& x, const Tensor& w, Conv2dOptions opt) {
  const ConvGeometry g = forward_geometry(x.shape(), w.shape(), opt);
  Tensor out = Tensor::empty({g.n, g.o, g.ho, g.wo});
  const int64_t rows = g.col_rows();
  const int64_t cols = g.col_cols();
  std::vector<float> col(static_cast<size_t>(rows * cols));
  for (int64_t n = 0; n < g.n; ++n) {
    im2col(x.data() + n * g.c * g.h * g.w, g, col.data());
    cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, static_cast<int>(g.o),
                static_cast<int>(cols), static_cast<int>(rows), 1.0f, w.data(),
                static_cast<int>(rows), col.data(), static_cast<int>(cols), 0.0f,
                out.mutable_data() + n * g.o * cols, static_cast<int>(cols));
  }
  return out;
}

// y: N×O×Ho×Wo (a conv output), w: O×C×kh×kw; returns N×C×H×W.
Tensor conv_input_adjoint_raw(const Tensor& y, const Tensor& w, Conv2dOptions opt, int64_t h,
                              int64_t wdt) {
  const Shape& ys = y.shape();
  const Shape& ws = w.shape();
  if (ys[1] != ws[0]) {
    throw ShapeError(fmt::format("conv_transpose2d: input {} incompatible with weight {}",
                                 shape_str(ys), shape_str(ws)));
  }
  ConvGeometry g{ys[0], ws[1], h, wdt, ws[0], ws[2], ws[3], ys[2], ys[3], opt.stride,
                 opt.padding};
  if (conv_out_size(h, g.kh, opt.stride, opt.padding) != g.ho ||
      conv_out_size(wdt, g.kw, opt.stride, opt.padding) != g.wo) {
    throw ShapeError(fmt::format("conv_transpose2d: output {}x{} inconsistent with input {}", h,
                                 wdt, shape_str(ys)));
  }
  Tensor out = Tensor::zeros({g.n, g.c, h, wdt});
  const int64_t rows = g.col_rows();
  const int64_t cols = g.col_cols();
  std::vector<float> col(static_cast<size_t>(rows * cols));
  for (int64_t n = 0; n < g.n; ++n) {
    cblas_sgemm(CblasRowMajor, CblasTrans, CblasNoTrans, static_cast<int>(rows),
                static_cast<int>(cols), static_cast<int>(g.o), 1.0f, w.data(),
                static_cast<int>(rows), y.data() + n * g.o * cols, static_cast<int>(cols), 0.0f,
                col.data(), static_cast<int>(cols));
    col2im(col.data(), g, out.mutable_data() + n * g.c * h * wdt);
  }
  return out;
}

Tensor conv_weight_adjoint_raw(const Tensor& x, const Tensor& gy, Conv2dOptions opt, int64_t kh,
                               int64_t kw) {
  const Shape& xs = x.shape();
  const Shape& ys = gy.shape();
  if (xs[0] != ys[0]) throw ShapeError("conv2d_weight_grad: batch size mismatch");
  ConvGeometry g{xs[0], xs[1], xs[2], xs[3], ys[1], kh, kw, ys[2], ys[3], opt.stride,
                 opt.padding};
  if (conv_out_size(g.h, kh, opt.stride, opt.padding) != g.ho ||
      conv_out_size(g.w, kw, opt.stride, opt.padding) != g.wo) {
    throw ShapeError(fmt::format("conv2d_weight_grad: {} is not a conv output of {}",
                                 shape_str(ys), shape_str(xs)));
  }
  Tensor out = Tensor::zeros({g.o, g.c, kh, kw});
  const int64_t rows = g.col_rows();
  const int64_t cols = g.col_cols();
  std::vector<float> col(static_cast<size_t>(rows * cols));
  for (int64_t n = 0; n < g.n; ++n) {
    im2col(x.data() + n * g.c * g.h * g.w, g, col.data());
    cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasTrans, static_cast<int>(g.o),
                static_cast<int>(rows), static_cast<int>(cols), 1.0f,
                gy.data() + n * g.o * cols, static_cast<int>(cols), col.data(),
                static_cast<int>(cols), 1.0f, out.mutable_data(), static_cast<int>(rows));
  }
  return out;
}

}  // namespace

// ---- arithmetic -----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  Tensor out = binary_kernel(a, b, [](float x, float y) { return x + y; });
  return record(out, "add", {a, b}, [sa = a.shape(), sb = b.shape()](const Tensor& g,
                                                                      const NeedsGrad& needs) {
    return std::vector<Tensor>{needs[0] ? sum_to(g, sa) : Tensor(),
                               needs[1] ? sum_to(g, sb) : Tensor()};
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  Tensor out = binary_kernel(a, b, [](float x, float y) { return x - y; });
  return record(out, "sub", {a, b}, [sa = a.shape(), sb = b.shape()](const Tensor& g,
                                                                      const NeedsGrad& needs) {
    return std::vector<Tensor>{needs[0] ? sum_to(g, sa) : Tensor(),
                               needs[1] ? neg(sum_to(g, sb)) : Tensor()};
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  Tensor out = binary_kernel(a, b, [](float x, float y) { return x * y; });
  return record(out, "mul", {a, b}, [a, b](const Tensor& g, const NeedsGrad& needs) {
    return std::vector<Tensor>{needs[0] ? sum_to(mul(g, b), a.shape()) : Tensor(),
                               needs[1] ? sum_to(mul(g, a), b.shape()) : Tensor()};
  });
}

Tensor div(const Tensor& a, const Tensor& b) {
  Tensor out = binary_kernel(a, b, [](float x, float y) { return x / y; });
  return record(out, "div", {a, b}, [a, b](const Tensor& g, const NeedsGrad& needs) {
    Tensor ga, gb;
    if (needs[0]) ga = sum_to(div(g, b), a.shape());
    if (needs[1]) gb = sum_to(neg(div(mul(g, a), mul(b, b))), b.shape());
    return std::vector<Tensor>{ga, gb};
  });
}

Tensor add_scalar(const Tensor& a, double s) {
  const float fs = static_cast<float>(s);
  Tensor out = unary_kernel(a, [fs](float x) { return x + fs; });
  return record(out, "add_scalar", {a},
                [](const Tensor& g, const NeedsGrad&) { return std::vector<Tensor>{g}; });
}

Tensor mul_scalar(const Tensor& a, double s) {
  const float fs = static_cast<float>(s);
  Tensor out = unary_kernel(a, [fs](float x) { return x * fs; });
  return record(out, "mul_scalar", {a}, [s](const Tensor& g, const NeedsGrad&) {
    return std::vector<Tensor>{mul_scalar(g, s)};
  });
}

Tensor rsub_scalar(const Tensor& a, double s) {
  const float fs = static_cast<float>(s);
  Tensor out = unary_kernel(a, [fs](float x) { return fs - x; });
  return record(out, "rsub_scalar", {a},
                [](const Tensor& g, const NeedsGrad&) { return std::vector<Tensor>{neg(g)}; });
}

Tensor neg(const Tensor& a) {
  Tensor out = unary_kernel(a, [](float x) { return -x; });
  return record(out, "neg", {a},
                [](const Tensor& g, const NeedsGrad&) { return std::vector<Tensor>{neg(g)}; });
}

// Ops below keep a detached copy of their output for the plain backward pass
// and recompute it through the graph when a differentiable backward is needed.

Tensor exp(const Tensor& a) {
  Tensor out = unary_kernel(a, [](float x) { return std::exp(x); });
  return record(out, "exp", {a}, [a, y = out.detach()](const Tensor& g, const NeedsGrad&) {
    return std::vector<Tensor>{mul(g, GradMode::enabled() ? exp(a) : y)};
  });
}

Tensor log(const Tensor& a) {
  Tensor out = unary_kernel(a, [](float x) { return std::log(x); });
  return record(out, "log", {a}, [a](const Tensor& g, const NeedsGrad&) {
    return std::vector<Tensor>{div(g, a)};
  });
}

Tensor sqrt(const Tensor& a) {
  Tensor out = unary_kernel(a, [](float x) { return std::sqrt(x); });
  return record(out, "sqrt", {a}, [a, y = out.detach()](const Tensor& g, const NeedsGrad&) {
    const Tensor root = GradMode::enabled() ? sqrt(a) : y;
    return std::vector<Tensor>{mul_scalar(div(g, root), 0.5)};
  });
}

Tensor pow(const Tensor& a, double exponent) {
  const float e = static_cast<float>(exponent);
  Tensor out = unary_kernel(a, [e](float x) { return std::pow(x, e); });
  return record(out, "pow", {a}, [a, exponent](const Tensor& g, const NeedsGrad&) {
    return std::vector<Tensor>{mul(g, mul_scalar(pow(a, exponent - 1.0), exponent))};
  });
}

Tensor square(const Tensor& a) {
  Tensor out = unary_kernel(a, [](float x) { return x * x; });
  return record(out, "square", {a}, [a](const Tensor& g, const NeedsGrad&) {
    return std::vector<Tensor>{mul(g, mul_scalar(a, 2.0))};
  });
}

Tensor abs(const Tensor& a) {
  Tensor out = unary_kernel(a, [](float x) { return std::fabs(x); });
  return record(out, "abs", {a}, [a](const Tensor& g, const NeedsGrad&) {
    Tensor sign = unary_kernel(a, [](float x) { return x > 0.0f ? 1.0f : (x < 0.0f ? -1.0f : 0.0f); });
    return std::vector<Tensor>{mul(g, sign)};
  });
}

Tensor relu(const Tensor& a) { return leaky_relu(a, 0.0); }

Tensor leaky_relu(const Tensor& a, double slope) {
  const float s = static_cast<float>(slope);
  Tensor out = unary_kernel(a, [s](float x) { return x > 0.0f ? x : s * x; });
  return record(out, "leaky_relu", {a}, [a, s](const Tensor& g, const NeedsGrad&) {
    Tensor gate = unary_kernel(a, [s](float x) { return x > 0.0f ? 1.0f : s; });
    return std::vector<Tensor>{mul(g, gate)};
  });
}

Tensor tanh(const Tensor& a) {
  Tensor out = unary_kernel(a, [](float x) { return std::tanh(x); });
  return record(out, "tanh", {a}, [a, y = out.detach()](const Tensor& g, const NeedsGrad&) {
    const Tensor t = GradMode::enabled() ? tanh(a) : y;
    return std::vector<Tensor>{mul(g, rsub_scalar(mul(t, t), 1.0))};
  });
}

Tensor sigmoid(const Tensor& a) {
  Tensor out = unary_kernel(a, [](float x) { return 1.0f / (1.0f + std::exp(-x)); });
  return record(out, "sigmoid", {a}, [a, y = out.detach()](const Tensor& g, const NeedsGrad&) {
    const Tensor s = GradMode::enabled() ? sigmoid(a) : y;
    return std::vector<Tensor>{mul(g, mul(s, rsub_scalar(s, 1.0)))};
  });
}

// ---- reductions & broadcasting -------------------------------------------

Tensor sum(const Tensor& a) {
  Tensor out = Tensor::scalar(static_cast<float>(sum_value(a)));
  return record(out, "sum", {a}, [shape = a.shape()](const Tensor& g, const NeedsGrad&) {
    return std::vector<Tensor>{expand(g, shape)};
  });
}

Tensor mean(const Tensor& a) {
  if (a.numel() == 0) throw ShapeError("mean of empty tensor");
  return mul_scalar(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor sum_to(const Tensor& a, const Shape& shape) {
  if (a.shape() == shape) return a;
  if (broadcast_shape(shape, a.shape()) != a.shape()) {
    throw ShapeError(fmt::format("sum_to: {} is not reducible to {}", shape_str(a.shape()),
                                 shape_str(shape)));
  }
  std::vector<double> acc(static_cast<size_t>(numel_of(shape)), 0.0);
  const float* pa = a.data();
  const auto target = broadcast_strides(shape, a.shape());
  const std::vector<int64_t> unit(a.shape().size(), 0);
  for_each_broadcast(a.shape(), target, unit,
                     [&](int64_t o, int64_t it, int64_t) { acc[it] += pa[o]; });
  Tensor out = Tensor::empty(shape);
  std::transform(acc.begin(), acc.end(), out.mutable_data(),
                 [](double v) { return static_cast<float>(v); });
  return record(out, "sum_to", {a}, [from = a.shape()](const Tensor& g, const NeedsGrad&) {
    return std::vector<Tensor>{expand(g, from)};
  });
}

Tensor expand(const Tensor& a, const Shape& shape) {
  if (a.shape() == shape) return a;
  if (broadcast_shape(a.shape(), shape) != shape) {
    throw ShapeError(fmt::format("expand: {} does not broadcast to {}", shape_str(a.shape()),
                                 shape_str(shape)));
  }
  Tensor out = Tensor::empty(shape);
  float* po = out.mutable_data();
  const float* pa = a.data();
  if (a.numel() == 1) {
    std::fill(po, po + out.numel(), pa[0]);
  } else {
    const std::vector<int64_t> unit(shape.size(), 0);
    for_each_broadcast(shape, broadcast_strides(a.shape(), shape), unit,
                       [&](int64_t o, int64_t ia, int64_t) { po[o] = pa[ia]; });
  }
  return record(out, "expand", {a}, [from = a.shape()](const Tensor& g, const NeedsGrad&) {
    return std::vector<Tensor>{sum_to(g, from)};
  });
}

Tensor sum_dims(const Tensor& a, const std::vector<int64_t>& dims, bool keepdim) {
  Shape kept = a.shape();
  for (int64_t d : dims) kept[static_cast<size_t>(normalize_dim(d, a.dim()))] = 1;
  Tensor reduced = sum_to(a, kept);
  if (keepdim) return reduced;
  Shape squeezed;
  for (size_t i = 0; i < kept.size(); ++i) {
    const bool dropped = std::any_of(dims.begin(), dims.end(), [&](int64_t d) {
      return static_cast<size_t>(normalize_dim(d, a.dim())) == i;
    });
    if (!dropped) squeezed.push_back(kept[i]);
  }
  return reshape(reduced, squeezed);
}

Tensor mean_dims(const Tensor& a, const std::vector<int64_t>& dims, bool keepdim) {
  int64_t count = 1;
  for (int64_t d : dims) count *= a.size(d);
  return mul_scalar(sum_dims(a, dims, keepdim), 1.0 / static_cast<double>(count));
}

// ---- shape manipulation ---------------------------------------------------

Tensor reshape(const Tensor& a, Shape shape) {
  int64_t known = 1;
  int64_t infer = -1;
  for (size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] == -1) {
      if (infer >= 0) throw ShapeError("reshape: more than one -1");
      infer = static_cast<int64_t>(i);
    } else {
      known *= shape[i];
    }
  }
  if (infer >= 0) {
    if (known == 0 || a.numel() % known != 0) throw ShapeError("reshape: cannot infer dimension");
    shape[static_cast<size_t>(infer)] = a.numel() / known;
  }
  if (numel_of(shape) != a.numel()) {
    throw ShapeError(fmt::format("reshape: {} to {}", shape_str(a.shape()), shape_str(shape)));
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->storage = a.impl()->storage;
  Tensor out(std::move(impl));
  return record(out, "reshape", {a}, [from = a.shape()](const Tensor& g, const NeedsGrad&) {
    return std::vector<Tensor>{reshape(g, from)};
  });
}

Tensor concat(const std::vector<Tensor>& parts, int64_t dim) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  const int64_t rank = parts[0].dim();
  dim = normalize_dim(dim, rank);
  Shape out_shape = parts[0].shape();
  out_shape[static_cast<size_t>(dim)] = 0;
  for (const Tensor& p : parts) {
    if (p.dim() != rank) throw ShapeError("concat: rank mismatch");
    for (int64_t d = 0; d < rank; ++d) {
      if (d != dim && p.size(d) != parts[0].size(d)) {
        throw ShapeError(fmt::format("concat: {} vs {}", shape_str(p.shape()),
                                     shape_str(parts[0].shape())));
      }
    }
    out_shape[static_cast<size_t>(dim)] += p.size(dim);
  }
  int64_t outer = 1;
  for (int64_t d = 0; d < dim; ++d) outer *= out_shape[static_cast<size_t>(d)];
  int64_t inner = 1;
  for (int64_t d = dim + 1; d < rank; ++d) inner *= out_shape[static_cast<size_t>(d)];
  Tensor out = Tensor::empty(out_shape);
  const int64_t out_block = out_shape[static_cast<size_t>(dim)] * inner;
  int64_t offset = 0;
  std::vector<int64_t> starts;
  std::vector<int64_t> lengths;
  for (const Tensor& p : parts) {
    const int64_t block = p.size(dim) * inner;
    for (int64_t o = 0; o < outer; ++o) {
      std::copy(p.data() + o * block, p.data() + (o + 1) * block,
                out.mutable_data() + o * out_block + offset * inner);
    }
    starts.push_back(offset);
    lengths.push_back(p.size(dim));
    offset += p.size(dim);
  }
  return record(out, "concat", parts,
                [dim, starts, lengths](const Tensor& g, const NeedsGrad& needs) {
                  std::vector<Tensor> grads(starts.size());
                  for (size_t i = 0; i < starts.size(); ++i) {
                    if (needs[i]) grads[i] = slice(g, dim, starts[i], lengths[i]);
                  }
                  return grads;
                });
}

Tensor slice(const Tensor& a, int64_t dim, int64_t start, int64_t length) {
  dim = normalize_dim(dim, a.dim());
  const int64_t extent = a.size(dim);
  if (start < 0 || length < 0 || start + length > extent) {
    throw ShapeError(fmt::format("slice [{}, {}) out of range {}", start, start + length, extent));
  }
  Shape out_shape = a.shape();
  out_shape[static_cast<size_t>(dim)] = length;
  int64_t outer = 1;
  for (int64_t d = 0; d < dim; ++d) outer *= a.size(d);
  int64_t inner = 1;
  for (int64_t d = dim + 1; d < a.dim(); ++d) inner *= a.size(d);
  Tensor out = Tensor::empty(out_shape);
  for (int64_t o = 0; o < outer; ++o) {
    const float* src = a.data() + (o * extent + start) * inner;
    std::copy(src, src + length * inner, out.mutable_data() + o * length * inner);
  }
  return record(out, "slice", {a}, [dim, start, extent](const Tensor& g, const NeedsGrad&) {
    return std::vector<Tensor>{embed(g, dim, start, extent)};
  });
}

Tensor embed(const Tensor& a, int64_t dim, int64_t start, int64_t total) {
  dim = normalize_dim(dim, a.dim());
  const int64_t length = a.size(dim);
  if (start < 0 || start + length > total) throw ShapeError("embed: range out of bounds");
  Shape out_shape = a.shape();
  out_shape[static_cast<size_t>(dim)] = total;
  int64_t outer = 1;
  for (int64_t d = 0; d < dim; ++d) outer *= a.size(d);
  int64_t inner = 1;
  for (int64_t d = dim + 1; d < a.dim(); ++d) inner *= a.size(d);
  Tensor out = Tensor::zeros(out_shape);
  for (int64_t o = 0; o < outer; ++o) {
    const float* src = a.data() + o * length * inner;
    std::copy(src, src + length * inner, out.mutable_data() + (o * total + start) * inner);
  }
  return record(out, "embed", {a}, [dim, start, length](const Tensor& g, const NeedsGrad&) {
    return std::vector<Tensor>{slice(g, dim, start, length)};
  });
}

// ---- convolution -----------------------------------------------------------

Tensor conv2d(const Tensor& x, const Tensor& weight, Conv2dOptions options) {
  check_rank(x, 4, "conv2d input");
  check_rank(weight, 4, "conv2d weight");
  Tensor out = conv2d_raw(x, weight, options);
  const std::array<int64_t, 2> in_hw{x.size(2), x.size(3)};
  const std::array<int64_t, 2> k_hw{weight.size(2), weight.size(3)};
  return record(out, "conv2d", {x, weight},
                [x, weight, options, in_hw, k_hw](const Tensor& g, const NeedsGrad& needs) {
                  Tensor gx, gw;
                  if (needs[0]) gx = conv_transpose2d(g, weight, options, in_hw);
                  if (needs[1]) gw = conv2d_weight_grad(x, g, options, k_hw);
                  return std::vector<Tensor>{gx, gw};
                });
}

Tensor conv_transpose2d(const Tensor& x, const Tensor& weight, Conv2dOptions options,
                        std::array<int64_t, 2> output_hw) {
  check_rank(x, 4, "conv_transpose2d input");
  check_rank(weight, 4, "conv_transpose2d weight");
  if (output_hw[0] < 0) {
    output_hw = {(x.size(2) - 1) * options.stride - 2 * options.padding + weight.size(2),
                 (x.size(3) - 1) * options.stride - 2 * options.padding + weight.size(3)};
  }
  Tensor out = conv_input_adjoint_raw(x, weight, options, output_hw[0], output_hw[1]);
  const std::array<int64_t, 2> k_hw{weight.size(2), weight.size(3)};
  return record(out, "conv_transpose2d", {x, weight},
                [x, weight, options, k_hw](const Tensor& g, const NeedsGrad& needs) {
                  Tensor gx, gw;
                  if (needs[0]) gx = conv2d(g, weight, options);
                  if (needs[1]) gw = conv2d_weight_grad(g, x, options, k_hw);
                  return std::vector<Tensor>{gx, gw};
                });
}

Tensor conv2d_weight_grad(const Tensor& x, const Tensor& grad_out, Conv2dOptions options,
                          std::array<int64_t, 2> kernel_hw) {
  check_rank(x, 4, "conv2d_weight_grad input");
  check_rank(grad_out, 4, "conv2d_weight_grad grad");
  Tensor out = conv_weight_adjoint_raw(x, grad_out, options, kernel_hw[0], kernel_hw[1]);
  const std::array<int64_t, 2> in_hw{x.size(2), x.size(3)};
  return record(out, "conv2d_weight_grad", {x, grad_out},
                [x, grad_out, options, in_hw](const Tensor& g, const NeedsGrad& needs) {
                  Tensor gx, gy;
                  if (needs[0]) gx = conv_transpose2d(grad_out, g, options, in_hw);
                  if (needs[1]) gy = conv2d(x, g, options);
                  return std::vector<Tensor>{gx, gy};
                });
}

Tensor add_channel_bias(const Tensor& x, const Tensor& bias) {
  check_rank(x, 4, "add_channel_bias input");
  if (bias.numel() != x.size(1)) throw ShapeError("add_channel_bias: channel count mismatch");
  return add(x, reshape(bias, {1, x.size(1), 1, 1}));
}

Tensor max_pool2d(const Tensor& x) {
  check_rank(x, 4, "max_pool2d input");
  const int64_t n = x.size(0), c = x.size(1), h = x.size(2), w = x.size(3);
  const int64_t ho = h / 2, wo = w / 2;
  if (ho == 0 || wo == 0) throw ShapeError("max_pool2d: input too small");
  Tensor out = Tensor::empty({n, c, ho, wo});
  auto argmax = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(out.numel()));
  const float* px = x.data();
  float* po = out.mutable_data();
  for (int64_t plane = 0; plane < n * c; ++plane) {
    const float* src = px + plane * h * w;
    for (int64_t oy = 0; oy < ho; ++oy) {
      for (int64_t ox = 0; ox < wo; ++ox) {
        int64_t best = (2 * oy) * w + 2 * ox;
        for (int64_t dy = 0; dy < 2; ++dy) {
          for (int64_t dx = 0; dx < 2; ++dx) {
            const int64_t idx = (2 * oy + dy) * w + 2 * ox + dx;
            if (src[idx] > src[best]) best = idx;
          }
        }
        const int64_t o = plane * ho * wo + oy * wo + ox;
        po[o] = src[best];
        (*argmax)[static_cast<size_t>(o)] = plane * h * w + best;
      }
    }
  }
  return record(out, "max_pool2d", {x},
                [argmax, in_shape = x.shape()](const Tensor& g, const NeedsGrad&) {
                  require_first_order("max_pool2d");
                  Tensor gx = Tensor::zeros(in_shape);
                  float* pg = gx.mutable_data();
                  const float* pgo = g.data();
                  for (size_t o = 0; o < argmax->size(); ++o) pg[(*argmax)[o]] += pgo[o];
                  return std::vector<Tensor>{gx};
                });
}

Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_a, bool transpose_b) {
  check_rank(a, 3, "bmm lhs");
  check_rank(b, 3, "bmm rhs");
  if (a.size(0) != b.size(0)) throw ShapeError("bmm: batch mismatch");
  const int64_t batch = a.size(0);
  const int64_t m = transpose_a ? a.size(2) : a.size(1);
  const int64_t k = transpose_a ? a.size(1) : a.size(2);
  const int64_t k2 = transpose_b ? b.size(2) : b.size(1);
  const int64_t n = transpose_b ? b.size(1) : b.size(2);
  if (k != k2) {
    throw ShapeError(fmt::format("bmm: {} by {} (transposes {}, {})", shape_str(a.shape()),
                                 shape_str(b.shape()), transpose_a, transpose_b));
  }
  Tensor out = Tensor::empty({batch, m, n});
  const int64_t lda = a.size(2);
  const int64_t ldb = b.size(2);
  for (int64_t i = 0; i < batch; ++i) {
    cblas_sgemm(CblasRowMajor, transpose_a ? CblasTrans : CblasNoTrans,
                transpose_b ? CblasTrans : CblasNoTrans, static_cast<int>(m),
                static_cast<int>(n), static_cast<int>(k), 1.0f, a.data() + i * a.size(1) * lda,
                static_cast<int>(lda), b.data() + i * b.size(1) * ldb, static_cast<int>(ldb),
                0.0f, out.mutable_data() + i * m * n, static_cast<int>(n));
  }
  return record(out, "bmm", {a, b},
                [a, b, transpose_a, transpose_b](const Tensor& g, const NeedsGrad& needs) {
                  Tensor ga, gb;
                  if (needs[0]) {
                    ga = transpose_a ? bmm(b, g, transpose_b, true)
                                     : bmm(g, b, false, !transpose_b);
                  }
                  if (needs[1]) {
                    gb = transpose_b ? bmm(g, a, true, transpose_a)
                                     : bmm(a, g, !transpose_a, false);
                  }
                  return std::vector<Tensor>{ga, gb};
                });
}

Tensor detach(const Tensor& a) { return a.detach(); }

bool all_finite(const Tensor& a) {
  const auto v = a.values();
  return std::all_of(v.begin(), v.end(), [](float x) { return std::isfinite(x); });
}

float max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.numel() != b.numel()) {
    throw ShapeError(fmt::format("max_abs_diff: {} vs {}", shape_str(a.shape()),
                                 shape_str(b.shape())));
  }
  float m = 0.0f;
  for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::fabs(a.data()[i] - b.data()[i]));
  return m;
}

double sum_value(const Tensor& a) {
  const auto v = a.values();
  return std::accumulate(v.begin(), v.end(), 0.0);
}

}  // namespace lbam::ops
