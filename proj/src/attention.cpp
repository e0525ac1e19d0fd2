#include "lbam/attention.hpp"

#include <cmath>
#include <fmt/format.h>

#include "lbam/autograd.hpp"
#include "lbam/error.hpp"
#include "lbam/nn.hpp"
#include "lbam/ops.hpp"

namespace lbam {

namespace {

void require_finite(const Tensor& t, std::string_view op) {
  if (!ops::all_finite(t)) {
    throw NumericError(fmt::format("{}: non-finite input (upstream numeric blow-up)", op));
  }
}

void require_first_order(std::string_view op) {
  if (GradMode::enabled()) {
    throw Error(fmt::format("double backward through '{}' is not supported", op));
  }
}

constexpr ops::Conv2dOptions kDownsample{2, 1};

}  // namespace

GaussianActivation GaussianActivation::initial(double a, double mu, double gamma_l, double gamma_r) {
  return {nn::constant_parameter({}, static_cast<float>(a)),
          nn::constant_parameter({}, static_cast<float>(mu)),
          nn::constant_parameter({}, static_cast<float>(gamma_l)),
          nn::constant_parameter({}, static_cast<float>(gamma_r))};
}

math::GaussianParams<float> GaussianActivation::values() const {
  return {a.item(), mu.item(), gamma_l.item(), gamma_r.item()};
}

void GaussianActivation::collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
  out.push_back({prefix + ".a", a});
  out.push_back({prefix + ".mu", mu});
  out.push_back({prefix + ".gamma_l", gamma_l});
  out.push_back({prefix + ".gamma_r", gamma_r});
}

Tensor gaussian_attention(const Tensor& mc, const GaussianActivation& params) {
  require_finite(mc, "gaussian_attention");
  const math::GaussianParams<float> p = params.values();
  for (float v : {p.a, p.mu, p.gamma_l, p.gamma_r}) {
    if (!std::isfinite(v)) throw NumericError("gaussian_attention: non-finite parameter");
  }
  Tensor out = Tensor::empty(mc.shape());
  const float* x = mc.data();
  float* y = out.mutable_data();
  for (int64_t i = 0; i < mc.numel(); ++i) y[i] = math::gaussian_value(x[i], p);
  return record(out, "gaussian_attention", {mc, params.a, params.mu, params.gamma_l, params.gamma_r},
                [mc, p](const Tensor& g, const NeedsGrad& needs) {
                  require_first_order("gaussian_attention");
                  Tensor gx = needs[0] ? Tensor::empty(mc.shape()) : Tensor();
                  double sums[4] = {0.0, 0.0, 0.0, 0.0};
                  const float* x = mc.data();
                  const float* pg = g.data();
                  for (int64_t i = 0; i < mc.numel(); ++i) {
                    const math::GaussianGrad<float> d = math::gaussian_grad(x[i], p);
                    if (needs[0]) gx.mutable_data()[i] = pg[i] * d.dx;
                    sums[0] += static_cast<double>(pg[i]) * d.da;
                    sums[1] += static_cast<double>(pg[i]) * d.dmu;
                    sums[2] += static_cast<double>(pg[i]) * d.dgamma_l;
                    sums[3] += static_cast<double>(pg[i]) * d.dgamma_r;
                  }
                  std::vector<Tensor> grads{gx};
                  for (int k = 0; k < 4; ++k) {
                    grads.push_back(needs[static_cast<size_t>(k) + 1]
                                        ? Tensor::scalar(static_cast<float>(sums[k]))
                                        : Tensor());
                  }
                  return grads;
                });
}

Tensor mask_update(const Tensor& mc, double alpha) {
  if (alpha < 0.0) throw Error(fmt::format("mask_update: alpha must be >= 0, got {}", alpha));
  require_finite(mc, "mask_update");
  const float fa = static_cast<float>(alpha);
  Tensor out = Tensor::empty(mc.shape());
  const float* x = mc.data();
  float* y = out.mutable_data();
  for (int64_t i = 0; i < mc.numel(); ++i) y[i] = math::mask_update_value(x[i], fa);
  return record(out, "mask_update", {mc}, [mc, fa](const Tensor& g, const NeedsGrad&) {
    require_first_order("mask_update");
    Tensor gx = Tensor::empty(mc.shape());
    const float* x = mc.data();
    const float* pg = g.data();
    float* px = gx.mutable_data();
    for (int64_t i = 0; i < mc.numel(); ++i) px[i] = pg[i] * math::mask_update_grad(x[i], fa);
    return std::vector<Tensor>{gx};
  });
}

Tensor pconv_attention(const Tensor& mc) {
  Tensor out = Tensor::empty(mc.shape());
  const float* x = mc.data();
  float* y = out.mutable_data();
  for (int64_t i = 0; i < mc.numel(); ++i) y[i] = math::pconv_attention_value(x[i]);
  return out;
}

Tensor pconv_mask_update(const Tensor& mc) {
  Tensor out = Tensor::empty(mc.shape());
  const float* x = mc.data();
  float* y = out.mutable_data();
  for (int64_t i = 0; i < mc.numel(); ++i) y[i] = math::pconv_mask_value(x[i]);
  return out;
}

Tensor mask_conv(const Tensor& mask, const Tensor& kernel) {
  return ops::conv2d(mask, kernel, kDownsample);
}

Tensor attention_map(const Tensor& mc, const GaussianActivation& params, AttentionKind kind) {
  return kind == AttentionKind::learned ? gaussian_attention(mc, params) : pconv_attention(mc);
}

Tensor updated_mask(const Tensor& mc, double alpha, AttentionKind kind) {
  return kind == AttentionKind::learned ? mask_update(mc, alpha) : pconv_mask_update(mc);
}

Tensor uniform_mask_kernel(int64_t out_ch, int64_t in_ch, bool trainable) {
  Tensor k = Tensor::full({out_ch, in_ch, 4, 4}, 1.0f / 16.0f);
  if (trainable) k.set_requires_grad(true);
  return k;
}

AttentionConvLayer AttentionConvLayer::create(int64_t in_ch, int64_t out_ch, Rng& rng,
                                              AttentionKind kind, double init_std) {
  AttentionConvLayer layer;
  layer.feature_kernel = nn::normal_parameter({out_ch, in_ch, 4, 4}, rng, init_std);
  layer.mask_kernel = uniform_mask_kernel(out_ch, in_ch, kind == AttentionKind::learned);
  layer.activation = GaussianActivation::initial();
  layer.kind = kind;
  return layer;
}

void AttentionConvLayer::collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
  out.push_back({prefix + ".feature_kernel", feature_kernel});
  if (kind == AttentionKind::learned) {
    out.push_back({prefix + ".mask_kernel", mask_kernel});
    activation.collect(prefix + ".activation", out);
  }
}

AttentionOutput forward_attention_apply(const Tensor& f_in, const Tensor& m_in,
                                        const AttentionConvLayer& layer) {
  if (f_in.dim() != 4 || m_in.dim() != 4 || f_in.size(0) != m_in.size(0) ||
      f_in.size(2) != m_in.size(2) || f_in.size(3) != m_in.size(3)) {
    throw ShapeError(fmt::format("forward_attention_apply: feature {} and mask {} are not aligned",
                                 shape_str(f_in.shape()), shape_str(m_in.shape())));
  }
  AttentionOutput out;
  out.conv = ops::conv2d(f_in, layer.feature_kernel, kDownsample);
  out.mask_conv = mask_conv(m_in, layer.mask_kernel);
  out.attention = attention_map(out.mask_conv, layer.activation, layer.kind);
  out.feature = out.conv * out.attention;
  out.mask = updated_mask(out.mask_conv, layer.alpha, layer.kind);
  return out;
}

Tensor reverse_attention_combine(const Tensor& dec_feat, const Tensor& enc_skip,
                                 const Tensor& fwd_mc, const Tensor& rev_mc,
                                 const GaussianActivation& fwd_params,
                                 const GaussianActivation& rev_params) {
  for (const Tensor* t : {&enc_skip, &fwd_mc, &rev_mc}) {
    if (t->dim() != 4 || dec_feat.dim() != 4 || t->size(0) != dec_feat.size(0) ||
        t->size(2) != dec_feat.size(2) || t->size(3) != dec_feat.size(3)) {
      throw ShapeError(fmt::format("reverse_attention_combine: {} not aligned with decoder {}",
                                   shape_str(t->shape()), shape_str(dec_feat.shape())));
    }
  }
  const Tensor dec = dec_feat * gaussian_attention(rev_mc, rev_params);
  const Tensor skip = enc_skip * gaussian_attention(fwd_mc, fwd_params);
  return ops::concat({dec, skip}, 1);
}

PConvOutput pconv_layer_forward(const Tensor& f_in, const Tensor& m_in,
                                const PConvOracleLayer& layer) {
  const Tensor& w = layer.feature_kernel;
  if (f_in.dim() != 4 || w.dim() != 4 || f_in.size(1) != w.size(1) ||
      m_in.shape() != f_in.shape()) {
    throw ShapeError(fmt::format("pconv_layer_forward: feature {}, mask {}, kernel {}",
                                 shape_str(f_in.shape()), shape_str(m_in.shape()),
                                 shape_str(w.shape())));
  }
  const int64_t n = f_in.size(0), c = f_in.size(1), h = f_in.size(2), wd = f_in.size(3);
  const int64_t o = w.size(0), kh = w.size(2), kw = w.size(3);
  const int64_t s = layer.stride, p = layer.padding;
  const int64_t ho = (h + 2 * p - kh) / s + 1;
  const int64_t wo = (wd + 2 * p - kw) / s + 1;
  const double inv_window = 1.0 / static_cast<double>(kh * kw);
  PConvOutput out{Tensor::zeros({n, o, ho, wo}), Tensor::zeros({n, o, ho, wo})};
  const float* x = f_in.data();
  const float* m = m_in.data();
  const float* k = w.data();
  for (int64_t b = 0; b < n; ++b) {
    for (int64_t oc = 0; oc < o; ++oc) {
      for (int64_t oy = 0; oy < ho; ++oy) {
        for (int64_t ox = 0; ox < wo; ++ox) {
          double acc = 0.0;
          double mask_sum = 0.0;
          for (int64_t ic = 0; ic < c; ++ic) {
            for (int64_t ky = 0; ky < kh; ++ky) {
              const int64_t iy = oy * s - p + ky;
              if (iy < 0 || iy >= h) continue;
              for (int64_t kx = 0; kx < kw; ++kx) {
                const int64_t ix = ox * s - p + kx;
                if (ix < 0 || ix >= wd) continue;
                const int64_t idx = ((b * c + ic) * h + iy) * wd + ix;
                acc += static_cast<double>(k[((oc * c + ic) * kh + ky) * kw + kx]) * x[idx] * m[idx];
                mask_sum += m[idx] * inv_window;
              }
            }
          }
          const int64_t at = ((b * o + oc) * ho + oy) * wo + ox;
          if (mask_sum > 0.0) {
            double value = acc / mask_sum;
            if (layer.bias) value += layer.bias->data()[oc];
            out.feature.mutable_data()[at] = static_cast<float>(value);
            out.mask.mutable_data()[at] = 1.0f;
          }
        }
      }
    }
  }
  return out;
}

}  // namespace lbam
