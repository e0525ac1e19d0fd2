#pragma once

// Scalar kernels for the attention and mask activations. Templated so the
// same formulas can be evaluated in double precision by gradient checks.

#include <cmath>

namespace lbam::math {

inline constexpr double kGammaFloor = 1e-3;

template <class T>
struct GaussianParams {
  T a;
  T mu;
  T gamma_l;
  T gamma_r;
};

template <class T>
struct GaussianGrad {
  T dx;
  T da;
  T dmu;
  T dgamma_l;
  T dgamma_r;
};

template <class T>
T clamp_gamma(T gamma) {
  return gamma < T(kGammaFloor) ? T(kGammaFloor) : gamma;
}

/// Asymmetric Gaussian: a·exp(-γl(x-μ)²) left of μ, 1 + (a-1)·exp(-γr(x-μ)²) from μ on.
template <class T>
T gaussian_value(T x, const GaussianParams<T>& p) {
  const T d = x - p.mu;
  if (x < p.mu) return p.a * std::exp(-clamp_gamma(p.gamma_l) * d * d);
  return T(1) + (p.a - T(1)) * std::exp(-clamp_gamma(p.gamma_r) * d * d);
}

/// Partial derivatives of gaussian_value. The gamma derivatives vanish while
/// the stored value sits below the clamp floor.
template <class T>
GaussianGrad<T> gaussian_grad(T x, const GaussianParams<T>& p) {
  const T d = x - p.mu;
  GaussianGrad<T> g{T(0), T(0), T(0), T(0), T(0)};
  if (x < p.mu) {
    const T gl = clamp_gamma(p.gamma_l);
    const T e = std::exp(-gl * d * d);
    const T y = p.a * e;
    g.dx = T(-2) * gl * d * y;
    g.da = e;
    g.dmu = T(2) * gl * d * y;
    g.dgamma_l = p.gamma_l < T(kGammaFloor) ? T(0) : -d * d * y;
  } else {
    const T gr = clamp_gamma(p.gamma_r);
    const T e = std::exp(-gr * d * d);
    const T s = (p.a - T(1)) * e;
    g.dx = T(-2) * gr * d * s;
    g.da = e;
    g.dmu = T(2) * gr * d * s;
    g.dgamma_r = p.gamma_r < T(kGammaFloor) ? T(0) : -d * d * s;
  }
  return g;
}

/// max(x, 0)^α with 0^α = 0 for every α ≥ 0.
template <class T>
T mask_update_value(T x, T alpha) {
  return x > T(0) ? std::pow(x, alpha) : T(0);
}

template <class T>
T mask_update_grad(T x, T alpha) {
  return x > T(0) ? alpha * std::pow(x, alpha - T(1)) : T(0);
}

/// 1/x on x > 0, else 0.
template <class T>
T pconv_attention_value(T x) {
  return x > T(0) ? T(1) / x : T(0);
}

/// Indicator of x > 0.
template <class T>
T pconv_mask_value(T x) {
  return x > T(0) ? T(1) : T(0);
}

}  // namespace lbam::math
