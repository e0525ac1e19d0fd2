#pragma once

#include <optional>
#include <string>
#include <vector>

#include "lbam/attention_math.hpp"
#include "lbam/random.hpp"
#include "lbam/tensor.hpp"

namespace lbam {

/// Learnable quadruple (a, μ, γl, γr); each entry is a scalar leaf.
struct GaussianActivation {
  Tensor a;
  Tensor mu;
  Tensor gamma_l;
  Tensor gamma_r;

  static GaussianActivation initial(double a = 1.1, double mu = 2.0, double gamma_l = 1.0,
                                    double gamma_r = 1.0);
  math::GaussianParams<float> values() const;
  void collect(const std::string& prefix, std::vector<NamedTensor>& out) const;
};

inline constexpr double kDefaultAlpha = 0.8;

/// Learned: Gaussian attention + power mask update with a trainable mask kernel.
/// Unlearned: fixed 1/16 mask kernel with reciprocal attention and indicator update.
enum class AttentionKind { learned, unlearned };

// Element-wise activations. gaussian_attention and mask_update are
// differentiable to first order; the handcrafted pair is not differentiable.
Tensor gaussian_attention(const Tensor& mc, const GaussianActivation& params);
Tensor mask_update(const Tensor& mc, double alpha = kDefaultAlpha);
Tensor pconv_attention(const Tensor& mc);
Tensor pconv_mask_update(const Tensor& mc);

/// Mask-branch convolution: 4×4, stride 2, padding 1, no bias.
Tensor mask_conv(const Tensor& mask, const Tensor& kernel);

/// Attention map for a convolved mask under the given configuration.
Tensor attention_map(const Tensor& mc, const GaussianActivation& params, AttentionKind kind);
Tensor updated_mask(const Tensor& mc, double alpha, AttentionKind kind);

struct AttentionConvLayer {
  Tensor feature_kernel;  // out × in × 4 × 4
  Tensor mask_kernel;     // out × in × 4 × 4
  GaussianActivation activation;
  double alpha = kDefaultAlpha;
  AttentionKind kind = AttentionKind::learned;

  static AttentionConvLayer create(int64_t in_ch, int64_t out_ch, Rng& rng,
                                   AttentionKind kind = AttentionKind::learned,
                                   double init_std = 0.02);
  void collect(const std::string& prefix, std::vector<NamedTensor>& out) const;
};

/// Fixed mask kernel with every element 1/16.
Tensor uniform_mask_kernel(int64_t out_ch, int64_t in_ch, bool trainable);

struct AttentionOutput {
  Tensor feature;    // conv ⊙ attention
  Tensor mask;       // updated mask for the next layer
  Tensor conv;       // raw feature convolution
  Tensor mask_conv;  // convolved mask
  Tensor attention;  // attention map
};

AttentionOutput forward_attention_apply(const Tensor& f_in, const Tensor& m_in,
                                        const AttentionConvLayer& layer);

/// Cat(dec ⊙ g_A(rev_mc), skip ⊙ g_A(fwd_mc)) along channels, decoder half first.
Tensor reverse_attention_combine(const Tensor& dec_feat, const Tensor& enc_skip,
                                 const Tensor& fwd_mc, const Tensor& rev_mc,
                                 const GaussianActivation& fwd_params,
                                 const GaussianActivation& rev_params);

struct PConvOracleLayer {
  Tensor feature_kernel;  // out × in × k × k
  std::optional<Tensor> bias;
  int64_t stride = 2;
  int64_t padding = 1;
};

struct PConvOutput {
  Tensor feature;
  Tensor mask;
};

/// Reference partial convolution evaluated with direct loops (no autograd).
PConvOutput pconv_layer_forward(const Tensor& f_in, const Tensor& m_in,
                                const PConvOracleLayer& layer);

}  // namespace lbam
