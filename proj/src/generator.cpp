#include "lbam/generator.hpp"

#include <fmt/format.h>

#include "lbam/autograd.hpp"
#include "lbam/error.hpp"
#include "lbam/ops.hpp"

namespace lbam {

namespace {

constexpr ops::Conv2dOptions kStride2{2, 1};
constexpr double kSlope = 0.2;

}  // namespace

Tensor mask_to_rgb(const Tensor& mask) {
  if (mask.dim() != 4) throw ShapeError("mask must be N×C×H×W, got " + shape_str(mask.shape()));
  if (mask.size(1) == 3) return mask;
  if (mask.size(1) != 1) throw ShapeError("mask must have 1 or 3 channels, got " + shape_str(mask.shape()));
  return ops::concat({mask, mask, mask}, 1);
}

void check_image_pair(const Tensor& image, const Tensor& mask) {
  if (image.dim() != 4 || image.size(1) != 3) {
    throw ShapeError("image must be N×3×H×W, got " + shape_str(image.shape()));
  }
  if (mask.dim() != 4 || mask.size(0) != image.size(0) || mask.size(2) != image.size(2) ||
      mask.size(3) != image.size(3)) {
    throw ShapeError(fmt::format("mask {} does not match image {}", shape_str(mask.shape()),
                                 shape_str(image.shape())));
  }
  if (image.size(2) % kSizeMultiple != 0 || image.size(3) % kSizeMultiple != 0 ||
      image.size(2) == 0 || image.size(3) == 0) {
    throw ShapeError(fmt::format("spatial size {}x{} must be a positive multiple of {}",
                                 image.size(2), image.size(3), kSizeMultiple));
  }
}

LbamUNet LbamUNet::build(uint64_t seed, const GeneratorConfig& config) {
  LbamUNet net;
  net.config_ = config;
  Rng rng(seed);
  const bool learned = config.attention == AttentionKind::learned;

  int64_t in_ch = 3;
  for (size_t i = 0; i < kEncoderChannels.size(); ++i) {
    AttentionConvLayer layer =
        AttentionConvLayer::create(in_ch, kEncoderChannels[i], rng, config.attention, config.init_std);
    layer.alpha = config.alpha;
    net.encoder_.push_back(std::move(layer));
    if (i > 0) net.encoder_bn_.emplace_back(kEncoderChannels[i]);
    in_ch = kEncoderChannels[i];
  }

  in_ch = 3;
  for (size_t j = 0; j < 6; ++j) {
    net.reverse_.push_back({uniform_mask_kernel(kEncoderChannels[j], in_ch, learned),
                            GaussianActivation::initial()});
    in_ch = kEncoderChannels[j];
  }

  int64_t dec_in = kEncoderChannels.back();
  for (size_t l = 0; l < 6; ++l) {
    const int64_t out_ch = kDecoderChannels[l];
    const int64_t skip_ch = kEncoderChannels[5 - l];
    DecoderLayer layer{nn::normal_parameter({dec_in, out_ch, 4, 4}, rng, config.init_std),
                       GaussianActivation::initial(), nn::BatchNorm2d(out_ch + skip_ch)};
    net.decoder_.push_back(std::move(layer));
    dec_in = out_ch + skip_ch;
  }
  net.final_kernel_ = nn::normal_parameter({dec_in, kDecoderChannels.back(), 4, 4}, rng, config.init_std);
  return net;
}

Tensor LbamUNet::attention(const Tensor& mc, const GaussianActivation& params) const {
  if (identity_attention_) return Tensor::ones(mc.shape());
  return attention_map(mc, params, config_.attention);
}

Tensor LbamUNet::run(const Tensor& image, const Tensor& mask, ForwardState* state,
                     bool training) const {
  check_image_pair(image, mask);
  if (!ops::all_finite(image)) throw NumericError("generator input image is not finite");
  const Tensor m = mask_to_rgb(mask);
  const Tensor x = image * m;

  std::vector<Tensor> skips;
  std::vector<Tensor> fwd_mc;
  Tensor f = x;
  Tensor mcur = m;
  for (size_t i = 0; i < encoder_.size(); ++i) {
    const AttentionConvLayer& layer = encoder_[i];
    const Tensor conv = ops::conv2d(f, layer.feature_kernel, kStride2);
    const Tensor mc = mask_conv(mcur, layer.mask_kernel);
    const Tensor att = attention(mc, layer.activation);
    Tensor h = conv * att;
    if (i > 0) h = encoder_bn_[i - 1].forward(h, training);
    f = ops::leaky_relu(h, kSlope);
    mcur = updated_mask(mc, config_.alpha, config_.attention);
    skips.push_back(conv);
    fwd_mc.push_back(mc);
    if (state) {
      state->forward_maps.push_back(att);
      state->layer_outputs.push_back(f);
    }
  }

  std::vector<Tensor> rev_mc;
  if (config_.reverse_attention || state) {
    Tensor rcur = 1.0 - m;
    for (const ReverseLayer& layer : reverse_) {
      const Tensor rc = mask_conv(rcur, layer.mask_kernel);
      rev_mc.push_back(rc);
      rcur = updated_mask(rc, config_.alpha, config_.attention);
    }
  }

  Tensor d = f;
  for (size_t l = 0; l < decoder_.size(); ++l) {
    const size_t k = 5 - l;  // matching encoder / reverse index
    const DecoderLayer& layer = decoder_[l];
    const Tensor& skip = skips[k];
    Tensor up = ops::conv_transpose2d(d, layer.kernel, kStride2, {skip.size(2), skip.size(3)});
    if (config_.reverse_attention) up = up * attention(rev_mc[k], reverse_[k].activation);
    const Tensor gated_skip = skip * attention(fwd_mc[k], layer.skip_activation);
    d = ops::leaky_relu(layer.bn.forward(ops::concat({up, gated_skip}, 1), training), kSlope);
    if (state) state->layer_outputs.push_back(d);
  }
  const Tensor out = ops::tanh(
      ops::conv_transpose2d(d, final_kernel_, kStride2, {image.size(2), image.size(3)}));

  if (state) {
    state->layer_outputs.push_back(out);
    state->skips = skips;
    state->forward_masks = fwd_mc;
    state->reverse_masks = rev_mc;
    for (size_t j = 0; j < rev_mc.size(); ++j) {
      state->reverse_maps.push_back(attention(rev_mc[j], reverse_[j].activation));
    }
  }
  return out;
}

Tensor LbamUNet::forward(const Tensor& image, const Tensor& mask, bool training) const {
  return run(image, mask, nullptr, training);
}

Tensor LbamUNet::forward_with_intermediates(const Tensor& image, const Tensor& mask,
                                            ForwardState& state, bool training) const {
  state = ForwardState{};
  return run(image, mask, &state, training);
}

Tensor LbamUNet::infer(const Tensor& image, const Tensor& mask) const {
  NoGradGuard no_grad;
  return run(image, mask, nullptr, false);
}

std::vector<NamedTensor> LbamUNet::parameters() const {
  std::vector<NamedTensor> out;
  const bool learned = config_.attention == AttentionKind::learned;
  for (size_t i = 0; i < encoder_.size(); ++i) {
    const std::string prefix = fmt::format("generator.encoder{}", i + 1);
    encoder_[i].collect(prefix, out);
    if (i > 0) encoder_bn_[i - 1].collect_parameters(prefix + ".bn", out);
  }
  if (learned) {
    for (size_t j = 0; j < reverse_.size(); ++j) {
      const std::string prefix = fmt::format("generator.reverse{}", j + 1);
      out.push_back({prefix + ".mask_kernel", reverse_[j].mask_kernel});
      if (config_.reverse_attention) reverse_[j].activation.collect(prefix + ".activation", out);
    }
  }
  for (size_t l = 0; l < decoder_.size(); ++l) {
    const std::string prefix = fmt::format("generator.decoder{}", l + 8);
    out.push_back({prefix + ".deconv_kernel", decoder_[l].kernel});
    if (learned) decoder_[l].skip_activation.collect(prefix + ".skip_activation", out);
    decoder_[l].bn.collect_parameters(prefix + ".bn", out);
  }
  out.push_back({"generator.decoder14.deconv_kernel", final_kernel_});
  return out;
}

std::vector<NamedTensor> LbamUNet::buffers() const {
  std::vector<NamedTensor> out;
  for (size_t i = 1; i < encoder_.size(); ++i) {
    encoder_bn_[i - 1].collect_buffers(fmt::format("generator.encoder{}.bn", i + 1), out);
  }
  for (size_t l = 0; l < decoder_.size(); ++l) {
    decoder_[l].bn.collect_buffers(fmt::format("generator.decoder{}.bn", l + 8), out);
  }
  return out;
}

std::vector<NamedTensor> LbamUNet::state() const {
  std::vector<NamedTensor> out = parameters();
  for (NamedTensor& b : buffers()) out.push_back(std::move(b));
  return out;
}

Tensor composite_output(const Tensor& output, const Tensor& image, const Tensor& mask,
                        bool enabled) {
  if (output.shape() != image.shape()) {
    throw ShapeError(fmt::format("composite_output: output {} vs image {}",
                                 shape_str(output.shape()), shape_str(image.shape())));
  }
  if (!enabled) return output;
  const Tensor m = mask_to_rgb(mask);
  return m * image + (1.0 - m) * output;
}

}  // namespace lbam
