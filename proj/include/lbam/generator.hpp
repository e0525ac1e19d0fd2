#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "lbam/attention.hpp"
#include "lbam/nn.hpp"
#include "lbam/tensor.hpp"

namespace lbam {

struct GeneratorConfig {
  AttentionKind attention = AttentionKind::learned;
  /// false gives the forward-only variant (decoder features unmodulated).
  bool reverse_attention = true;
  double alpha = kDefaultAlpha;
  double init_std = 0.02;
};

/// Encoder output channels for layers 1..7.
inline constexpr std::array<int64_t, 7> kEncoderChannels{64, 128, 256, 512, 512, 512, 512};
/// Deconvolution output channels for layers 8..14.
inline constexpr std::array<int64_t, 7> kDecoderChannels{512, 512, 512, 256, 128, 64, 3};
inline constexpr int64_t kSizeMultiple = 128;

/// Cached intermediates of one forward pass. Index 0 is layer 1 throughout.
struct ForwardState {
  std::vector<Tensor> skips;          // raw encoder convolutions, layers 1..7
  std::vector<Tensor> forward_masks;  // convolved masks, forward layers 1..7
  std::vector<Tensor> forward_maps;   // attention of forward_masks
  std::vector<Tensor> reverse_masks;  // convolved masks, reverse layers 1..6
  std::vector<Tensor> reverse_maps;   // attention of reverse_masks (decoder instances)
  std::vector<Tensor> layer_outputs;  // outputs of U-Net layers 1..14
};

class LbamUNet {
 public:
  static LbamUNet build(uint64_t seed, const GeneratorConfig& config = {});

  /// image: N×3×H×W in [-1,1]; mask: N×1×H×W or N×3×H×W, 1 = known.
  /// H and W must be multiples of 128.
  Tensor forward(const Tensor& image, const Tensor& mask, bool training = true) const;
  Tensor forward_with_intermediates(const Tensor& image, const Tensor& mask, ForwardState& state,
                                    bool training = true) const;
  /// Evaluation-mode forward without graph recording.
  Tensor infer(const Tensor& image, const Tensor& mask) const;

  std::vector<NamedTensor> parameters() const;
  std::vector<NamedTensor> buffers() const;
  /// parameters() followed by buffers().
  std::vector<NamedTensor> state() const;

  const GeneratorConfig& config() const { return config_; }

  /// Test hook: replace every attention map with ones.
  void set_identity_attention(bool enabled) { identity_attention_ = enabled; }

 private:
  struct ReverseLayer {
    Tensor mask_kernel;
    GaussianActivation activation;
  };
  struct DecoderLayer {
    Tensor kernel;  // in × out × 4 × 4
    GaussianActivation skip_activation;
    nn::BatchNorm2d bn;
  };

  Tensor run(const Tensor& image, const Tensor& mask, ForwardState* state, bool training) const;
  Tensor attention(const Tensor& mc, const GaussianActivation& params) const;

  GeneratorConfig config_;
  std::vector<AttentionConvLayer> encoder_;
  std::vector<nn::BatchNorm2d> encoder_bn_;  // layers 2..7
  std::vector<ReverseLayer> reverse_;
  std::vector<DecoderLayer> decoder_;        // layers 8..13
  Tensor final_kernel_;                      // layer 14
  bool identity_attention_ = false;
};

/// mask ⊙ image + (1 − mask) ⊙ output when enabled, otherwise output.
Tensor composite_output(const Tensor& output, const Tensor& image, const Tensor& mask, bool enabled);

/// Replicates a single-channel mask to three channels.
Tensor mask_to_rgb(const Tensor& mask);

void check_image_pair(const Tensor& image, const Tensor& mask);

}  // namespace lbam
