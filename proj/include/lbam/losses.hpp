#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "lbam/critic.hpp"
#include "lbam/random.hpp"
#include "lbam/tensor.hpp"

namespace lbam {

struct LossWeights {
  double l1 = 1.0;
  double adv = 0.1;
  double perc = 0.05;
  double style = 120.0;
  double gp_lambda = 10.0;
};

/// λ1·l1 + λ2·adv + λ3·perc + λ4·style; works for double and Tensor operands.
template <class T>
T total_loss(const T& l1, const T& adv, const T& perc, const T& style, const LossWeights& w) {
  return l1 * w.l1 + adv * w.adv + perc * w.perc + style * w.style;
}

/// Frozen VGG16 trunk up to pool3 (conv1_1 … conv3_3). Inputs are images in
/// [-1,1]; they are mapped to [0,1] and normalized with ImageNet statistics.
class FeatureExtractor {
 public:
  static constexpr std::array<const char*, 7> kLayerNames{
      "conv1_1", "conv1_2", "conv2_1", "conv2_2", "conv3_1", "conv3_2", "conv3_3"};

  /// Loads "vgg16.<layer>.weight" / "vgg16.<layer>.bias" from a tensor archive.
  /// A missing file raises IoError naming the path.
  static FeatureExtractor load(const std::string& path);
  /// He-initialized stand-in for when no pretrained weights are available.
  static FeatureExtractor random(uint64_t seed);
  /// `path` empty → random(seed) with a warning on stderr; otherwise load(path).
  static FeatureExtractor from_config(const std::string& path, uint64_t seed);

  /// Feature maps after pool1, pool2 and pool3.
  std::vector<Tensor> features(const Tensor& image) const;

  std::vector<NamedTensor> weights() const;
  bool pretrained() const { return pretrained_; }

 private:
  std::vector<Tensor> kernels_;
  std::vector<Tensor> biases_;
  bool pretrained_ = false;
};

Tensor pixel_l1(const Tensor& out, const Tensor& gt);

/// N×C×H×W → N×C×C, G = F·Fᵀ with F the C×(HW) flattening.
Tensor gram(const Tensor& feature);

/// Mean over taps of the mean squared feature difference.
Tensor perceptual_loss(const std::vector<Tensor>& out_features, const std::vector<Tensor>& gt_features);
/// Mean over taps of (1/C²)·mean squared Gram difference.
Tensor style_loss(const std::vector<Tensor>& out_features, const std::vector<Tensor>& gt_features);

Tensor perceptual_loss(const Tensor& out, const Tensor& gt, const FeatureExtractor& extractor);
Tensor style_loss(const Tensor& out, const Tensor& gt, const FeatureExtractor& extractor);

/// Any differentiable map (image, mask) → N×… critic scores.
using CriticFn = std::function<Tensor(const Tensor& image, const Tensor& mask)>;

CriticFn critic_fn(const TwoColumnCritic& critic, bool training = true);

/// mean over the batch of (‖∇_Î D(Î, M)‖₂ − 1)² with Î = t·gt + (1−t)·out,
/// t ~ U(0,1) per sample. The graph is kept so the penalty trains the critic.
Tensor gradient_penalty(const CriticFn& critic, const Tensor& gt, const Tensor& out, const Tensor& mask,
                        Rng& rng);

struct CriticLossTerms {
  Tensor loss;     // E[D(out)] − E[D(gt)] + λ·penalty
  Tensor d_real;   // E[D(gt)]
  Tensor d_fake;   // E[D(out)]
  Tensor penalty;
};

/// `out` is detached internally.
CriticLossTerms critic_loss(const CriticFn& critic, const Tensor& gt, const Tensor& out,
                            const Tensor& mask, double gp_lambda, Rng& rng);
/// −E[D(out)]
Tensor generator_adv(const CriticFn& critic, const Tensor& out, const Tensor& mask);

}  // namespace lbam
