#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lbam/nn.hpp"
#include "lbam/tensor.hpp"

namespace lbam {

enum class CriticHead { sigmoid, identity };

CriticHead parse_critic_head(const std::string& name);
std::string to_string(CriticHead head);

/// Number of stride-2 layers per column for a square input side: log2(side / 4).
int64_t critic_depth(int64_t image_size);

class TwoColumnCritic {
 public:
  /// Columns see image ⊙ M and image ⊙ (1 − M); their 4×4 outputs are
  /// concatenated and reduced to one value by a 4×4 valid convolution.
  static TwoColumnCritic build(uint64_t seed, CriticHead head = CriticHead::sigmoid,
                               int64_t image_size = 256, double init_std = 0.02);

  /// Returns N×1×1×1.
  Tensor forward(const Tensor& image, const Tensor& mask, bool training = true) const;

  std::vector<NamedTensor> parameters() const;
  std::vector<NamedTensor> buffers() const;
  std::vector<NamedTensor> state() const;

  CriticHead head() const { return head_; }
  int64_t image_size() const { return image_size_; }
  /// Output channels per column layer.
  std::vector<int64_t> column_channels() const;

 private:
  struct Column {
    std::vector<Tensor> kernels;
    std::vector<nn::BatchNorm2d> bn;  // layers 2..depth
  };
  Tensor run_column(const Column& column, const Tensor& x, bool training) const;

  Column masked_;
  Column complement_;
  Tensor head_kernel_;
  CriticHead head_ = CriticHead::sigmoid;
  int64_t image_size_ = 256;
};

inline TwoColumnCritic build_critic(uint64_t seed, CriticHead head = CriticHead::sigmoid,
                                    int64_t image_size = 256) {
  return TwoColumnCritic::build(seed, head, image_size);
}

inline Tensor critic_forward(const TwoColumnCritic& critic, const Tensor& image, const Tensor& mask,
                             bool training = true) {
  return critic.forward(image, mask, training);
}

}  // namespace lbam
