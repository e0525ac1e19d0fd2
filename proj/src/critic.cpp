#include "lbam/critic.hpp"

#include <fmt/format.h>

#include "lbam/error.hpp"
#include "lbam/generator.hpp"
#include "lbam/ops.hpp"

namespace lbam {

namespace {

constexpr std::array<int64_t, 6> kColumnChannels{64, 128, 256, 512, 512, 512};

}  // namespace

CriticHead parse_critic_head(const std::string& name) {
  if (name == "sigmoid") return CriticHead::sigmoid;
  if (name == "identity") return CriticHead::identity;
  throw ConfigError(fmt::format("unknown critic head '{}' (expected sigmoid or identity)", name));
}

std::string to_string(CriticHead head) {
  return head == CriticHead::sigmoid ? "sigmoid" : "identity";
}

int64_t critic_depth(int64_t image_size) {
  int64_t depth = 0;
  int64_t side = image_size;
  while (side > 4 && side % 2 == 0) {
    side /= 2;
    ++depth;
  }
  if (side != 4 || depth < 1 || depth > static_cast<int64_t>(kColumnChannels.size())) {
    throw ConfigError(fmt::format("critic input size {} must be 4·2^k with 1 <= k <= {}",
                                  image_size, kColumnChannels.size()));
  }
  return depth;
}

TwoColumnCritic TwoColumnCritic::build(uint64_t seed, CriticHead head, int64_t image_size,
                                       double init_std) {
  TwoColumnCritic critic;
  critic.head_ = head;
  critic.image_size_ = image_size;
  const int64_t depth = critic_depth(image_size);
  Rng rng(seed);
  for (Column* column : {&critic.masked_, &critic.complement_}) {
    int64_t in_ch = 3;
    for (int64_t i = 0; i < depth; ++i) {
      const int64_t out_ch = kColumnChannels[static_cast<size_t>(i)];
      column->kernels.push_back(nn::normal_parameter({out_ch, in_ch, 4, 4}, rng, init_std));
      if (i > 0) column->bn.emplace_back(out_ch);
      in_ch = out_ch;
    }
  }
  const int64_t merged = 2 * kColumnChannels[static_cast<size_t>(depth - 1)];
  critic.head_kernel_ = nn::normal_parameter({1, merged, 4, 4}, rng, init_std);
  return critic;
}

std::vector<int64_t> TwoColumnCritic::column_channels() const {
  std::vector<int64_t> out;
  for (const Tensor& k : masked_.kernels) out.push_back(k.size(0));
  return out;
}

Tensor TwoColumnCritic::run_column(const Column& column, const Tensor& x, bool training) const {
  Tensor h = x;
  for (size_t i = 0; i < column.kernels.size(); ++i) {
    h = ops::conv2d(h, column.kernels[i], {2, 1});
    if (i > 0) h = column.bn[i - 1].forward(h, training);
    h = ops::leaky_relu(h, 0.2);
  }
  return h;
}

Tensor TwoColumnCritic::forward(const Tensor& image, const Tensor& mask, bool training) const {
  if (image.dim() != 4 || image.size(1) != 3 || image.size(2) != image_size_ ||
      image.size(3) != image_size_) {
    throw ShapeError(fmt::format("critic expects N×3×{}×{}, got {}", image_size_, image_size_,
                                 shape_str(image.shape())));
  }
  if (mask.dim() != 4 || mask.size(0) != image.size(0) || mask.size(2) != image.size(2) ||
      mask.size(3) != image.size(3)) {
    throw ShapeError(fmt::format("critic mask {} does not match image {}", shape_str(mask.shape()),
                                 shape_str(image.shape())));
  }
  const Tensor m = mask_to_rgb(mask);
  const Tensor a = run_column(masked_, image * m, training);
  const Tensor b = run_column(complement_, image * (1.0 - m), training);
  const Tensor logits = ops::conv2d(ops::concat({a, b}, 1), head_kernel_, {1, 0});
  return head_ == CriticHead::sigmoid ? ops::sigmoid(logits) : logits;
}

std::vector<NamedTensor> TwoColumnCritic::parameters() const {
  std::vector<NamedTensor> out;
  const char* names[2] = {"masked", "complement"};
  const Column* columns[2] = {&masked_, &complement_};
  for (int c = 0; c < 2; ++c) {
    for (size_t i = 0; i < columns[c]->kernels.size(); ++i) {
      const std::string prefix = fmt::format("critic.{}{}", names[c], i + 1);
      out.push_back({prefix + ".kernel", columns[c]->kernels[i]});
      if (i > 0) columns[c]->bn[i - 1].collect_parameters(prefix + ".bn", out);
    }
  }
  out.push_back({"critic.head.kernel", head_kernel_});
  return out;
}

std::vector<NamedTensor> TwoColumnCritic::buffers() const {
  std::vector<NamedTensor> out;
  const char* names[2] = {"masked", "complement"};
  const Column* columns[2] = {&masked_, &complement_};
  for (int c = 0; c < 2; ++c) {
    for (size_t i = 1; i < columns[c]->kernels.size(); ++i) {
      columns[c]->bn[i - 1].collect_buffers(fmt::format("critic.{}{}.bn", names[c], i + 1), out);
    }
  }
  return out;
}

std::vector<NamedTensor> TwoColumnCritic::state() const {
  std::vector<NamedTensor> out = parameters();
  for (NamedTensor& b : buffers()) out.push_back(std::move(b));
  return out;
}

}  // namespace lbam
