#include "lbam/losses.hpp"

#include <cmath>
#include <filesystem>
#include <fmt/format.h>

#include "lbam/archive.hpp"
#include "lbam/autograd.hpp"
#include "lbam/error.hpp"
#include "lbam/ops.hpp"

namespace lbam {

namespace {

// (in, out) channels per VGG16 conv up to conv3_3; a pool follows layers 1, 3 and 6.
constexpr std::array<std::pair<int64_t, int64_t>, 7> kVggShape{
    {{3, 64}, {64, 64}, {64, 128}, {128, 128}, {128, 256}, {256, 256}, {256, 256}}};
constexpr std::array<bool, 7> kPoolAfter{false, true, false, true, false, false, true};
constexpr std::array<float, 3> kImageNetMean{0.485f, 0.456f, 0.406f};
constexpr std::array<float, 3> kImageNetStd{0.229f, 0.224f, 0.225f};

void check_same_shape(const Tensor& a, const Tensor& b, std::string_view what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(fmt::format("{}: {} vs {}", what, shape_str(a.shape()), shape_str(b.shape())));
  }
}

void check_taps(const std::vector<Tensor>& a, const std::vector<Tensor>& b) {
  if (a.empty() || a.size() != b.size()) throw ShapeError("feature tap lists differ in length");
}

}  // namespace

FeatureExtractor FeatureExtractor::load(const std::string& path) {
  if (!std::filesystem::exists(path)) {
    throw IoError(fmt::format("feature extractor weights not found: {}", path));
  }
  const Archive archive = load_archive(path);
  FeatureExtractor fx;
  for (size_t i = 0; i < kLayerNames.size(); ++i) {
    const auto [in_ch, out_ch] = kVggShape[i];
    const std::string base = fmt::format("vgg16.{}", kLayerNames[i]);
    const Tensor& w = archive.get(base + ".weight");
    const Tensor& b = archive.get(base + ".bias");
    if (w.shape() != Shape{out_ch, in_ch, 3, 3} || b.shape() != Shape{out_ch}) {
      throw ShapeError(fmt::format("{}: {} has shape {}", path, base, shape_str(w.shape())));
    }
    fx.kernels_.push_back(w.clone());
    fx.biases_.push_back(b.clone());
  }
  fx.pretrained_ = true;
  return fx;
}

FeatureExtractor FeatureExtractor::random(uint64_t seed) {
  FeatureExtractor fx;
  Rng rng(seed);
  for (const auto& [in_ch, out_ch] : kVggShape) {
    fx.kernels_.push_back(randn({out_ch, in_ch, 3, 3}, rng, 0.0, std::sqrt(2.0 / (9.0 * in_ch))));
    fx.biases_.push_back(Tensor::zeros({out_ch}));
  }
  return fx;
}

FeatureExtractor FeatureExtractor::from_config(const std::string& path, uint64_t seed) {
  if (path.empty()) {
    fmt::print(stderr,
               "warning: no feature extractor weights configured; perceptual and style losses use a "
               "randomly initialized VGG16 trunk\n");
    return random(seed);
  }
  return load(path);
}

std::vector<Tensor> FeatureExtractor::features(const Tensor& image) const {
  if (image.dim() != 4 || image.size(1) != 3) {
    throw ShapeError("feature extractor expects N×3×H×W, got " + shape_str(image.shape()));
  }
  std::vector<float> scale(3);
  std::vector<float> shift(3);
  for (size_t c = 0; c < 3; ++c) {
    scale[c] = 0.5f / kImageNetStd[c];
    shift[c] = (0.5f - kImageNetMean[c]) / kImageNetStd[c];
  }
  Tensor h = image * Tensor::from_data({1, 3, 1, 1}, scale) + Tensor::from_data({1, 3, 1, 1}, shift);
  std::vector<Tensor> taps;
  for (size_t i = 0; i < kernels_.size(); ++i) {
    h = ops::relu(ops::add_channel_bias(ops::conv2d(h, kernels_[i], {1, 1}), biases_[i]));
    if (kPoolAfter[i]) {
      h = ops::max_pool2d(h);
      taps.push_back(h);
    }
  }
  return taps;
}

std::vector<NamedTensor> FeatureExtractor::weights() const {
  std::vector<NamedTensor> out;
  for (size_t i = 0; i < kernels_.size(); ++i) {
    const std::string base = fmt::format("vgg16.{}", kLayerNames[i]);
    out.push_back({base + ".weight", kernels_[i]});
    out.push_back({base + ".bias", biases_[i]});
  }
  return out;
}

Tensor pixel_l1(const Tensor& out, const Tensor& gt) {
  check_same_shape(out, gt, "pixel_l1");
  return ops::mean(ops::abs(out - gt));
}

Tensor gram(const Tensor& feature) {
  if (feature.dim() != 4) throw ShapeError("gram expects N×C×H×W, got " + shape_str(feature.shape()));
  const Tensor flat = ops::reshape(feature, {feature.size(0), feature.size(1), -1});
  return ops::bmm(flat, flat, false, true);
}

Tensor perceptual_loss(const std::vector<Tensor>& out_features, const std::vector<Tensor>& gt_features) {
  check_taps(out_features, gt_features);
  Tensor total;
  for (size_t i = 0; i < out_features.size(); ++i) {
    check_same_shape(out_features[i], gt_features[i], "perceptual_loss");
    const Tensor term = ops::mean(ops::square(gt_features[i] - out_features[i]));
    total = total.defined() ? total + term : term;
  }
  return total / static_cast<double>(out_features.size());
}

Tensor style_loss(const std::vector<Tensor>& out_features, const std::vector<Tensor>& gt_features) {
  check_taps(out_features, gt_features);
  Tensor total;
  for (size_t i = 0; i < out_features.size(); ++i) {
    check_same_shape(out_features[i], gt_features[i], "style_loss");
    const double c = static_cast<double>(out_features[i].size(1));
    const Tensor diff = gram(gt_features[i]) - gram(out_features[i]);
    const Tensor term = ops::mean(ops::square(diff)) * (1.0 / (c * c));
    total = total.defined() ? total + term : term;
  }
  return total / static_cast<double>(out_features.size());
}

Tensor perceptual_loss(const Tensor& out, const Tensor& gt, const FeatureExtractor& extractor) {
  check_same_shape(out, gt, "perceptual_loss");
  std::vector<Tensor> gt_features;
  {
    NoGradGuard no_grad;
    gt_features = extractor.features(gt);
  }
  return perceptual_loss(extractor.features(out), gt_features);
}

Tensor style_loss(const Tensor& out, const Tensor& gt, const FeatureExtractor& extractor) {
  check_same_shape(out, gt, "style_loss");
  std::vector<Tensor> gt_features;
  {
    NoGradGuard no_grad;
    gt_features = extractor.features(gt);
  }
  return style_loss(extractor.features(out), gt_features);
}

CriticFn critic_fn(const TwoColumnCritic& critic, bool training) {
  return [&critic, training](const Tensor& image, const Tensor& mask) {
    return critic.forward(image, mask, training);
  };
}

Tensor gradient_penalty(const CriticFn& critic, const Tensor& gt, const Tensor& out, const Tensor& mask,
                        Rng& rng) {
  check_same_shape(gt, out, "gradient_penalty");
  const int64_t n = gt.size(0);
  Shape t_shape(static_cast<size_t>(gt.dim()), 1);
  t_shape[0] = n;
  const Tensor t = rand_uniform(t_shape, rng);
  Tensor x_hat;
  {
    NoGradGuard no_grad;
    x_hat = (t * gt + (1.0 - t) * out.detach()).detach();
  }
  x_hat.set_requires_grad(true);
  const Tensor scores = critic(x_hat, mask);
  GradOptions options;
  options.create_graph = true;
  const Tensor g = grad(ops::sum(scores), {x_hat}, options)[0];
  if (!ops::all_finite(g)) throw NumericError("gradient_penalty: critic gradient is not finite");
  std::vector<int64_t> dims;
  for (int64_t d = 1; d < g.dim(); ++d) dims.push_back(d);
  const Tensor norm = ops::sqrt(ops::sum_dims(ops::square(g), dims, false) + 1e-12);
  return ops::mean(ops::square(norm - 1.0));
}

CriticLossTerms critic_loss(const CriticFn& critic, const Tensor& gt, const Tensor& out,
                            const Tensor& mask, double gp_lambda, Rng& rng) {
  const Tensor fake = out.detach();
  CriticLossTerms terms;
  terms.d_real = ops::mean(critic(gt, mask));
  terms.d_fake = ops::mean(critic(fake, mask));
  terms.penalty = gradient_penalty(critic, gt, fake, mask, rng);
  terms.loss = terms.d_fake - terms.d_real + terms.penalty * gp_lambda;
  return terms;
}

Tensor generator_adv(const CriticFn& critic, const Tensor& out, const Tensor& mask) {
  return -ops::mean(critic(out, mask));
}

}  // namespace lbam
