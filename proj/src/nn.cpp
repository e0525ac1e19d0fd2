#include "lbam/nn.hpp"

#include <array>
#include <cmath>
#include <fmt/format.h>
#include <unordered_map>

#include "lbam/autograd.hpp"
#include "lbam/error.hpp"
#include "lbam/ops.hpp"

namespace lbam::nn {

Tensor normal_parameter(const Shape& shape, Rng& rng, double stddev) {
  Tensor t = randn(shape, rng, 0.0, stddev);
  t.set_requires_grad(true);
  return t;
}

Tensor constant_parameter(const Shape& shape, float value) {
  Tensor t = Tensor::full(shape, value);
  t.set_requires_grad(true);
  return t;
}

BatchNorm2d::BatchNorm2d(int64_t channels, double eps, double momentum)
    : gamma_(constant_parameter({channels}, 1.0f)),
      beta_(constant_parameter({channels}, 0.0f)),
      running_mean_(Tensor::zeros({channels})),
      running_var_(Tensor::ones({channels})),
      eps_(eps),
      momentum_(momentum) {}

Tensor BatchNorm2d::forward(const Tensor& x, bool training) const {
  if (x.dim() != 4 || x.size(1) != channels()) {
    throw ShapeError(fmt::format("BatchNorm2d({}) got input {}", channels(), shape_str(x.shape())));
  }
  const int64_t c = channels();
  const Tensor gamma = ops::reshape(gamma_, {1, c, 1, 1});
  const Tensor beta = ops::reshape(beta_, {1, c, 1, 1});
  if (!training) {
    const Tensor mean = ops::reshape(running_mean_, {1, c, 1, 1});
    const Tensor inv_std = ops::pow(ops::add_scalar(ops::reshape(running_var_, {1, c, 1, 1}), eps_), -0.5);
    return (x - mean) * (inv_std * gamma) + beta;
  }
  const int64_t count = x.size(0) * x.size(2) * x.size(3);
  if (count < 2) {
    throw ShapeError(fmt::format("BatchNorm2d needs more than one value per channel in training, got {}",
                                 shape_str(x.shape())));
  }
  const Tensor mean = ops::mean_dims(x, {0, 2, 3}, true);
  const Tensor centered = x - mean;
  const Tensor var = ops::mean_dims(ops::square(centered), {0, 2, 3}, true);
  const Tensor out = centered * ops::pow(ops::add_scalar(var, eps_), -0.5) * gamma + beta;

  const double unbias = static_cast<double>(count) / static_cast<double>(count - 1);
  float* rm = running_mean_.mutable_data();
  float* rv = running_var_.mutable_data();
  for (int64_t i = 0; i < c; ++i) {
    rm[i] = static_cast<float>((1.0 - momentum_) * rm[i] + momentum_ * mean.data()[i]);
    rv[i] = static_cast<float>((1.0 - momentum_) * rv[i] + momentum_ * var.data()[i] * unbias);
  }
  return out;
}

void BatchNorm2d::collect_parameters(const std::string& prefix, std::vector<NamedTensor>& out) const {
  out.push_back({prefix + ".gamma", gamma_});
  out.push_back({prefix + ".beta", beta_});
}

void BatchNorm2d::collect_buffers(const std::string& prefix, std::vector<NamedTensor>& out) const {
  out.push_back({prefix + ".running_mean", running_mean_});
  out.push_back({prefix + ".running_var", running_var_});
}

Adam::Adam(std::vector<NamedTensor> params, AdamOptions options)
    : params_(std::move(params)), options_(options) {
  for (const NamedTensor& p : params_) {
    m_.push_back(Tensor::zeros(p.tensor.shape()));
    v_.push_back(Tensor::zeros(p.tensor.shape()));
  }
}

void Adam::zero_grad() {
  for (const NamedTensor& p : params_) p.tensor.zero_grad();
}

void Adam::step() {
  ++steps_;
  const double b1 = options_.beta1;
  const double b2 = options_.beta2;
  const double correction1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double correction2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  const double step_size = options_.lr / correction1;
  const float fb1 = static_cast<float>(b1);
  const float fb2 = static_cast<float>(b2);
  const float inv_c2 = static_cast<float>(1.0 / correction2);
  const float fstep = static_cast<float>(step_size);
  const float feps = static_cast<float>(options_.eps);
  for (size_t i = 0; i < params_.size(); ++i) {
    const Tensor g = params_[i].tensor.grad();
    if (!g.defined()) continue;
    float* w = params_[i].tensor.mutable_data();
    float* m = m_[i].mutable_data();
    float* v = v_[i].mutable_data();
    const float* pg = g.data();
    const int64_t n = g.numel();
    for (int64_t k = 0; k < n; ++k) {
      const float gk = pg[k];
      const float mk = fb1 * m[k] + (1.0f - fb1) * gk;
      const float vk = fb2 * v[k] + (1.0f - fb2) * gk * gk;
      m[k] = mk;
      v[k] = vk;
      w[k] -= fstep * mk / (std::sqrt(vk * inv_c2) + feps);
    }
  }
}

std::vector<NamedTensor> Adam::state() const {
  std::vector<NamedTensor> out;
  for (size_t i = 0; i < params_.size(); ++i) {
    out.push_back({"m/" + params_[i].name, m_[i]});
    out.push_back({"v/" + params_[i].name, v_[i]});
  }
  out.push_back({"step", Tensor::from_data({1}, {static_cast<float>(steps_)})});
  return out;
}

void Adam::load_state(const std::vector<NamedTensor>& state) {
  std::unordered_map<std::string, Tensor> by_name;
  for (const NamedTensor& s : state) by_name[s.name] = s.tensor;
  auto fetch = [&](const std::string& name, const Tensor& into) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw IoError("optimizer state missing entry " + name);
    if (it->second.shape() != into.shape()) {
      throw ShapeError(fmt::format("optimizer state {}: {} vs {}", name,
                                   shape_str(it->second.shape()), shape_str(into.shape())));
    }
    into.copy_from(it->second);
  };
  for (size_t i = 0; i < params_.size(); ++i) {
    fetch("m/" + params_[i].name, m_[i]);
    fetch("v/" + params_[i].name, v_[i]);
  }
  auto it = by_name.find("step");
  if (it == by_name.end()) throw IoError("optimizer state missing entry step");
  steps_ = static_cast<int64_t>(it->second.item());
}

double grad_norm(const std::vector<NamedTensor>& params) {
  double total = 0.0;
  for (const NamedTensor& p : params) {
    const Tensor g = p.tensor.grad();
    if (!g.defined()) continue;
    const float* d = g.data();
    const int64_t n = g.numel();
    std::array<double, 8> acc{};
    int64_t k = 0;
    for (; k + 8 <= n; k += 8) {
      for (int j = 0; j < 8; ++j) acc[j] += static_cast<double>(d[k + j]) * d[k + j];
    }
    for (; k < n; ++k) acc[0] += static_cast<double>(d[k]) * d[k];
    for (double a : acc) total += a;
  }
  return std::sqrt(total);
}

double clip_grad_norm(const std::vector<NamedTensor>& params, double max_norm) {
  const double norm = grad_norm(params);
  if (norm > max_norm && norm > 0.0) {
    const float scale = static_cast<float>(max_norm / (norm + 1e-6));
    for (const NamedTensor& p : params) {
      const Tensor g = p.tensor.grad();
      if (!g.defined()) continue;
      for (float& v : g.mutable_values()) v *= scale;
    }
  }
  return norm;
}

}  // namespace lbam::nn
