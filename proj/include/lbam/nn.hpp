#pragma once

#include <string>
#include <vector>

#include "lbam/random.hpp"
#include "lbam/tensor.hpp"

namespace lbam::nn {

/// Trainable leaf drawn from N(0, std).
Tensor normal_parameter(const Shape& shape, Rng& rng, double stddev);
/// Trainable leaf filled with `value`.
Tensor constant_parameter(const Shape& shape, float value);

class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  explicit BatchNorm2d(int64_t channels, double eps = 1e-5, double momentum = 0.1);

  /// Batch statistics (and running-average update) when training, running
  /// averages otherwise. Inference never mutates state.
  Tensor forward(const Tensor& x, bool training) const;

  int64_t channels() const { return gamma_.defined() ? gamma_.numel() : 0; }
  void collect_parameters(const std::string& prefix, std::vector<NamedTensor>& out) const;
  void collect_buffers(const std::string& prefix, std::vector<NamedTensor>& out) const;

 private:
  Tensor gamma_;
  Tensor beta_;
  Tensor running_mean_;
  Tensor running_var_;
  double eps_ = 1e-5;
  double momentum_ = 0.1;
};

struct AdamOptions {
  double lr = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  Adam() = default;
  Adam(std::vector<NamedTensor> params, AdamOptions options);

  void zero_grad();
  /// Parameters without an accumulated gradient are skipped.
  void step();

  int64_t steps() const { return steps_; }
  const std::vector<NamedTensor>& parameters() const { return params_; }

  /// Moment estimates as "m/<name>" and "v/<name>" plus a one-element "step".
  std::vector<NamedTensor> state() const;
  void load_state(const std::vector<NamedTensor>& state);

 private:
  std::vector<NamedTensor> params_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  AdamOptions options_;
  int64_t steps_ = 0;
};

/// Global L2 norm of all gradients.
double grad_norm(const std::vector<NamedTensor>& params);
/// Rescales gradients in place so the global norm is at most max_norm.
/// Returns the norm before clipping.
double clip_grad_norm(const std::vector<NamedTensor>& params, double max_norm);

}  // namespace lbam::nn
