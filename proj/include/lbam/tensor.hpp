#pragma once

// Dense float tensors with reverse-mode automatic differentiation.
//
// Every tensor is contiguous, row-major (NCHW for images). A Tensor is a
// shallow handle: copies share storage and autograd metadata. Operations
// live in ops.hpp; the backward engine lives in autograd.hpp.

#include <cstdint>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace lbam {

using Shape = std::vector<int64_t>;

int64_t numel_of(const Shape& shape);
std::string shape_str(const Shape& shape);

class Node;

struct TensorImpl {
  Shape shape;
  std::shared_ptr<std::vector<float>> storage;
  bool requires_grad = false;
  std::shared_ptr<Node> grad_fn;
  std::shared_ptr<TensorImpl> grad;
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

  static Tensor empty(Shape shape);
  static Tensor zeros(Shape shape);
  static Tensor ones(Shape shape);
  static Tensor full(Shape shape, float value);
  static Tensor scalar(float value);
  static Tensor from_data(Shape shape, std::vector<float> values);

  bool defined() const noexcept { return impl_ != nullptr; }
  const Shape& shape() const;
  int64_t dim() const { return static_cast<int64_t>(shape().size()); }
  /// Size of dimension d; negative d counts from the back.
  int64_t size(int64_t d) const;
  int64_t numel() const;

  const float* data() const;
  float* mutable_data() const;
  std::span<const float> values() const { return {data(), static_cast<size_t>(numel())}; }
  std::span<float> mutable_values() const {
    return {mutable_data(), static_cast<size_t>(numel())};
  }
  float item() const;
  float at(std::initializer_list<int64_t> index) const;

  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  /// Marks a leaf as trainable. Throws on non-leaf tensors.
  Tensor& set_requires_grad(bool value = true);
  const std::shared_ptr<Node>& grad_fn() const;
  bool is_leaf() const { return !grad_fn(); }

  /// Accumulated gradient of a leaf (undefined when none was accumulated).
  Tensor grad() const;
  void zero_grad() const;

  /// Same storage, cut from the graph.
  Tensor detach() const;
  /// Deep copy, cut from the graph.
  Tensor clone() const;
  /// Overwrites the values in place from another tensor of equal numel.
  void copy_from(const Tensor& other) const;
  void fill(float value) const;

  /// Reverse-mode pass from this tensor into the .grad of every leaf.
  void backward(const Tensor& grad_output = {}, bool retain_graph = false) const;

  TensorImpl* impl() const noexcept { return impl_.get(); }
  const std::shared_ptr<TensorImpl>& impl_ptr() const noexcept { return impl_; }
  bool same(const Tensor& other) const noexcept { return impl_ == other.impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

}  // namespace lbam
