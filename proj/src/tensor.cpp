#include "lbam/tensor.hpp"

#include <algorithm>
#include <fmt/format.h>

#include "lbam/autograd.hpp"
#include "lbam/error.hpp"
#include "lbam/ops.hpp"
#include "lbam/random.hpp"

namespace lbam {

int64_t numel_of(const Shape& shape) {
  int64_t n = 1;
  for (int64_t d : shape) {
    if (d < 0) throw ShapeError("negative dimension in shape " + shape_str(shape));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& shape) { return fmt::format("[{}]", fmt::join(shape, "x")); }

Tensor Tensor::empty(Shape shape) {
  auto impl = std::make_shared<TensorImpl>();
  const int64_t n = numel_of(shape);
  impl->shape = std::move(shape);
  impl->storage = std::make_shared<std::vector<float>>(static_cast<size_t>(n));
  return Tensor(std::move(impl));
}

Tensor Tensor::zeros(Shape shape) { return empty(std::move(shape)); }

Tensor Tensor::ones(Shape shape) { return full(std::move(shape), 1.0f); }

Tensor Tensor::full(Shape shape, float value) {
  Tensor t = empty(std::move(shape));
  std::fill(t.impl_->storage->begin(), t.impl_->storage->end(), value);
  return t;
}

Tensor Tensor::scalar(float value) { return full({}, value); }

Tensor Tensor::from_data(Shape shape, std::vector<float> values) {
  if (numel_of(shape) != static_cast<int64_t>(values.size())) {
    throw ShapeError(fmt::format("from_data: {} values for shape {}", values.size(),
                                 shape_str(shape)));
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->storage = std::make_shared<std::vector<float>>(std::move(values));
  return Tensor(std::move(impl));
}

const Shape& Tensor::shape() const {
  if (!impl_) throw Error("use of undefined tensor");
  return impl_->shape;
}

int64_t Tensor::size(int64_t d) const {
  const int64_t r = dim();
  if (d < 0) d += r;
  if (d < 0 || d >= r) throw ShapeError(fmt::format("dimension {} out of range for rank {}", d, r));
  return shape()[static_cast<size_t>(d)];
}

int64_t Tensor::numel() const { return static_cast<int64_t>(impl_ ? impl_->storage->size() : 0); }

const float* Tensor::data() const {
  if (!impl_) throw Error("use of undefined tensor");
  return impl_->storage->data();
}

float* Tensor::mutable_data() const {
  if (!impl_) throw Error("use of undefined tensor");
  return impl_->storage->data();
}

float Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return data()[0];
}

float Tensor::at(std::initializer_list<int64_t> index) const {
  const Shape& s = shape();
  if (index.size() != s.size()) throw ShapeError("at(): index rank mismatch");
  int64_t offset = 0;
  size_t d = 0;
  for (int64_t i : index) {
    if (i < 0 || i >= s[d]) throw ShapeError("at(): index out of range");
    offset = offset * s[d] + i;
    ++d;
  }
  return data()[offset];
}

Tensor& Tensor::set_requires_grad(bool value) {
  if (!impl_) throw Error("use of undefined tensor");
  if (impl_->grad_fn) throw Error("set_requires_grad on a non-leaf tensor");
  impl_->requires_grad = value;
  return *this;
}

const std::shared_ptr<Node>& Tensor::grad_fn() const {
  static const std::shared_ptr<Node> none;
  return impl_ ? impl_->grad_fn : none;
}

Tensor Tensor::grad() const { return impl_ && impl_->grad ? Tensor(impl_->grad) : Tensor(); }

void Tensor::zero_grad() const {
  if (impl_) impl_->grad.reset();
}

Tensor Tensor::detach() const {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = shape();
  impl->storage = impl_->storage;
  return Tensor(std::move(impl));
}

Tensor Tensor::clone() const {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = shape();
  impl->storage = std::make_shared<std::vector<float>>(*impl_->storage);
  return Tensor(std::move(impl));
}

void Tensor::copy_from(const Tensor& other) const {
  if (numel() != other.numel()) {
    throw ShapeError(fmt::format("copy_from: {} into {}", shape_str(other.shape()),
                                 shape_str(shape())));
  }
  std::copy(other.data(), other.data() + other.numel(), mutable_data());
}

void Tensor::fill(float value) const {
  std::fill(impl_->storage->begin(), impl_->storage->end(), value);
}

Tensor randn(const Shape& shape, Rng& rng, double mean, double stddev) {
  Tensor t = Tensor::empty(shape);
  for (float& v : t.mutable_values()) v = static_cast<float>(rng.normal(mean, stddev));
  return t;
}

Tensor rand_uniform(const Shape& shape, Rng& rng, double lo, double hi) {
  Tensor t = Tensor::empty(shape);
  for (float& v : t.mutable_values()) v = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

Tensor rand_binary(const Shape& shape, Rng& rng, double p_one) {
  Tensor t = Tensor::empty(shape);
  for (float& v : t.mutable_values()) v = rng.bernoulli(p_one) ? 1.0f : 0.0f;
  return t;
}

}  // namespace lbam
