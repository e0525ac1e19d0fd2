#pragma once

#include <functional>
#include <optional>
#include <string_view>
#include <vector>

#include "lbam/tensor.hpp"

namespace lbam {

/// Thread-local switch for graph recording.
class GradMode {
 public:
  static bool enabled();
  static void set_enabled(bool value);
};

class NoGradGuard {
 public:
  NoGradGuard() : previous_(GradMode::enabled()) { GradMode::set_enabled(false); }
  ~NoGradGuard() { GradMode::set_enabled(previous_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

class GradModeGuard {
 public:
  explicit GradModeGuard(bool enabled) : previous_(GradMode::enabled()) {
    GradMode::set_enabled(enabled);
  }
  ~GradModeGuard() { GradMode::set_enabled(previous_); }
  GradModeGuard(const GradModeGuard&) = delete;
  GradModeGuard& operator=(const GradModeGuard&) = delete;

 private:
  bool previous_;
};

/// Link from a graph node to one of its inputs: either the producing node or
/// a trainable leaf. Both empty means the input needs no gradient.
struct Edge {
  std::shared_ptr<Node> fn;
  std::shared_ptr<TensorImpl> leaf;
  bool valid() const noexcept { return fn || leaf; }
};

using NeedsGrad = std::vector<bool>;

/// One recorded operation. Backward formulas are written with tensor ops, so
/// when the engine runs with create_graph the gradients are themselves
/// differentiable (required for gradient penalties).
class Node {
 public:
  virtual ~Node() = default;
  virtual std::vector<Tensor> apply(const Tensor& grad_output, const NeedsGrad& needs) = 0;
  virtual std::string_view name() const = 0;
  /// Drops saved tensors once the node has been consumed.
  virtual void release() {}

  std::vector<Edge> next;
};

using BackwardFn = std::function<std::vector<Tensor>(const Tensor&, const NeedsGrad&)>;

/// Attaches a backward closure to `output` when grad mode is on and any input
/// requires a gradient. Returns `output` for chaining.
Tensor record(Tensor output, std::string_view name, const std::vector<Tensor>& inputs,
              BackwardFn backward);

/// True when an op over these inputs would be recorded.
bool should_record(const std::vector<Tensor>& inputs);

struct GradOptions {
  Tensor grad_output;
  bool create_graph = false;
  /// Defaults to create_graph when unset.
  std::optional<bool> retain_graph;
};

/// Gradients of `output` with respect to leaf `inputs`. Inputs that do not
/// influence the output receive zeros.
std::vector<Tensor> grad(const Tensor& output, const std::vector<Tensor>& inputs,
                         const GradOptions& options = {});

}  // namespace lbam
