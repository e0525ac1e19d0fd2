#include "lbam/autograd.hpp"

#include <algorithm>
#include <fmt/format.h>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>

#include "lbam/error.hpp"
#include "lbam/ops.hpp"

namespace lbam {

namespace {

thread_local bool g_grad_enabled = true;

class FunctionNode final : public Node {
 public:
  FunctionNode(std::string_view name, BackwardFn fn) : name_(name), fn_(std::move(fn)) {}

  std::vector<Tensor> apply(const Tensor& grad_output, const NeedsGrad& needs) override {
    if (!fn_) {
      throw Error(fmt::format(
          "backward through '{}' after its saved tensors were released; pass retain_graph",
          name_));
    }
    return (*fn_)(grad_output, needs);
  }
  std::string_view name() const override { return name_; }
  void release() override { fn_.reset(); }

 private:
  std::string name_;
  std::optional<BackwardFn> fn_;
};

Edge edge_of(const Tensor& t) {
  if (!t.defined() || !t.requires_grad()) return {};
  if (t.grad_fn()) return {t.grad_fn(), nullptr};
  return {nullptr, t.impl_ptr()};
}

using LeafSink = std::function<void(const std::shared_ptr<TensorImpl>&, const Tensor&)>;

// Post-order over the nodes reachable from `root` (inputs before consumers).
std::vector<Node*> post_order(Node* root) {
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, child] = stack.back();
    if (child < node->next.size()) {
      Node* next = node->next[child++].fn.get();
      if (next && visited.insert(next).second) stack.emplace_back(next, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

void run_backward(const Tensor& output, const Tensor& grad_output, bool create_graph,
                  bool retain_graph, const std::unordered_set<TensorImpl*>* targets,
                  const LeafSink& sink) {
  GradModeGuard mode(create_graph);
  Tensor root_grad = grad_output.defined() ? grad_output : Tensor::ones(output.shape());
  if (root_grad.shape() != output.shape()) {
    throw ShapeError(fmt::format("grad_output shape {} does not match output {}",
                                 shape_str(root_grad.shape()), shape_str(output.shape())));
  }
  auto is_target = [&](const std::shared_ptr<TensorImpl>& leaf) {
    return leaf && (targets == nullptr || targets->count(leaf.get()) > 0);
  };

  if (!output.grad_fn()) {
    if (output.requires_grad() && is_target(output.impl_ptr())) sink(output.impl_ptr(), root_grad);
    return;
  }

  Node* root = output.grad_fn().get();
  const std::vector<Node*> order = post_order(root);
  std::unordered_map<Node*, bool> needed;
  needed.reserve(order.size());
  for (Node* node : order) {
    bool any = false;
    for (const Edge& e : node->next) {
      if ((e.leaf && is_target(e.leaf)) || (e.fn && needed[e.fn.get()])) {
        any = true;
        break;
      }
    }
    needed[node] = any;
  }

  std::unordered_map<Node*, Tensor> pending;
  pending.emplace(root, root_grad);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    auto found = pending.find(node);
    if (found == pending.end()) continue;
    Tensor g = std::move(found->second);
    pending.erase(found);
    if (!needed[node]) continue;

    NeedsGrad needs(node->next.size(), false);
    for (size_t i = 0; i < node->next.size(); ++i) {
      const Edge& e = node->next[i];
      needs[i] = (e.leaf && is_target(e.leaf)) || (e.fn && needed[e.fn.get()]);
    }
    std::vector<Tensor> grads = node->apply(g, needs);
    if (!retain_graph) node->release();
    if (grads.size() != node->next.size()) {
      throw Error(fmt::format("backward of '{}' returned {} gradients for {} inputs",
                              node->name(), grads.size(), node->next.size()));
    }
    for (size_t i = 0; i < grads.size(); ++i) {
      if (!needs[i] || !grads[i].defined()) continue;
      const Edge& e = node->next[i];
      if (e.fn) {
        Tensor& slot = pending[e.fn.get()];
        slot = slot.defined() ? ops::add(slot, grads[i]) : grads[i];
      } else {
        sink(e.leaf, grads[i]);
      }
    }
  }
}

}  // namespace

bool GradMode::enabled() { return g_grad_enabled; }
void GradMode::set_enabled(bool value) { g_grad_enabled = value; }

bool should_record(const std::vector<Tensor>& inputs) {
  if (!GradMode::enabled()) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor& t) { return t.defined() && t.requires_grad(); });
}

Tensor record(Tensor output, std::string_view name, const std::vector<Tensor>& inputs,
              BackwardFn backward) {
  if (!should_record(inputs)) return output;
  auto node = std::make_shared<FunctionNode>(name, std::move(backward));
  node->next.reserve(inputs.size());
  for (const Tensor& t : inputs) node->next.push_back(edge_of(t));
  output.impl()->requires_grad = true;
  output.impl()->grad_fn = std::move(node);
  return output;
}

std::vector<Tensor> grad(const Tensor& output, const std::vector<Tensor>& inputs,
                         const GradOptions& options) {
  std::unordered_set<TensorImpl*> targets;
  for (const Tensor& t : inputs) {
    if (!t.is_leaf()) throw Error("grad(): inputs must be leaf tensors");
    targets.insert(t.impl());
  }
  std::unordered_map<TensorImpl*, Tensor> results;
  const bool retain = options.retain_graph.value_or(options.create_graph);
  if (output.requires_grad()) {
    run_backward(output, options.grad_output, options.create_graph, retain, &targets,
                 [&](const std::shared_ptr<TensorImpl>& leaf, const Tensor& g) {
                   Tensor& slot = results[leaf.get()];
                   slot = slot.defined() ? ops::add(slot, g) : g;
                 });
  }
  std::vector<Tensor> out;
  out.reserve(inputs.size());
  for (const Tensor& t : inputs) {
    auto it = results.find(t.impl());
    out.push_back(it != results.end() ? it->second : Tensor::zeros(t.shape()));
  }
  return out;
}

void Tensor::backward(const Tensor& grad_output, bool retain_graph) const {
  if (!requires_grad()) throw Error("backward() on a tensor that does not require grad");
  run_backward(*this, grad_output, /*create_graph=*/false, retain_graph, nullptr,
               [](const std::shared_ptr<TensorImpl>& leaf, const Tensor& g) {
                 NoGradGuard no_grad;
                 Tensor detached = g.detach();
                 if (leaf->grad) {
                   Tensor acc = ops::add(Tensor(leaf->grad), detached);
                   leaf->grad = acc.impl_ptr();
                 } else {
                   leaf->grad = detached.clone().impl_ptr();
                 }
               });
}

}  // namespace lbam
