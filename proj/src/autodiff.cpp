#include "agtcnet/autodiff.hpp"

#include <unordered_set>

#include "agtcnet/error.hpp"

namespace agtcnet::nn {

Tensor& Node::grad_buffer() {
  if (grad.empty() && !value.empty()) grad = Tensor(value.shape(), 0.0);
  return grad;
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

void Var::zero_grad() {
  if (node_ && !node_->grad.empty()) node_->grad.fill(0.0);
}

Var Var::make(Tensor value, std::vector<Var> parents, std::function<void(Node&)> fn) {
  Var out(std::move(value), false);
  for (const auto& p : parents) {
    if (p.requires_grad()) out.node_->requires_grad = true;
  }
  if (out.node_->requires_grad) {
    out.node_->parents.reserve(parents.size());
    for (auto& p : parents) out.node_->parents.push_back(p.node_);
    out.node_->backward = std::move(fn);
  }
  return out;
}

namespace {

void topo_order(const std::shared_ptr<Node>& root, std::vector<Node*>& order) {
  // Iterative post-order DFS; deep tapes would overflow the call stack.
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.get(), 0);
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
}

}  // namespace

void backward(const Var& root, const Tensor& seed) {
  if (!root.defined()) throw InvalidArgument("backward on undefined variable");
  if (seed.shape() != root.shape()) throw ShapeError("backward seed shape mismatch");
  if (!root.requires_grad()) return;
  std::vector<Node*> order;
  topo_order(root.node(), order);
  Tensor& g = root.node()->grad_buffer();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += seed[i];
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

void backward(const Var& root) {
  if (root.value().size() != 1) throw ShapeError("backward without seed needs a scalar root");
  backward(root, Tensor(root.shape(), 1.0));
}

}  // namespace agtcnet::nn
