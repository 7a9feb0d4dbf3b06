#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "agtcnet/tensor.hpp"

namespace agtcnet::nn {

// One vertex of the reverse-mode tape. `backward` reads `grad` and
// accumulates into the parents' gradients.
struct Node {
  Tensor value;
  Tensor grad;  // allocated lazily, same shape as value
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  Tensor& grad_buffer();
};

// Handle to a tape node. Copies share the node.
class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);

  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t dim(std::size_t axis) const { return node_->value.dim(axis); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool has_grad() const { return node_ && !node_->grad.empty(); }
  Tensor& grad() { return node_->grad_buffer(); }
  void zero_grad();
  bool defined() const { return node_ != nullptr; }

  const std::shared_ptr<Node>& node() const { return node_; }

  // Builds a non-leaf node. The node requires grad if any parent does; in
  // that case `fn` is kept for the backward sweep.
  static Var make(Tensor value, std::vector<Var> parents, std::function<void(Node&)> fn);

 private:
  std::shared_ptr<Node> node_;
};

// Runs the backward sweep from a scalar root (seed gradient 1) or with an
// explicit seed of the root's shape.
void backward(const Var& root);
void backward(const Var& root, const Tensor& seed);

}  // namespace agtcnet::nn
