#pragma once

// Minimal tape-free reverse-mode differentiation. Every op returns a Var that
// owns its parents; calling backward() on a scalar walks the graph in reverse
// topological order and accumulates gradients into every node that requires
// them. Parameters are leaf Vars with requires_grad set.

#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "slarda/tensor.hpp"

namespace slarda {

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<Var> parents;
  std::function<void(Node&)> backward_fn;

  explicit Node(Tensor v, bool rg = false) : value(std::move(v)), requires_grad(rg) {}

  const Shape& shape() const { return value.shape; }

  Tensor& grad_buffer() {
    if (grad.shape != value.shape || grad.size() != value.size()) grad = Tensor(value.shape);
    return grad;
  }

  bool has_grad() const { return grad.shape == value.shape && grad.size() == value.size(); }

  void zero_grad() {
    if (has_grad()) grad.fill(0.0);
  }
};

inline Var constant(Tensor t) { return std::make_shared<Node>(std::move(t), false); }
inline Var parameter(Tensor t) { return std::make_shared<Node>(std::move(t), true); }

/// Same value, cut from the graph.
inline Var detach(const Var& v) { return constant(v->value); }

inline Var make_result(Tensor value, std::vector<Var> parents, std::function<void(Node&)> fn) {
  bool rg = false;
  for (const auto& p : parents) rg = rg || p->requires_grad;
  auto out = std::make_shared<Node>(std::move(value), rg);
  if (rg) {
    out->parents = std::move(parents);
    out->backward_fn = std::move(fn);
  }
  return out;
}

/// Reverse-mode sweep from a scalar root.
inline void backward(const Var& root) {
  if (root->value.size() != 1) throw ShapeError("backward() requires a scalar root");
  if (!root->requires_grad) return;

  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  // Iterative post-order DFS.
  std::vector<std::pair<Node*, std::size_t>> stack{{root.get(), 0}};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->grad_buffer().data[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && n->has_grad()) n->backward_fn(*n);
  }
  // Intermediate gradients are not needed after the sweep.
  for (Node* n : order)
    if (!n->parents.empty()) n->grad = Tensor();
}

}  // namespace slarda
