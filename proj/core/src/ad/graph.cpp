#include "iqt/ad/graph.hpp"

#include <algorithm>

#include "iqt/error.hpp"

namespace iqt::ad {

Var Graph::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, false, {}});
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Graph::variable(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, true, {}});
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Graph::record(Tensor value, std::initializer_list<Var> parents, BackwardFn fn) {
  return record(std::move(value), std::span<const Var>(parents.begin(), parents.size()), std::move(fn));
}

Var Graph::record(Tensor value, std::span<const Var> parents, BackwardFn fn) {
  const bool needs = std::any_of(parents.begin(), parents.end(), [&](Var p) { return nodes_.at(p.id).requires_grad; });
  nodes_.push_back(Node{std::move(value), {}, needs, needs ? std::move(fn) : BackwardFn{}});
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

std::span<float> Graph::grad_buffer(Var v) {
  Node& n = nodes_.at(v.id);
  if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0f);
  return n.grad;
}

void Graph::backward(Var root) {
  if (value(root).size() != 1) {
    throw ShapeError("backward without a seed requires a scalar root, got shape " + shape_string(shape(root)));
  }
  const float one = 1.0f;
  backward(root, std::span<const float>(&one, 1));
}

void Graph::backward(Var root, std::span<const float> seed) {
  if (seed.size() != value(root).size()) {
    throw ShapeError("backward seed length does not match root size");
  }
  for (auto& n : nodes_) n.grad.clear();
  if (!requires_grad(root)) return;
  auto g = grad_buffer(root);
  std::copy(seed.begin(), seed.end(), g.begin());
  for (std::uint32_t id = root.id + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (n.backward && !n.grad.empty()) n.backward(*this, Var{id});
  }
}

}  // namespace iqt::ad
