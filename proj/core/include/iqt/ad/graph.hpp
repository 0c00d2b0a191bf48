#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

#include "iqt/ad/tensor.hpp"

namespace iqt::ad {

/// Handle to a node in a Graph.
struct Var {
  std::uint32_t id = UINT32_MAX;
  bool valid() const { return id != UINT32_MAX; }
};

/// Reverse-mode tape. Nodes are appended in evaluation order, so reverse id
/// order is a topological order for backpropagation. A graph is used by one
/// worker at a time.
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, Var self)>;

  Var constant(Tensor value);
  Var variable(Tensor value);

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  const Shape& shape(Var v) const { return value(v).shape; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }

  /// Gradient accumulated by the last backward pass; empty when the node
  /// received none.
  std::span<const float> grad(Var v) const { return nodes_.at(v.id).grad; }

  /// Backpropagates from a scalar root with seed 1.
  void backward(Var root);
  /// Backpropagates an arbitrary upstream gradient (vector-Jacobian product).
  void backward(Var root, std::span<const float> seed);

  std::size_t size() const { return nodes_.size(); }

  /// Records an op output. `fn` may read parent values and must accumulate
  /// into parent gradients through grad_buffer().
  Var record(Tensor value, std::initializer_list<Var> parents, BackwardFn fn);
  Var record(Tensor value, std::span<const Var> parents, BackwardFn fn);

  /// Mutable gradient of `v`, zero-allocated on first use.
  std::span<float> grad_buffer(Var v);

 private:
  struct Node {
    Tensor value;
    std::vector<float> grad;
    bool requires_grad = false;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
};

/// 3D cross-correlation with zero padding k/2 (same-size output). Kernel is
/// [C_out, C_in, k, k, k] with odd k; bias is [C_out].
Var conv3d(Graph& g, Var input, Var kernel, Var bias);

Var relu(Graph& g, Var input);

/// 2x2x2 non-overlapping max pooling; ties route gradient to the first
/// maximum in z, y, x scan order.
Var maxpool2(Graph& g, Var input);

/// Doubles every spatial dim using trilinear interpolation with half-pixel
/// (align-corners=false) sampling and edge clamping.
Var upsample2_trilinear(Graph& g, Var input);

/// Elementwise (a + b) / 2.
Var average_fuse(Graph& g, Var a, Var b);

/// Concatenates along the channel axis in argument order.
Var concat_channels(Graph& g, std::span<const Var> parts);
Var concat_channels(Graph& g, std::initializer_list<Var> parts);

/// Mean absolute error against a constant target; subgradient 0 at ties.
Var l1_loss(Graph& g, Var pred, const Tensor& target);

}  // namespace iqt::ad
