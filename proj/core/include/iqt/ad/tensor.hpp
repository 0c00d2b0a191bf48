#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace iqt::ad {

using Shape = std::vector<int>;

std::size_t numel(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major float tensor. Network tensors are [N, C, D, H, W] with W
/// fastest, which matches the x-fastest layout of a Volume channel.
struct Tensor {
  Shape shape;
  std::vector<float> data;

  Tensor() = default;
  explicit Tensor(Shape s, float fill = 0.0f);
  Tensor(Shape s, std::vector<float> values);

  std::size_t size() const { return data.size(); }
  int dim(std::size_t axis) const { return shape.at(axis); }
};

}  // namespace iqt::ad
