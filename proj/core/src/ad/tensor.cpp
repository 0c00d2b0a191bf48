#include "iqt/ad/tensor.hpp"

#include <sstream>

#include "iqt/error.hpp"

namespace iqt::ad {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw ShapeError("tensor dims must be positive, got " + shape_string(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

Tensor::Tensor(Shape s, float fill) : shape(std::move(s)), data(numel(shape), fill) {}

Tensor::Tensor(Shape s, std::vector<float> values) : shape(std::move(s)), data(std::move(values)) {
  if (data.size() != numel(shape)) {
    throw ShapeError("tensor data length " + std::to_string(data.size()) + " does not match shape " + shape_string(shape));
  }
}

}  // namespace iqt::ad
