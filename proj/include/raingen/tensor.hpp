#pragma once

#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "raingen/check.hpp"

namespace raingen::ad {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s);

// Dense 64-bit float array. All training math runs in doubles; 32-bit
// storage exists only in the checkpoint codec.
struct Tensor {
  Shape shape;
  std::vector<double> values;
  bool requires_grad = false;
  std::vector<double> grad;  // empty unless filled by Graph::gradients

  Tensor() = default;
  Tensor(Shape s, std::vector<double> v) : shape(std::move(s)), values(std::move(v)) {
    RG_CHECK(shape_numel(shape) == static_cast<int64_t>(values.size()),
             "tensor shape ", shape_str(shape), " does not match value count ", values.size());
  }

  int64_t numel() const { return static_cast<int64_t>(values.size()); }
  int64_t rank() const { return static_cast<int64_t>(shape.size()); }

  double scalar() const {
    RG_CHECK(values.size() == 1, "expected scalar tensor, got shape ", shape_str(shape));
    return values[0];
  }

  static Tensor zeros(Shape s) {
    int64_t n = shape_numel(s);
    return Tensor(std::move(s), std::vector<double>(static_cast<size_t>(n), 0.0));
  }
  static Tensor full(Shape s, double v) {
    int64_t n = shape_numel(s);
    return Tensor(std::move(s), std::vector<double>(static_cast<size_t>(n), v));
  }
  static Tensor scalar_value(double v) { return Tensor({1}, {v}); }
};

}  // namespace raingen::ad
