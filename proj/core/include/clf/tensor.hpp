#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "clf/errors.hpp"

namespace clf {

// Dense row-major tensor of doubles. Rank is 1 (vector) or 2 (matrix)
// everywhere in this codebase; scalars are shape {1}.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::vector<int> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {}

  static Tensor zeros(std::vector<int> shape) {
    int64_t n = 1;
    for (int d : shape) n *= d;
    return Tensor(std::move(shape), std::vector<double>(static_cast<size_t>(n), 0.0));
  }
  static Tensor scalar(double v) { return Tensor({1}, {v}); }
  static Tensor row_vector(std::vector<double> v) {
    int n = static_cast<int>(v.size());
    return Tensor({n}, std::move(v));
  }

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  bool is_vector() const { return shape.size() == 1; }
  bool is_matrix() const { return shape.size() == 2; }
  bool is_scalar() const { return numel() == 1; }
  int rows() const { return shape.empty() ? 0 : shape[0]; }
  int cols() const { return shape.size() < 2 ? 1 : shape[1]; }

  double& at(int r, int c) { return data[static_cast<size_t>(r) * cols() + c]; }
  double at(int r, int c) const { return data[static_cast<size_t>(r) * cols() + c]; }

  bool same_shape(const Tensor& other) const { return shape == other.shape; }

  std::string shape_string() const {
    std::string s = "[";
    for (size_t i = 0; i < shape.size(); ++i) {
      if (i) s += "x";
      s += std::to_string(shape[i]);
    }
    return s + "]";
  }
};

}  // namespace clf
