#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

namespace parsec {

/// Dense row-major tensor of 64-bit floats. Activations are (batch, channels,
/// height, width); weight layouts are op-specific and documented at each op.
struct Tensor {
  std::vector<int> shape;
  Eigen::ArrayXd data;

  Tensor() = default;
  Tensor(std::vector<int> s, Eigen::ArrayXd d);

  static Tensor zeros(std::vector<int> shape);
  static Tensor full(std::vector<int> shape, double value);
  static Tensor of(std::vector<int> shape, std::initializer_list<double> values);

  std::int64_t numel() const { return data.size(); }
  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }
  bool same_shape(const Tensor& other) const { return shape == other.shape; }
  bool all_finite() const { return data.isFinite().all(); }

  // flat offset helpers for the layouts used throughout
  double& at2(int i, int j) { return data[static_cast<Eigen::Index>(i) * dim(1) + j]; }
  double at2(int i, int j) const { return data[static_cast<Eigen::Index>(i) * dim(1) + j]; }
  double& at4(int n, int c, int y, int x) {
    return data[((static_cast<Eigen::Index>(n) * dim(1) + c) * dim(2) + y) * dim(3) + x];
  }
  double at4(int n, int c, int y, int x) const {
    return data[((static_cast<Eigen::Index>(n) * dim(1) + c) * dim(2) + y) * dim(3) + x];
  }
};

std::int64_t shape_numel(const std::vector<int>& shape);
std::string shape_string(const std::vector<int>& shape);

}  // namespace parsec
