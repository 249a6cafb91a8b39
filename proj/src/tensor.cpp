#include "parsec/tensor.hpp"

#include <sstream>
#include <stdexcept>

namespace parsec {

std::int64_t shape_numel(const std::vector<int>& shape) {
  std::int64_t n = 1;
  for (int d : shape) {
    if (d < 0) throw std::invalid_argument("negative dimension in shape " + shape_string(shape));
    n *= d;
  }
  return n;
}

std::string shape_string(const std::vector<int>& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ')';
  return os.str();
}

Tensor::Tensor(std::vector<int> s, Eigen::ArrayXd d) : shape(std::move(s)), data(std::move(d)) {
  if (data.size() != shape_numel(shape)) {
    throw std::invalid_argument("tensor data size " + std::to_string(data.size()) +
                                " does not match shape " + shape_string(shape));
  }
}

Tensor Tensor::zeros(std::vector<int> shape) {
  Eigen::ArrayXd d = Eigen::ArrayXd::Zero(shape_numel(shape));
  return Tensor(std::move(shape), std::move(d));
}

Tensor Tensor::full(std::vector<int> shape, double value) {
  Eigen::ArrayXd d = Eigen::ArrayXd::Constant(shape_numel(shape), value);
  return Tensor(std::move(shape), std::move(d));
}

Tensor Tensor::of(std::vector<int> shape, std::initializer_list<double> values) {
  if (static_cast<std::int64_t>(values.size()) != shape_numel(shape)) {
    throw std::invalid_argument("initializer size " + std::to_string(values.size()) +
                                " does not match shape " + shape_string(shape));
  }
  Eigen::ArrayXd d(static_cast<Eigen::Index>(values.size()));
  Eigen::Index i = 0;
  for (double v : values) d[i++] = v;
  return Tensor(std::move(shape), std::move(d));
}

}  // namespace parsec
