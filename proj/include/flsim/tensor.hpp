#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "flsim/errors.hpp"

namespace flsim {

// Row-major dense array of doubles. Shapes are small (rank <= 3 in practice).
class DenseArray {
 public:
  DenseArray() = default;

  explicit DenseArray(std::vector<std::size_t> shape);
  DenseArray(std::vector<std::size_t> shape, std::vector<double> data);

  static DenseArray zeros(std::vector<std::size_t> shape) { return DenseArray(std::move(shape)); }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& raw() { return data_; }
  const std::vector<double>& raw() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // 2-D / 3-D accessors; no bounds checks in the hot path.
  double& at2(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  double at2(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
  double& at3(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  double at3(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }

  bool same_shape(const DenseArray& other) const { return shape_ == other.shape_; }

  bool all_finite() const;

  // Throws NumericError naming `what` if any entry is NaN/Inf.
  void require_finite(const char* what) const;

  static std::size_t shape_product(const std::vector<std::size_t>& shape);
  static std::string shape_string(const std::vector<std::size_t>& shape);

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

}  // namespace flsim
