#include "flsim/tensor.hpp"

#include <cmath>
#include <sstream>

namespace flsim {

std::size_t DenseArray::shape_product(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string DenseArray::shape_string(const std::vector<std::size_t>& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

DenseArray::DenseArray(std::vector<std::size_t> shape)
    : shape_(std::move(shape)), data_(shape_product(shape_), 0.0) {}

DenseArray::DenseArray(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_product(shape_) != data_.size()) {
    throw DimensionError("DenseArray: shape " + shape_string(shape_) + " does not match buffer of " +
                         std::to_string(data_.size()) + " scalars");
  }
}

bool DenseArray::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void DenseArray::require_finite(const char* what) const {
  if (!all_finite()) {
    throw NumericError(std::string(what) + ": non-finite value encountered");
  }
}

}  // namespace flsim
