#include "evreg/tensor/ndarray.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

namespace evreg {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

NdArray::NdArray(Shape shape, double fill)
    : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

NdArray::NdArray(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
  if (shape_size(shape_) != data_.size()) {
    throw Error("NdArray: shape " + shape_str(shape_) + " does not match " +
                std::to_string(data_.size()) + " values");
  }
}

std::size_t NdArray::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw Error("NdArray: axis " + std::to_string(axis) + " out of range for " +
                shape_str(shape_));
  }
  return shape_[axis];
}

std::size_t NdArray::offset(std::initializer_list<std::size_t> idx) const {
  if (idx.size() != shape_.size()) {
    throw Error("NdArray: index rank mismatch for " + shape_str(shape_));
  }
  std::size_t off = 0;
  std::size_t axis = 0;
  for (std::size_t i : idx) {
    if (i >= shape_[axis]) {
      throw Error("NdArray: index out of bounds for " + shape_str(shape_));
    }
    off = off * shape_[axis] + i;
    ++axis;
  }
  return off;
}

NdArray NdArray::reshaped(Shape shape) const {
  if (shape_size(shape) != data_.size()) {
    throw Error("NdArray: cannot reshape " + shape_str(shape_) + " to " +
                shape_str(shape));
  }
  return NdArray(std::move(shape), data_);
}

bool NdArray::all_finite() const noexcept {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void NdArray::fill(double v) noexcept { std::fill(data_.begin(), data_.end(), v); }

NdArray& NdArray::operator+=(const NdArray& other) {
  if (other.shape_ != shape_) {
    throw Error("NdArray: += shape mismatch " + shape_str(shape_) + " vs " +
                shape_str(other.shape_));
  }
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

NdArray& NdArray::operator*=(double s) noexcept {
  for (double& v : data_) v *= s;
  return *this;
}

double max_abs_diff(const NdArray& a, const NdArray& b) {
  if (a.shape() != b.shape()) {
    throw Error("max_abs_diff: shape mismatch " + shape_str(a.shape()) + " vs " +
                shape_str(b.shape()));
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double sum(const NdArray& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  return s;
}

double l2_norm(const NdArray& a) {
  double s = 0.0;
  for (double v : a.values()) s += v * v;
  return std::sqrt(s);
}

ComplexPair::ComplexPair(NdArray re, NdArray im)
    : real(std::move(re)), imag(std::move(im)) {
  if (real.shape() != imag.shape()) {
    throw Error("ComplexPair: real " + shape_str(real.shape()) +
                " and imag " + shape_str(imag.shape()) + " differ");
  }
}

}  // namespace evreg
