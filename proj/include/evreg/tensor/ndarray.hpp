#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace evreg {

/// Base error type for every module in the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major array of doubles. The shape is fixed at construction;
/// only the values may change.
class NdArray {
 public:
  NdArray() = default;
  explicit NdArray(Shape shape, double fill = 0.0);
  NdArray(Shape shape, std::vector<double> values);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }
  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  const std::vector<double>& vec() const noexcept { return data_; }

  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }

  template <class... I>
  double& operator()(I... idx) {
    return data_[offset({static_cast<std::size_t>(idx)...})];
  }
  template <class... I>
  double operator()(I... idx) const {
    return data_[offset({static_cast<std::size_t>(idx)...})];
  }

  std::size_t offset(std::initializer_list<std::size_t> idx) const;

  /// Same values viewed under a new shape with equal element count.
  NdArray reshaped(Shape shape) const;

  bool all_finite() const noexcept;
  void fill(double v) noexcept;

  NdArray& operator+=(const NdArray& other);
  NdArray& operator*=(double s) noexcept;

 private:
  Shape shape_;
  std::vector<double> data_;
};

double max_abs_diff(const NdArray& a, const NdArray& b);
double sum(const NdArray& a);
double l2_norm(const NdArray& a);

/// Pair of same-shaped arrays holding the real and imaginary parts of a
/// spectrum.
struct ComplexPair {
  NdArray real;
  NdArray imag;

  ComplexPair() = default;
  ComplexPair(NdArray re, NdArray im);
  const Shape& shape() const noexcept { return real.shape(); }
};

}  // namespace evreg
