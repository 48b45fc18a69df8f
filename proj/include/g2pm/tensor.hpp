#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace g2pm::nn {

using Real = double;
using Shape = std::vector<std::size_t>;

std::string to_string(const Shape& shape);
std::size_t shape_size(const Shape& shape);

// Dense row-major array. Rank 0 is a scalar, rank 1 a row vector; every other
// rank is viewed as shape[0] rows by the product of the remaining dims.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, Real fill = 0.0);
  Tensor(Shape shape, std::vector<Real> data);

  static Tensor scalar(Real v) { return Tensor(Shape{}, std::vector<Real>{v}); }
  static Tensor matrix(std::size_t rows, std::size_t cols, Real fill = 0.0) {
    return Tensor(Shape{rows, cols}, fill);
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty() && shape_.empty(); }
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<Real> data() { return data_; }
  std::span<const Real> data() const { return data_; }
  Real* ptr() { return data_.data(); }
  const Real* ptr() const { return data_.data(); }
  std::vector<Real>& storage() { return data_; }

  Real& operator[](std::size_t i) { return data_[i]; }
  Real operator[](std::size_t i) const { return data_[i]; }
  Real& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  Real operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  std::span<Real> row(std::size_t r) { return data().subspan(r * cols(), cols()); }
  std::span<const Real> row(std::size_t r) const { return data().subspan(r * cols(), cols()); }

  // Value of a one-element tensor.
  Real item() const;
  void fill(Real v);
  bool all_finite() const;

  bool operator==(const Tensor&) const = default;

 private:
  Shape shape_;
  std::vector<Real> data_;
};

}  // namespace g2pm::nn
