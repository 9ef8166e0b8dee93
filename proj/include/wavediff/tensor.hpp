#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace wavediff {

using Shape = std::vector<int64_t>;

int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major tensor of 64-bit floats. Values are treated as immutable
/// once handed to the autograd tape; mutation is confined to construction
/// helpers and raw numeric kernels.
class NDTensor {
 public:
  NDTensor() = default;
  explicit NDTensor(Shape shape);
  NDTensor(Shape shape, std::vector<double> data);

  static NDTensor zeros(Shape shape);
  static NDTensor full(Shape shape, double value);
  static NDTensor scalar(double value);
  static NDTensor from(Shape shape, std::initializer_list<double> values);

  const Shape& shape() const { return shape_; }
  int64_t ndim() const { return static_cast<int64_t>(shape_.size()); }
  int64_t dim(int64_t i) const { return shape_[static_cast<size_t>(i)]; }
  int64_t size() const { return static_cast<int64_t>(data_.size()); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  // 4-D accessors (NCHW); bounds unchecked in release builds.
  double& at4(int64_t n, int64_t c, int64_t h, int64_t w) {
    return data_[static_cast<size_t>(((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
  }
  double at4(int64_t n, int64_t c, int64_t h, int64_t w) const {
    return data_[static_cast<size_t>(((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
  }
  double& at2(int64_t i, int64_t j) { return data_[static_cast<size_t>(i * shape_[1] + j)]; }
  double at2(int64_t i, int64_t j) const { return data_[static_cast<size_t>(i * shape_[1] + j)]; }

  NDTensor reshaped(Shape shape) const;

  bool same_shape(const NDTensor& other) const { return shape_ == other.shape_; }

  double item() const;  // requires size() == 1

 private:
  Shape shape_;
  std::vector<double> data_;
};

// Elementwise helpers on raw tensors (no autograd). Shape mismatches throw.
NDTensor add(const NDTensor& a, const NDTensor& b);
NDTensor sub(const NDTensor& a, const NDTensor& b);
NDTensor mul(const NDTensor& a, const NDTensor& b);
NDTensor scale(const NDTensor& a, double s);
NDTensor axpy(double a, const NDTensor& x, const NDTensor& y);  // a*x + y

double max_abs(const NDTensor& a);
double max_abs_diff(const NDTensor& a, const NDTensor& b);
double l2_norm(const NDTensor& a);
double sum(const NDTensor& a);
double mean(const NDTensor& a);
bool all_finite(const NDTensor& a);

}  // namespace wavediff
