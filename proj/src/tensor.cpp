#include "wavediff/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace wavediff {

int64_t numel(const Shape& shape) {
  int64_t n = 1;
  for (int64_t d : shape) {
    if (d < 0) throw std::invalid_argument("negative extent in shape " + shape_str(shape));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

NDTensor::NDTensor(Shape shape) : shape_(std::move(shape)) {
  data_.assign(static_cast<size_t>(numel(shape_)), 0.0);
}

NDTensor::NDTensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (numel(shape_) != static_cast<int64_t>(data_.size())) {
    throw std::invalid_argument("data length " + std::to_string(data_.size()) +
                                " does not match shape " + shape_str(shape_));
  }
}

NDTensor NDTensor::zeros(Shape shape) { return NDTensor(std::move(shape)); }

NDTensor NDTensor::full(Shape shape, double value) {
  NDTensor t(std::move(shape));
  for (auto& v : t.data_) v = value;
  return t;
}

NDTensor NDTensor::scalar(double value) { return NDTensor({1}, {value}); }

NDTensor NDTensor::from(Shape shape, std::initializer_list<double> values) {
  return NDTensor(std::move(shape), std::vector<double>(values));
}

NDTensor NDTensor::reshaped(Shape shape) const {
  if (numel(shape) != size()) {
    throw std::invalid_argument("reshape " + shape_str(shape_) + " -> " + shape_str(shape) +
                                " changes element count");
  }
  return NDTensor(std::move(shape), data_);
}

double NDTensor::item() const {
  if (size() != 1) throw std::logic_error("item() on tensor of size " + std::to_string(size()));
  return data_[0];
}

static void check_same_shape(const NDTensor& a, const NDTensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
  }
}

NDTensor add(const NDTensor& a, const NDTensor& b) {
  check_same_shape(a, b, "add");
  NDTensor out(a.shape());
  for (int64_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

NDTensor sub(const NDTensor& a, const NDTensor& b) {
  check_same_shape(a, b, "sub");
  NDTensor out(a.shape());
  for (int64_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  return out;
}

NDTensor mul(const NDTensor& a, const NDTensor& b) {
  check_same_shape(a, b, "mul");
  NDTensor out(a.shape());
  for (int64_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
  return out;
}

NDTensor scale(const NDTensor& a, double s) {
  NDTensor out(a.shape());
  for (int64_t i = 0; i < a.size(); ++i) out[i] = a[i] * s;
  return out;
}

NDTensor axpy(double a, const NDTensor& x, const NDTensor& y) {
  check_same_shape(x, y, "axpy");
  NDTensor out(x.shape());
  for (int64_t i = 0; i < x.size(); ++i) out[i] = a * x[i] + y[i];
  return out;
}

double max_abs(const NDTensor& a) {
  double m = 0.0;
  for (int64_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i]));
  return m;
}

double max_abs_diff(const NDTensor& a, const NDTensor& b) {
  check_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  for (int64_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

double l2_norm(const NDTensor& a) {
  double s = 0.0;
  for (int64_t i = 0; i < a.size(); ++i) s += a[i] * a[i];
  return std::sqrt(s);
}

double sum(const NDTensor& a) {
  double s = 0.0;
  for (int64_t i = 0; i < a.size(); ++i) s += a[i];
  return s;
}

double mean(const NDTensor& a) {
  if (a.size() == 0) return 0.0;
  return sum(a) / static_cast<double>(a.size());
}

bool all_finite(const NDTensor& a) {
  for (int64_t i = 0; i < a.size(); ++i) {
    if (!std::isfinite(a[i])) return false;
  }
  return true;
}

}  // namespace wavediff
