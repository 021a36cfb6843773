#include "derefl/nn/tensor.hpp"

#include <cmath>

namespace derefl::nn {

namespace {
std::int64_t count(const std::vector<int>& shape) {
  std::int64_t n = 1;
  for (int d : shape) {
    require(d > 0, Errc::invalid_size, "tensor dims must be positive");
    n *= d;
  }
  return n;
}
}  // namespace

Tensor::Tensor(std::vector<int> shape)
    : shape_(std::move(shape)),
      buf_(std::make_shared<std::vector<double>>(static_cast<std::size_t>(count(shape_)), 0.0)) {}

Tensor Tensor::full(std::vector<int> shape, double v) {
  Tensor t(std::move(shape));
  t.fill(v);
  return t;
}

Tensor Tensor::from(std::vector<int> shape, std::vector<double> values) {
  Tensor t;
  t.shape_ = std::move(shape);
  require(count(t.shape_) == static_cast<std::int64_t>(values.size()), Errc::invalid_size,
          "value count does not match shape");
  t.buf_ = std::make_shared<std::vector<double>>(std::move(values));
  return t;
}

std::int64_t Tensor::size() const {
  return buf_ ? static_cast<std::int64_t>(buf_->size()) : 0;
}

Tensor Tensor::clone() const {
  Tensor t;
  t.shape_ = shape_;
  if (buf_) t.buf_ = std::make_shared<std::vector<double>>(*buf_);
  return t;
}

void Tensor::fill(double v) {
  for (double& x : *buf_) x = v;
}

void Tensor::add_scaled(const Tensor& other, double s) {
  require(same_shape(other), Errc::shape_mismatch, "add_scaled shape mismatch");
  double* a = data();
  const double* b = other.data();
  const std::int64_t n = size();
  for (std::int64_t i = 0; i < n; ++i) a[i] += s * b[i];
}

double Tensor::item() const {
  require(size() == 1, Errc::shape_mismatch, "item() on non-scalar tensor");
  return (*buf_)[0];
}

bool Tensor::all_finite() const {
  for (double v : *buf_)
    if (!std::isfinite(v)) return false;
  return true;
}

double Tensor::max_abs() const {
  double m = 0.0;
  for (double v : *buf_) m = std::max(m, std::abs(v));
  return m;
}

}  // namespace derefl::nn
