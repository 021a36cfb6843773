#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "derefl/error.hpp"

namespace derefl::nn {

// Dense double tensor with shared storage. Values built by graph ops are
// never mutated after creation; clone() before in-place updates.
class Tensor {
public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape);

  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }
  static Tensor full(std::vector<int> shape, double v);
  static Tensor scalar(double v) { return full({1}, v); }
  static Tensor from(std::vector<int> shape, std::vector<double> values);

  const std::vector<int>& shape() const { return shape_; }
  int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  int ndim() const { return static_cast<int>(shape_.size()); }
  std::int64_t size() const;
  bool defined() const { return static_cast<bool>(buf_); }
  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  double* data() { return buf_->data(); }
  const double* data() const { return buf_->data(); }
  double& operator[](std::int64_t i) { return (*buf_)[static_cast<std::size_t>(i)]; }
  double operator[](std::int64_t i) const { return (*buf_)[static_cast<std::size_t>(i)]; }

  Tensor clone() const;
  void fill(double v);
  void add_scaled(const Tensor& other, double s);  // this += s * other
  double item() const;                             // requires size() == 1
  bool all_finite() const;
  double max_abs() const;

private:
  std::vector<int> shape_;
  std::shared_ptr<std::vector<double>> buf_;
};

}  // namespace derefl::nn
