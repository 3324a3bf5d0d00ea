#ifndef CURVEWALK_TENSOR_HPP_
#define CURVEWALK_TENSOR_HPP_

#include <cstdint>
#include <numeric>
#include <vector>

#include "curvewalk/check.hpp"

namespace curvewalk {

// Dense row-major tensor of doubles. Recorded ops treat every tensor as
// rank 2 (scalars are 1x1); higher-rank data such as stacked curve features
// keep their extra extents as external bookkeeping.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    data_.assign(static_cast<size_t>(count(shape_)), 0.0);
  }

  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

  static Tensor full(std::vector<int> shape, double v) {
    Tensor t(std::move(shape));
    for (auto& x : t.data_) x = v;
    return t;
  }

  static Tensor from(std::vector<int> shape, std::vector<double> data) {
    Tensor t;
    t.shape_ = std::move(shape);
    CW_CHECK(static_cast<int64_t>(data.size()) == count(t.shape_),
             "element count does not match shape");
    t.data_ = std::move(data);
    return t;
  }

  static Tensor scalar(double v) { return from({1, 1}, {v}); }

  static Tensor identity(int n) {
    Tensor t({n, n});
    for (int i = 0; i < n; ++i) t.at(i, i) = 1.0;
    return t;
  }

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  int rows() const { return shape_.empty() ? 0 : shape_[0]; }
  int cols() const {
    CW_CHECK(rank() == 2, "cols() requires a rank-2 tensor");
    return shape_[1];
  }
  int64_t size() const { return count(shape_); }
  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }
  double& at(int r, int c) {
    return data_[static_cast<size_t>(r) * shape_[1] + c];
  }
  double at(int r, int c) const {
    return data_[static_cast<size_t>(r) * shape_[1] + c];
  }

  static int64_t count(const std::vector<int>& shape) {
    int64_t n = shape.empty() ? 0 : 1;
    for (int d : shape) {
      CW_CHECK(d > 0, "extents must be positive");
      n *= d;
    }
    return n;
  }

 private:
  std::vector<int> shape_;
  std::vector<double> data_;
};

}  // namespace curvewalk

#endif  // CURVEWALK_TENSOR_HPP_
