#pragma once

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "knlab/errors.hpp"

namespace knlab {

// Dense row-major tensor of 64-bit floats. Shape is fixed at construction;
// all arithmetic lives in kernels.hpp and graph.cpp.
class Array {
 public:
  Array() = default;

  explicit Array(std::vector<int> shape) : shape_(std::move(shape)) {
    data_.assign(static_cast<size_t>(count_elems(shape_)), 0.0);
  }

  Array(std::vector<int> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (static_cast<size_t>(count_elems(shape_)) != data_.size())
      throw shape_error("Array: data size does not match shape");
  }

  static Array scalar(double v) { return Array({}, {v}); }

  const std::vector<int>& shape() const { return shape_; }
  int ndim() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<size_t>(i)]; }

  int64_t size() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty() && shape_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  // element access for the common 2-d case
  double& at(int r, int c) { return data_[static_cast<size_t>(r) * dim(1) + c]; }
  double at(int r, int c) const { return data_[static_cast<size_t>(r) * dim(1) + c]; }

  double item() const {
    if (data_.size() != 1) throw shape_error("Array::item: not a scalar");
    return data_[0];
  }

  bool same_shape(const Array& o) const { return shape_ == o.shape_; }

  static int64_t count_elems(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) {
      if (d < 0) throw shape_error("Array: negative dimension");
      n *= d;
    }
    return n;
  }

  // rows/cols of a matrix view: leading dims folded into rows, last dim = cols.
  // A vector is a single row; a scalar is 1x1.
  int64_t fold_rows() const {
    if (shape_.empty()) return 1;
    int64_t n = 1;
    for (size_t i = 0; i + 1 < shape_.size(); ++i) n *= shape_[i];
    return n;
  }
  int last_dim() const { return shape_.empty() ? 1 : shape_.back(); }

 private:
  std::vector<int> shape_;
  std::vector<double> data_;
};

std::string shape_str(const std::vector<int>& shape);

}  // namespace knlab
