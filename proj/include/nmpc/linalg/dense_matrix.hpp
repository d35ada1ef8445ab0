#pragma once

#include <cassert>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

#include "nmpc/common/error.hpp"

namespace nmpc::linalg {

using Vec = std::vector<double>;

// Dense row-major matrix of doubles. All solver-side matrices live in this
// type; kernels write into caller-provided instances so the hot path can run
// allocation-free once shapes are fixed.
class DenseMatrix {
 public:
  DenseMatrix() = default;
  DenseMatrix(int rows, int cols) : rows_(rows), cols_(cols), data_(size_t(rows) * cols, 0.0) {
    assert(rows >= 0 && cols >= 0);
  }
  DenseMatrix(int rows, int cols, std::initializer_list<double> values)
      : DenseMatrix(rows, cols) {
    assert(static_cast<int>(values.size()) == rows * cols);
    size_t i = 0;
    for (double v : values) data_[i++] = v;
  }

  static DenseMatrix identity(int n) {
    DenseMatrix m(n, n);
    for (int i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  bool empty() const { return rows_ == 0 || cols_ == 0; }

  double& operator()(int i, int j) {
    assert(i >= 0 && i < rows_ && j >= 0 && j < cols_);
    return data_[size_t(i) * cols_ + j];
  }
  double operator()(int i, int j) const {
    assert(i >= 0 && i < rows_ && j >= 0 && j < cols_);
    return data_[size_t(i) * cols_ + j];
  }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> row(int i) { return {data_.data() + size_t(i) * cols_, size_t(cols_)}; }
  std::span<const double> row(int i) const {
    return {data_.data() + size_t(i) * cols_, size_t(cols_)};
  }

  void resize(int rows, int cols) {
    rows_ = rows;
    cols_ = cols;
    data_.assign(size_t(rows) * cols, 0.0);
  }
  void set_zero() { std::fill(data_.begin(), data_.end(), 0.0); }

  bool same_shape(const DenseMatrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<double> data_;
};

inline DenseMatrix transpose(const DenseMatrix& a) {
  DenseMatrix t(a.cols(), a.rows());
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

}  // namespace nmpc::linalg
