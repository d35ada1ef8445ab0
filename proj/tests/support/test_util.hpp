#pragma once

#include <random>

#include "nmpc/linalg/kernels.hpp"

namespace test_util {

using nmpc::linalg::DenseMatrix;
using nmpc::linalg::Vec;

inline DenseMatrix random_matrix(std::mt19937_64& rng, int rows, int cols, double scale = 1.0) {
  std::uniform_real_distribution<double> dist(-scale, scale);
  DenseMatrix m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = dist(rng);
  return m;
}

inline DenseMatrix random_symmetric(std::mt19937_64& rng, int n, double scale = 1.0) {
  DenseMatrix m = random_matrix(rng, n, n, scale);
  nmpc::linalg::symmetrize(m);
  return m;
}

// B * B^T + delta * I, positive definite for delta > 0.
inline DenseMatrix random_spd(std::mt19937_64& rng, int n, double delta = 1e-6) {
  DenseMatrix b = random_matrix(rng, n, n);
  DenseMatrix a(n, n);
  nmpc::linalg::gemm(1.0, b, nmpc::linalg::Trans::No, b, nmpc::linalg::Trans::Yes, 0.0, a);
  for (int i = 0; i < n; ++i) a(i, i) += delta;
  return a;
}

inline Vec random_vec(std::mt19937_64& rng, int n, double scale = 1.0) {
  std::uniform_real_distribution<double> dist(-scale, scale);
  Vec v(n);
  for (double& x : v) x = dist(rng);
  return v;
}

// Reference matrix product, plain triple loop, independent of the kernels.
inline DenseMatrix naive_matmul(const DenseMatrix& a, const DenseMatrix& b) {
  DenseMatrix c(a.rows(), b.cols());
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (int k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      c(i, j) = s;
    }
  return c;
}

inline double max_abs_diff(const DenseMatrix& a, const DenseMatrix& b) {
  double m = 0.0;
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j) m = std::max(m, std::abs(a(i, j) - b(i, j)));
  return m;
}

inline double max_abs_diff(const Vec& a, const Vec& b) {
  double m = 0.0;
  for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace test_util
