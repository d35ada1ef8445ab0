#include "nmpc/linalg/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace nmpc::linalg {

namespace {

constexpr int kBlock = NMPC_GEMM_BLOCK;

void check(bool cond, const char* msg) {
  if (!cond) throw DimensionError(msg);
}

// C += alpha * A * B on an index window, row-major streaming order.
void gemm_block_nn(double alpha, const DenseMatrix& a, const DenseMatrix& b, DenseMatrix& c,
                   int i0, int i1, int k0, int k1, int j0, int j1) {
  for (int i = i0; i < i1; ++i) {
    const double* arow = a.data() + size_t(i) * a.cols();
    double* crow = c.data() + size_t(i) * c.cols();
    for (int k = k0; k < k1; ++k) {
      const double aik = alpha * arow[k];
      const double* brow = b.data() + size_t(k) * b.cols();
      for (int j = j0; j < j1; ++j) crow[j] += aik * brow[j];
    }
  }
}

// C += alpha * A^T * B
void gemm_block_tn(double alpha, const DenseMatrix& a, const DenseMatrix& b, DenseMatrix& c,
                   int i0, int i1, int k0, int k1, int j0, int j1) {
  for (int k = k0; k < k1; ++k) {
    const double* arow = a.data() + size_t(k) * a.cols();
    const double* brow = b.data() + size_t(k) * b.cols();
    for (int i = i0; i < i1; ++i) {
      const double aki = alpha * arow[i];
      double* crow = c.data() + size_t(i) * c.cols();
      for (int j = j0; j < j1; ++j) crow[j] += aki * brow[j];
    }
  }
}

// C += alpha * A * B^T
void gemm_block_nt(double alpha, const DenseMatrix& a, const DenseMatrix& b, DenseMatrix& c,
                   int i0, int i1, int k0, int k1, int j0, int j1) {
  for (int i = i0; i < i1; ++i) {
    const double* arow = a.data() + size_t(i) * a.cols();
    double* crow = c.data() + size_t(i) * c.cols();
    for (int j = j0; j < j1; ++j) {
      const double* brow = b.data() + size_t(j) * b.cols();
      double acc = 0.0;
      for (int k = k0; k < k1; ++k) acc += arow[k] * brow[k];
      crow[j] += alpha * acc;
    }
  }
}

}  // namespace

void gemm(double alpha, const DenseMatrix& a, Trans trans_a, const DenseMatrix& b, Trans trans_b,
          double beta, DenseMatrix& c) {
  const int m = trans_a == Trans::No ? a.rows() : a.cols();
  const int ka = trans_a == Trans::No ? a.cols() : a.rows();
  const int kb = trans_b == Trans::No ? b.rows() : b.cols();
  const int n = trans_b == Trans::No ? b.cols() : b.rows();
  check(ka == kb, "gemm: inner dimensions do not match");
  check(c.rows() == m && c.cols() == n, "gemm: output shape mismatch");

  if (beta == 0.0)
    c.set_zero();
  else if (beta != 1.0)
    scale(beta, {c.data(), size_t(c.rows()) * c.cols()});
  if (alpha == 0.0 || m == 0 || n == 0 || ka == 0) return;

  // A^T * B^T falls back on an explicit transpose of A; the solvers never use it.
  if (trans_a == Trans::Yes && trans_b == Trans::Yes) {
    DenseMatrix at = transpose(a);
    gemm(alpha, at, Trans::No, b, Trans::Yes, 1.0, c);
    return;
  }

  for (int i0 = 0; i0 < m; i0 += kBlock) {
    const int i1 = std::min(m, i0 + kBlock);
    for (int k0 = 0; k0 < ka; k0 += kBlock) {
      const int k1 = std::min(ka, k0 + kBlock);
      for (int j0 = 0; j0 < n; j0 += kBlock) {
        const int j1 = std::min(n, j0 + kBlock);
        if (trans_a == Trans::No && trans_b == Trans::No)
          gemm_block_nn(alpha, a, b, c, i0, i1, k0, k1, j0, j1);
        else if (trans_a == Trans::Yes)
          gemm_block_tn(alpha, a, b, c, i0, i1, k0, k1, j0, j1);
        else
          gemm_block_nt(alpha, a, b, c, i0, i1, k0, k1, j0, j1);
      }
    }
  }
}

void gemv(double alpha, const DenseMatrix& a, Trans trans_a, std::span<const double> x,
          double beta, std::span<double> y) {
  const int m = trans_a == Trans::No ? a.rows() : a.cols();
  const int n = trans_a == Trans::No ? a.cols() : a.rows();
  check(static_cast<int>(x.size()) == n, "gemv: x length mismatch");
  check(static_cast<int>(y.size()) == m, "gemv: y length mismatch");
  for (double& v : y) v *= beta;
  if (trans_a == Trans::No) {
    for (int i = 0; i < a.rows(); ++i) {
      const double* arow = a.data() + size_t(i) * a.cols();
      double acc = 0.0;
      for (int j = 0; j < a.cols(); ++j) acc += arow[j] * x[j];
      y[i] += alpha * acc;
    }
  } else {
    for (int i = 0; i < a.rows(); ++i) {
      const double* arow = a.data() + size_t(i) * a.cols();
      const double xi = alpha * x[i];
      for (int j = 0; j < a.cols(); ++j) y[j] += xi * arow[j];
    }
  }
}

void potrf(const DenseMatrix& a, DenseMatrix& l) {
  check(a.rows() == a.cols(), "potrf: matrix must be square");
  const int n = a.rows();
  if (&l != &a) l.resize(n, n);
  for (int j = 0; j < n; ++j) {
    double d = a(j, j);
    for (int k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
    if (!(d > 0.0)) throw NotPositiveDefiniteError(j, d);
    const double ljj = std::sqrt(d);
    l(j, j) = ljj;
    for (int k = j + 1; k < n; ++k) l(j, k) = 0.0;
    for (int i = j + 1; i < n; ++i) {
      double s = a(i, j);
      for (int k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      l(i, j) = s / ljj;
    }
  }
}

void potrs(const DenseMatrix& l, DenseMatrix& b) {
  trsm(l, Uplo::Lower, Trans::No, Diag::NonUnit, Side::Left, b);
  trsm(l, Uplo::Lower, Trans::Yes, Diag::NonUnit, Side::Left, b);
}

void potrs(const DenseMatrix& l, std::span<double> b) {
  trsv(l, Uplo::Lower, Trans::No, Diag::NonUnit, b);
  trsv(l, Uplo::Lower, Trans::Yes, Diag::NonUnit, b);
}

void getrf(const DenseMatrix& a, DenseMatrix& lu, std::vector<int>& piv) {
  check(a.rows() == a.cols(), "getrf: matrix must be square");
  const int n = a.rows();
  if (&lu != &a) lu = a;
  piv.assign(n, 0);
  for (int k = 0; k < n; ++k) {
    int p = k;
    double best = std::abs(lu(k, k));
    for (int i = k + 1; i < n; ++i) {
      const double v = std::abs(lu(i, k));
      if (v > best) {
        best = v;
        p = i;
      }
    }
    if (best == 0.0) throw SingularMatrixError(k);
    piv[k] = p;
    if (p != k)
      for (int j = 0; j < n; ++j) std::swap(lu(k, j), lu(p, j));
    const double inv_pivot = 1.0 / lu(k, k);
    for (int i = k + 1; i < n; ++i) {
      const double lik = lu(i, k) * inv_pivot;
      lu(i, k) = lik;
      for (int j = k + 1; j < n; ++j) lu(i, j) -= lik * lu(k, j);
    }
  }
}

void getrs(const DenseMatrix& lu, const std::vector<int>& piv, std::span<double> b) {
  const int n = lu.rows();
  check(static_cast<int>(b.size()) == n, "getrs: rhs length mismatch");
  for (int k = 0; k < n; ++k)
    if (piv[k] != k) std::swap(b[k], b[piv[k]]);
  trsv(lu, Uplo::Lower, Trans::No, Diag::Unit, b);
  trsv(lu, Uplo::Upper, Trans::No, Diag::NonUnit, b);
}

void getrs(const DenseMatrix& lu, const std::vector<int>& piv, DenseMatrix& b) {
  const int n = lu.rows();
  check(b.rows() == n, "getrs: rhs rows mismatch");
  for (int k = 0; k < n; ++k)
    if (piv[k] != k)
      for (int j = 0; j < b.cols(); ++j) std::swap(b(k, j), b(piv[k], j));
  trsm(lu, Uplo::Lower, Trans::No, Diag::Unit, Side::Left, b);
  trsm(lu, Uplo::Upper, Trans::No, Diag::NonUnit, Side::Left, b);
}

void getrs_trans(const DenseMatrix& lu, const std::vector<int>& piv, std::span<double> b) {
  // P A = L U  =>  A^T = U^T L^T P, so solve U^T w = b, L^T v = w, x = P^T v.
  const int n = lu.rows();
  check(static_cast<int>(b.size()) == n, "getrs_trans: rhs length mismatch");
  trsv(lu, Uplo::Upper, Trans::Yes, Diag::NonUnit, b);
  trsv(lu, Uplo::Lower, Trans::Yes, Diag::Unit, b);
  for (int k = n - 1; k >= 0; --k)
    if (piv[k] != k) std::swap(b[k], b[piv[k]]);
}

void trsv(const DenseMatrix& t, Uplo uplo, Trans trans, Diag diag, std::span<double> b) {
  const int n = t.rows();
  check(t.cols() == n, "trsv: matrix must be square");
  check(static_cast<int>(b.size()) == n, "trsv: rhs length mismatch");
  const bool lower_effective = (uplo == Uplo::Lower) != (trans == Trans::Yes);
  auto entry = [&](int i, int j) { return trans == Trans::Yes ? t(j, i) : t(i, j); };
  auto pivot = [&](int i) {
    if (diag == Diag::Unit) return 1.0;
    const double d = t(i, i);
    if (d == 0.0) throw SingularMatrixError(i);
    return d;
  };
  if (lower_effective) {
    for (int i = 0; i < n; ++i) {
      double s = b[i];
      for (int j = 0; j < i; ++j) s -= entry(i, j) * b[j];
      b[i] = s / pivot(i);
    }
  } else {
    for (int i = n - 1; i >= 0; --i) {
      double s = b[i];
      for (int j = i + 1; j < n; ++j) s -= entry(i, j) * b[j];
      b[i] = s / pivot(i);
    }
  }
}

void trsm(const DenseMatrix& t, Uplo uplo, Trans trans, Diag diag, Side side, DenseMatrix& b) {
  const int n = t.rows();
  check(t.cols() == n, "trsm: matrix must be square");
  if (side == Side::Left) {
    check(b.rows() == n, "trsm: rhs rows mismatch");
    const bool lower_effective = (uplo == Uplo::Lower) != (trans == Trans::Yes);
    auto entry = [&](int i, int j) { return trans == Trans::Yes ? t(j, i) : t(i, j); };
    auto pivot = [&](int i) {
      if (diag == Diag::Unit) return 1.0;
      const double d = t(i, i);
      if (d == 0.0) throw SingularMatrixError(i);
      return d;
    };
    if (lower_effective) {
      for (int i = 0; i < n; ++i) {
        const double inv = 1.0 / pivot(i);
        for (int c = 0; c < b.cols(); ++c) {
          double s = b(i, c);
          for (int j = 0; j < i; ++j) s -= entry(i, j) * b(j, c);
          b(i, c) = s * inv;
        }
      }
    } else {
      for (int i = n - 1; i >= 0; --i) {
        const double inv = 1.0 / pivot(i);
        for (int c = 0; c < b.cols(); ++c) {
          double s = b(i, c);
          for (int j = i + 1; j < n; ++j) s -= entry(i, j) * b(j, c);
          b(i, c) = s * inv;
        }
      }
    }
  } else {
    // X op(T) = B row by row: each row of B is a transposed left solve.
    check(b.cols() == n, "trsm: rhs cols mismatch");
    const Trans flipped = trans == Trans::Yes ? Trans::No : Trans::Yes;
    for (int r = 0; r < b.rows(); ++r) trsv(t, uplo, flipped, diag, b.row(r));
  }
}

SymEigResult syev_jacobi(const DenseMatrix& a, double tol) {
  SymEigResult out;
  syev_jacobi(a, out, tol);
  return out;
}

void syev_jacobi(const DenseMatrix& a, SymEigResult& out, double tol) {
  check(a.rows() == a.cols(), "syev_jacobi: matrix must be square");
  const int n = a.rows();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (!std::isfinite(a(i, j))) throw InvalidInputError("syev_jacobi: non-finite entry");

  DenseMatrix w = a;
  DenseMatrix v = DenseMatrix::identity(n);
  const double fro = norm_fro(a);
  const double thresh = tol * (fro > 0.0 ? fro : 1.0);

  constexpr int kMaxSweeps = 64;
  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    double off = 0.0;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) off = std::max(off, std::abs(w(p, q)));
    if (off <= thresh) break;

    for (int p = 0; p < n - 1; ++p) {
      for (int q = p + 1; q < n; ++q) {
        const double apq = w(p, q);
        if (std::abs(apq) <= thresh * 1e-2) continue;
        const double theta = (w(q, q) - w(p, p)) / (2.0 * apq);
        const double tt = (theta >= 0.0 ? 1.0 : -1.0) /
                          (std::abs(theta) + std::sqrt(1.0 + theta * theta));
        const double c = 1.0 / std::sqrt(1.0 + tt * tt);
        const double s = tt * c;
        for (int k = 0; k < n; ++k) {
          const double wkp = w(k, p), wkq = w(k, q);
          w(k, p) = c * wkp - s * wkq;
          w(k, q) = s * wkp + c * wkq;
        }
        for (int k = 0; k < n; ++k) {
          const double wpk = w(p, k), wqk = w(q, k);
          w(p, k) = c * wpk - s * wqk;
          w(q, k) = s * wpk + c * wqk;
        }
        for (int k = 0; k < n; ++k) {
          const double vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int i, int j) { return w(i, i) < w(j, j); });

  out.eigenvalues.resize(n);
  out.eigenvectors.resize(n, n);
  for (int j = 0; j < n; ++j) {
    out.eigenvalues[j] = w(order[j], order[j]);
    for (int i = 0; i < n; ++i) out.eigenvectors(i, j) = v(i, order[j]);
  }
}

double norm_inf(std::span<const double> x) {
  double m = 0.0;
  for (double v : x) m = std::max(m, std::abs(v));
  return m;
}

double norm_two(std::span<const double> x) {
  double s = 0.0;
  for (double v : x) s += v * v;
  return std::sqrt(s);
}

double norm_inf(const DenseMatrix& a) {
  return norm_inf({a.data(), size_t(a.rows()) * a.cols()});
}

double norm_fro(const DenseMatrix& a) {
  return norm_two({a.data(), size_t(a.rows()) * a.cols()});
}

double dot(std::span<const double> x, std::span<const double> y) {
  double s = 0.0;
  for (size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
  return s;
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  for (size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

void scale(double alpha, std::span<double> x) {
  for (double& v : x) v *= alpha;
}

void symmetrize(DenseMatrix& a) {
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < i; ++j) {
      const double v = 0.5 * (a(i, j) + a(j, i));
      a(i, j) = v;
      a(j, i) = v;
    }
}

}  // namespace nmpc::linalg
