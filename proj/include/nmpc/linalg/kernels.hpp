#pragma once

#include <span>
#include <vector>

#include "nmpc/linalg/dense_matrix.hpp"

namespace nmpc::linalg {

// Block size for the cache-blocked gemm loops. Tunable at compile time; 32
// keeps three double blocks inside L1 on everything we target.
#ifndef NMPC_GEMM_BLOCK
#define NMPC_GEMM_BLOCK 32
#endif

enum class Trans { No, Yes };
enum class Side { Left, Right };
enum class Uplo { Lower, Upper };
enum class Diag { NonUnit, Unit };

// C <- alpha * op(A) * op(B) + beta * C. C must have the result shape.
void gemm(double alpha, const DenseMatrix& a, Trans trans_a, const DenseMatrix& b, Trans trans_b,
          double beta, DenseMatrix& c);

inline void gemm(double alpha, const DenseMatrix& a, const DenseMatrix& b, double beta,
                 DenseMatrix& c) {
  gemm(alpha, a, Trans::No, b, Trans::No, beta, c);
}

inline DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
  DenseMatrix c(a.rows(), b.cols());
  gemm(1.0, a, b, 0.0, c);
  return c;
}

// y <- alpha * op(A) * x + beta * y
void gemv(double alpha, const DenseMatrix& a, Trans trans_a, std::span<const double> x,
          double beta, std::span<double> y);

// Cholesky factorization A = L * L^T for symmetric positive definite A.
// Throws NotPositiveDefiniteError with the offending pivot index otherwise.
void potrf(const DenseMatrix& a, DenseMatrix& l);

// Solve A X = B or A^T X = B given the Cholesky factor L of A (two triangular solves).
void potrs(const DenseMatrix& l, DenseMatrix& b);
void potrs(const DenseMatrix& l, std::span<double> b);

// LU factorization with partial pivoting, P A = L U. L (unit diagonal) and U
// are packed into `lu`; `piv[k]` is the row swapped with row k at step k.
// Throws SingularMatrixError if a pivot column is exactly zero.
void getrf(const DenseMatrix& a, DenseMatrix& lu, std::vector<int>& piv);

// Solve A x = b with a factorization from getrf.
void getrs(const DenseMatrix& lu, const std::vector<int>& piv, std::span<double> b);
void getrs(const DenseMatrix& lu, const std::vector<int>& piv, DenseMatrix& b);
// Solve A^T x = b with the same factorization.
void getrs_trans(const DenseMatrix& lu, const std::vector<int>& piv, std::span<double> b);

// Triangular solve op(T) X = B (Side::Left) or X op(T) = B (Side::Right),
// in place on B. Throws SingularMatrixError on a zero diagonal entry.
void trsm(const DenseMatrix& t, Uplo uplo, Trans trans, Diag diag, Side side, DenseMatrix& b);
void trsv(const DenseMatrix& t, Uplo uplo, Trans trans, Diag diag, std::span<double> b);

// Symmetric eigenvalue decomposition by cyclic Jacobi rotations.
struct SymEigResult {
  DenseMatrix eigenvectors;  // columns, orthogonal
  Vec eigenvalues;           // ascending
};

// Rotates until the largest off-diagonal magnitude drops below
// tol * ||A||_F. Throws InvalidInputError on non-finite input.
void syev_jacobi(const DenseMatrix& a, SymEigResult& out, double tol = 1e-13);
SymEigResult syev_jacobi(const DenseMatrix& a, double tol = 1e-13);

// Small vector/matrix helpers used throughout the solvers.
double norm_inf(std::span<const double> x);
double norm_two(std::span<const double> x);
double norm_inf(const DenseMatrix& a);
double norm_fro(const DenseMatrix& a);
double dot(std::span<const double> x, std::span<const double> y);
void axpy(double alpha, std::span<const double> x, std::span<double> y);
void scale(double alpha, std::span<double> x);

// Copies the lower triangle onto the upper one so the stored matrix is
// exactly symmetric.
void symmetrize(DenseMatrix& a);

}  // namespace nmpc::linalg
