#pragma once

#include <limits>
#include <vector>

#include "nmpc/linalg/kernels.hpp"

namespace nmpc::qp {

using linalg::DenseMatrix;
using linalg::Vec;

constexpr double kInf = std::numeric_limits<double>::infinity();

struct OcpQpDims {
  int N = 0;
  std::vector<int> nx;  // N+1
  std::vector<int> nu;  // N, controls exist for k < N only
  std::vector<int> ng;  // N+1
  std::vector<int> ns;  // N+1

  void validate() const;
  bool operator==(const OcpQpDims&) const = default;
};

// One stage of the optimal-control-structured QP
//   min 0.5 [x;u]' [[Q,S'],[S,R]] [x;u] + [q;r]'[x;u] + 0.5 s'diag(P)s + p's
//   s.t. x+ = A x + B u + b,
//        lg - Js s <= Gx x + Gu u <= ug + Js s,  s >= 0.
// One-sided rows carry +-inf on the open side.
struct OcpQpStage {
  DenseMatrix Q, S, R;  // S is nu x nx
  Vec q, r;
  DenseMatrix A, B;     // A is nx[k+1] x nx[k]
  Vec b;
  DenseMatrix Gx, Gu;
  Vec lg, ug;
  DenseMatrix Js;       // ng x ns, 0/1 selection, at most one 1 per row
  Vec P_diag, p_slack;  // entries 2*beta > 0 and alpha
};

struct OcpQp {
  OcpQpDims dims;
  std::vector<OcpQpStage> stages;  // N+1; terminal stage has no u/A/B/b data

  void validate() const;
  static OcpQp zeros(const OcpQpDims& dims);
};

// Dense QP  min 0.5 v'Hv + g'v  s.t. lg <= G v <= ug.
struct DenseQp {
  DenseMatrix H;
  Vec g;
  DenseMatrix G;
  Vec lg, ug;

  int n() const { return H.rows(); }
  int n_rows() const { return G.rows(); }
  void validate() const;
};

enum class QpStatus { Solved, MaxIter, NumericalFailure };
const char* to_string(QpStatus s);

struct KktResiduals {
  double stationarity = 0.0;
  double equality = 0.0;
  double inequality = 0.0;
  double complementarity = 0.0;
  double max() const;
};

struct QpSolution {
  std::vector<Vec> x;       // N+1
  std::vector<Vec> u;       // N
  std::vector<Vec> s;       // N+1
  std::vector<Vec> pi;      // N, multiplier of the k -> k+1 dynamics rows
  std::vector<Vec> lam_lo;  // N+1, per inequality row, >= 0
  std::vector<Vec> lam_up;  // N+1
  std::vector<Vec> lam_s;   // N+1, multiplier of s >= 0
  QpStatus status = QpStatus::Solved;
  int iterations = 0;
  KktResiduals residuals;

  static QpSolution zeros(const OcpQpDims& dims);
};

struct DenseQpSolution {
  Vec v;
  Vec lam_lo, lam_up;  // per row
  QpStatus status = QpStatus::Solved;
  int iterations = 0;
  KktResiduals residuals;
};

// Independently recomputed KKT residuals (inf-norms; inequality violation is
// clipped at zero, complementarity is max |lambda_i * distance_i|).
KktResiduals kkt_residuals(const OcpQp& qp, const QpSolution& sol);
KktResiduals kkt_residuals(const DenseQp& qp, const DenseQpSolution& sol);

}  // namespace nmpc::qp
