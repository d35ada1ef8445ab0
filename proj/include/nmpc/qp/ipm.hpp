#pragma once

#include <optional>

#include "nmpc/qp/data.hpp"

namespace nmpc::qp {

struct IpmOptions {
  int max_iter = 50;
  double tol_stat = 1e-8;
  double tol_eq = 1e-8;
  double tol_ineq = 1e-8;
  double tol_comp = 1e-8;
  double tau = 0.995;        // fraction-to-boundary
  double reg_delta = 1e-12;  // minimum pivot bump in the factorizations
  bool iterative_refinement = false;  // one extra KKT refinement per solve
  bool warm_start = false;
  double warm_start_push = 1e-3;

  void validate() const;
};

struct IpmIterationRecord {
  KktResiduals residuals;
  double mu = 0.0;
  double alpha_primal = 0.0;
  double alpha_dual = 0.0;
};

struct IpmStats {
  int iterations = 0;
  std::vector<IpmIterationRecord> history;
  QpStatus status = QpStatus::Solved;
};

// Riccati-factorized structured Mehrotra predictor-corrector. Soft-constraint
// slacks are eliminated analytically into the stage Hessians, so the KKT
// factorization is a plain backward Riccati recursion per iteration.
std::pair<QpSolution, IpmStats> solve_ocp_qp_ipm(const OcpQp& qp, const IpmOptions& opts,
                                                 const QpSolution* warm = nullptr);

// Dense Mehrotra predictor-corrector with Cholesky normal equations.
std::pair<DenseQpSolution, IpmStats> solve_dense_qp_ipm(const DenseQp& qp, const IpmOptions& opts,
                                                        const DenseQpSolution* warm = nullptr);

}  // namespace nmpc::qp
