#pragma once

#include <iosfwd>

#include "nmpc/qp/condensing.hpp"
#include "nmpc/qp/ipm.hpp"
#include "nmpc/sqp/ocp_nlp.hpp"

namespace nmpc::sqp {

enum class HessianMode { GaussNewton, Scqp, Exact };
enum class Regularization { None, Project, Mirror };
enum class QpBackend { StructuredIpm, CondensedDenseIpm };

struct SqpOptions {
  HessianMode hessian = HessianMode::GaussNewton;
  Regularization reg = Regularization::None;
  double reg_eps = 1e-4;
  QpBackend backend = QpBackend::StructuredIpm;
  int partial_condensing_n2 = 0;  // 0 = off; 1..N groups stages into N2 blocks
  int max_iter = 100;
  double tol_stat = 1e-6;
  double tol_eq = 1e-6;
  double tol_ineq = 1e-6;
  double tol_comp = 1e-6;
  qp::IpmOptions qp;
  // a QP step that misses the IPM tolerances still counts when its
  // independently recomputed residuals are below this bound (0 disables)
  double qp_accept_residual = 1e-6;
  bool warm_start_qp = true;
  bool rti = false;        // one iteration per sample instead of full solves
  bool rti_shift = false;  // keep-in-place by default
};

enum class SqpStatus { Converged, MaxIter, QpFailure };
const char* to_string(SqpStatus s);

struct SqpIterationRecord {
  qp::KktResiduals residuals;
  double step_norm = 0.0;
  double t_linearize = 0.0;   // cost/constraint assembly without integration
  double t_integration = 0.0;
  double t_qp = 0.0;
  int qp_iterations = 0;
};

struct SqpStats {
  std::vector<SqpIterationRecord> history;
  SqpStatus status = SqpStatus::Converged;
  int iterations = 0;
  double t_total = 0.0;
};

// CSV export: iteration, the four residuals, step norm, timings.
void write_stats_csv(std::ostream& os, const SqpStats& stats);

// Eigenvalue-clipping regularization of one symmetric block: Project lifts
// eigenvalues to at least eps, Mirror reflects them first. A block whose
// smallest eigenvalue is already >= eps is returned unchanged.
void regularize(DenseMatrix& h, Regularization mode, double eps);

// Full-step SQP / RTI solver on a multiple-shooting NLP. One instance owns
// its integrators and QP warm-start state; not concurrently shareable.
class SqpSolver {
 public:
  SqpSolver(OcpNlp nlp, SqpOptions opts);

  const OcpNlp& nlp() const { return nlp_; }
  // Dimension-preserving edits only (e.g. moving cost references between
  // samples); the integrators and warm-start state stay valid.
  OcpNlp& nlp_mutable() { return nlp_; }
  const SqpOptions& options() const { return opts_; }

  // Builds the QP subproblem at the iterate: dynamics linearized by the
  // integrators (b = phi(x,u) - x_next), constraint rows stacked, cost
  // quadratics per the configured Hessian mode, regularization applied.
  qp::OcpQp linearize(const SqpIterate& iterate, const Vec& x0);

  // KKT residuals of the NLP at the iterate (nonlinear evaluations).
  qp::KktResiduals residuals(const SqpIterate& iterate, const Vec& x0);

  // Full SQP iteration loop with the residual check up front.
  std::pair<SqpIterate, SqpStats> solve(const Vec& x0, SqpIterate iterate);

  // Exactly one linearize + QP solve + full-step update.
  std::pair<SqpIterate, SqpStats> rti_step(const Vec& x0, SqpIterate iterate);

  // Unregularized Lagrangian Hessian blocks at the iterate (one per stage).
  std::vector<DenseMatrix> exact_hessian_blocks(const SqpIterate& iterate);

 private:
  void stage_cost_quadratic(int k, const SqpIterate& iterate, HessianMode mode, DenseMatrix& h,
                            Vec& grad) const;
  void add_constraint_curvature(int k, const SqpIterate& iterate, HessianMode mode,
                                DenseMatrix& h) const;
  bool qp_step(const qp::OcpQp& qp, qp::QpSolution& sol, int& qp_iters, double& t_qp,
               bool warm_start);
  double apply_full_step(SqpIterate& iterate, const qp::QpSolution& sol) const;

  OcpNlp nlp_;
  SqpOptions opts_;
  std::vector<sim::ErkIntegrator> erk_;  // index by stage; unused entries absent
  std::vector<sim::IrkIntegrator> irk_;
  std::vector<int> erk_index_, irk_index_;

  // QP warm-start state, one per backend shape
  std::optional<qp::QpSolution> warm_structured_;
  std::optional<qp::QpSolution> warm_partial_;
  std::optional<qp::DenseQpSolution> warm_dense_;
  std::vector<DenseMatrix> scratch_hess_;
  std::vector<Vec> scratch_z_;
  double t_integration_accum_ = 0.0;
};

}  // namespace nmpc::sqp
