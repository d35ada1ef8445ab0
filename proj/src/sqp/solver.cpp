#include "nmpc/sqp/solver.hpp"

#include <cmath>
#include <ostream>
#include <tuple>

#include "nmpc/common/timing.hpp"

namespace nmpc::sqp {

using ad::Bindings;
using ad::Block;
using linalg::gemm;
using linalg::gemv;
using linalg::Trans;

const char* to_string(SqpStatus s) {
  switch (s) {
    case SqpStatus::Converged: return "converged";
    case SqpStatus::MaxIter: return "max_iter";
    case SqpStatus::QpFailure: return "qp_failure";
  }
  return "?";
}

void write_stats_csv(std::ostream& os, const SqpStats& stats) {
  os << "iter,stat,eq,ineq,comp,step_norm,t_linearize_s,t_integration_s,t_qp_s,qp_iters\n";
  for (size_t i = 0; i < stats.history.size(); ++i) {
    const SqpIterationRecord& r = stats.history[i];
    char line[256];
    snprintf(line, sizeof line, "%zu,%.6e,%.6e,%.6e,%.6e,%.6e,%.6e,%.6e,%.6e,%d\n", i,
             r.residuals.stationarity, r.residuals.equality, r.residuals.inequality,
             r.residuals.complementarity, r.step_norm, r.t_linearize, r.t_integration, r.t_qp,
             r.qp_iterations);
    os << line;
  }
}

void regularize(DenseMatrix& h, Regularization mode, double eps) {
  if (mode == Regularization::None || h.rows() == 0) return;
  if (eps <= 0.0) throw InvalidInputError("regularize: eps must be positive");
  linalg::SymEigResult eig = linalg::syev_jacobi(h);
  if (eig.eigenvalues.front() >= eps) return;  // already sufficiently convex
  Vec d = eig.eigenvalues;
  for (double& v : d) v = mode == Regularization::Project ? std::max(eps, v)
                                                          : std::max(eps, std::abs(v));
  // reassemble V diag(d) V'
  DenseMatrix vd = eig.eigenvectors;
  for (int i = 0; i < vd.rows(); ++i)
    for (int j = 0; j < vd.cols(); ++j) vd(i, j) *= d[j];
  gemm(1.0, vd, Trans::No, eig.eigenvectors, Trans::Yes, 0.0, h);
  linalg::symmetrize(h);
}

namespace {

struct RowBlocks {
  int n_bx, n_bu, n_lin, n_nonl, x0_rows, total;
};

RowBlocks stage_rows(const OcpNlp& nlp, int k) {
  const StageConstraints& c = nlp.constraints[k];
  const bool terminal = k == nlp.dims.N;
  RowBlocks r;
  r.n_bx = static_cast<int>(c.bx.index.size());
  r.n_bu = terminal ? 0 : static_cast<int>(c.bu.index.size());
  r.n_lin = static_cast<int>(c.cl.size());
  r.n_nonl = static_cast<int>(c.gl.size());
  r.x0_rows = k == 0 ? nlp.dims.nx[0] : 0;
  r.total = r.x0_rows + r.n_bx + r.n_bu + r.n_lin + r.n_nonl;
  return r;
}

}  // namespace

SqpSolver::SqpSolver(OcpNlp nlp, SqpOptions opts) : nlp_(std::move(nlp)), opts_(std::move(opts)) {
  nlp_.validate();
  if (opts_.reg_eps <= 0.0) throw InvalidInputError("sqp options: reg_eps must be positive");
  const int N = nlp_.dims.N;
  erk_index_.assign(N, -1);
  irk_index_.assign(N, -1);
  for (int k = 0; k < N; ++k) {
    const StageDynamics& d = nlp_.dynamics[k];
    if (d.explicit_model) {
      if (d.config.kind != IntegratorConfig::Kind::Erk)
        throw InvalidInputError("sqp: explicit model requires an ERK configuration");
      erk_index_[k] = static_cast<int>(erk_.size());
      erk_.emplace_back(*d.explicit_model, d.config.tableau, d.config.n_steps);
    } else {
      if (d.config.kind != IntegratorConfig::Kind::Irk)
        throw InvalidInputError("sqp: implicit model requires an IRK configuration");
      irk_index_[k] = static_cast<int>(irk_.size());
      irk_.emplace_back(*d.implicit_model, d.config.irk, d.config.n_steps);
    }
  }
}

void SqpSolver::stage_cost_quadratic(int k, const SqpIterate& iterate, HessianMode mode,
                                     DenseMatrix& h, Vec& grad) const {
  const bool terminal = k == nlp_.dims.N;
  const int nx = nlp_.dims.nx[k];
  const int nu = terminal ? 0 : nlp_.dims.nu[k];
  const int nw = nx + nu;
  const StageCost& cost = nlp_.cost[k];
  const double scale = cost.scale;
  h.resize(nw, nw);
  h.set_zero();
  grad.assign(nw, 0.0);

  Bindings in;
  in[Block::X] = iterate.x[k];
  if (!terminal) in[Block::U] = iterate.u[k];
  const Block wrt_xu[] = {Block::X, Block::U};
  const Block wrt_x[] = {Block::X};
  std::span<const Block> wrt = terminal ? std::span<const Block>(wrt_x)
                                        : std::span<const Block>(wrt_xu);

  if (const auto* ls = std::get_if<LinearLsCost>(&cost.spec)) {
    const int ny = static_cast<int>(ls->y_ref.size());
    // residual e = Vx x + Vu u - y_ref
    Vec e(ny, 0.0);
    gemv(1.0, ls->vx, Trans::No, iterate.x[k], 0.0, e);
    if (!terminal && ls->vu.cols() > 0) gemv(1.0, ls->vu, Trans::No, iterate.u[k], 1.0, e);
    linalg::axpy(-1.0, ls->y_ref, e);
    Vec we(ny, 0.0);
    gemv(1.0, ls->w, Trans::No, e, 0.0, we);
    DenseMatrix v(ny, nw);
    for (int i = 0; i < ny; ++i) {
      for (int j = 0; j < nx; ++j) v(i, j) = ls->vx(i, j);
      for (int j = 0; j < nu; ++j) v(i, nx + j) = ls->vu(i, j);
    }
    gemv(2.0 * scale, v, Trans::Yes, we, 0.0, grad);
    DenseMatrix wv(ny, nw);
    gemm(1.0, ls->w, v, 0.0, wv);
    gemm(2.0 * scale, v, Trans::Yes, wv, Trans::No, 0.0, h);
    return;
  }

  if (const auto* ls = std::get_if<NonlinearLsCost>(&cost.spec)) {
    const int ny = ls->r->n_out();
    Vec e(ny);
    ls->r->eval(in, e);
    linalg::axpy(-1.0, ls->y_ref, e);
    DenseMatrix jac;
    ls->r->jacobian(in, wrt, jac);
    Vec we(ny, 0.0);
    gemv(1.0, ls->w, Trans::No, e, 0.0, we);
    gemv(2.0 * scale, jac, Trans::Yes, we, 0.0, grad);
    DenseMatrix wj(ny, nw);
    gemm(1.0, ls->w, jac, 0.0, wj);
    gemm(2.0 * scale, jac, Trans::Yes, wj, Trans::No, 0.0, h);
    if (mode == HessianMode::Exact) {
      // add 2 sum_i (W e)_i hess(r_i)
      Vec weights(ny);
      for (int i = 0; i < ny; ++i) weights[i] = 2.0 * scale * we[i];
      DenseMatrix extra;
      ls->r->seeded_hessian(in, wrt, weights, extra);
      for (int i = 0; i < nw; ++i)
        for (int j = 0; j < nw; ++j) h(i, j) += extra(i, j);
    }
    return;
  }

  const auto& ext = std::get<ExternalCost>(cost.spec);
  if (mode == HessianMode::GaussNewton || mode == HessianMode::Scqp)
    throw InvalidInputError("gauss-newton hessian requires a least-squares cost");
  DenseMatrix jac;
  ext.l->jacobian(in, wrt, jac);
  for (int j = 0; j < nw; ++j) grad[j] = scale * jac(0, j);
  Vec one{scale};
  ext.l->seeded_hessian(in, wrt, one, h);
}

void SqpSolver::add_constraint_curvature(int k, const SqpIterate& iterate, HessianMode mode,
                                         DenseMatrix& h) const {
  const StageConstraints& c = nlp_.constraints[k];
  const bool terminal = k == nlp_.dims.N;
  const RowBlocks rows = stage_rows(nlp_, k);
  const int nw = h.rows();

  Bindings in;
  in[Block::X] = iterate.x[k];
  if (!terminal) in[Block::U] = iterate.u[k];
  const Block wrt_xu[] = {Block::X, Block::U};
  const Block wrt_x[] = {Block::X};
  std::span<const Block> wrt = terminal ? std::span<const Block>(wrt_x)
                                        : std::span<const Block>(wrt_xu);

  if (mode == HessianMode::Scqp) {
    // multiplier-weighted convex outer curvature, PSD by construction
    for (const auto& decl : c.scqp) {
      const double lam = std::max(0.0, iterate.lam_up[k][rows.x0_rows + decl.row]);
      if (lam == 0.0) continue;
      DenseMatrix jin;
      decl.inner->jacobian(in, wrt, jin);
      DenseMatrix oj(decl.outer_hess.rows(), nw);
      gemm(1.0, decl.outer_hess, jin, 0.0, oj);
      gemm(lam, jin, Trans::Yes, oj, Trans::No, 1.0, h);
    }
    return;
  }
  if (mode == HessianMode::Exact && c.g_nonl && rows.n_nonl > 0) {
    const int off = rows.x0_rows + rows.n_bx + rows.n_bu + rows.n_lin;
    Vec weights(rows.n_nonl);
    bool any = false;
    for (int i = 0; i < rows.n_nonl; ++i) {
      weights[i] = iterate.lam_up[k][off + i] - iterate.lam_lo[k][off + i];
      any = any || weights[i] != 0.0;
    }
    if (any) {
      DenseMatrix extra;
      c.g_nonl->seeded_hessian(in, wrt, weights, extra);
      for (int i = 0; i < nw; ++i)
        for (int j = 0; j < nw; ++j) h(i, j) += extra(i, j);
    }
  }
}

qp::OcpQp SqpSolver::linearize(const SqpIterate& iterate, const Vec& x0) {
  const int N = nlp_.dims.N;
  scratch_hess_.assign(N, DenseMatrix());
  scratch_z_.assign(N, Vec());
  qp::OcpQpDims dims;
  dims.N = N;
  dims.nx = nlp_.dims.nx;
  dims.nu = nlp_.dims.nu;
  dims.ng.resize(N + 1);
  dims.ns.resize(N + 1);
  for (int k = 0; k <= N; ++k) {
    dims.ng[k] = stage_rows(nlp_, k).total;
    dims.ns[k] = static_cast<int>(nlp_.constraints[k].soft.size());
  }
  qp::OcpQp qp = qp::OcpQp::zeros(dims);

  for (int k = 0; k <= N; ++k) {
    const bool terminal = k == N;
    const int nx = nlp_.dims.nx[k];
    const int nu = terminal ? 0 : nlp_.dims.nu[k];
    qp::OcpQpStage& st = qp.stages[k];

    // dynamics linearization
    if (!terminal) {
      sim::SimIn in;
      in.x0 = iterate.x[k];
      in.u = iterate.u[k];
      in.t_interval = nlp_.dynamics[k].config.t_interval;
      in.n_steps = nlp_.dynamics[k].config.n_steps;
      in.z_init = iterate.z[k];
      in.want_forward = true;
      if (opts_.hessian == HessianMode::Exact) {
        in.want_hessian = true;
        in.seed = iterate.pi[k];
      }
      sim::SimOut out;
      try {
        out = erk_index_[k] >= 0 ? erk_[erk_index_[k]].simulate(in)
                                 : irk_[irk_index_[k]].simulate(in);
      } catch (const DomainEvalError& e) {
        throw DomainEvalError(e.node_index, "shooting interval " + std::to_string(k) + ": " +
                                                e.what());
      } catch (const NewtonNoConvergenceError& e) {
        throw NumericalFailureError("shooting interval " + std::to_string(k) + ": " + e.what());
      } catch (const SingularStageJacobianError& e) {
        throw NumericalFailureError("shooting interval " + std::to_string(k) + ": " + e.what());
      }
      t_integration_accum_ += out.timings.total;
      st.A = out.sx;
      st.B = out.su;
      st.b = out.x_next;
      linalg::axpy(-1.0, iterate.x[k + 1], st.b);
      if (opts_.hessian == HessianMode::Exact) scratch_hess_[k] = out.hess;
      if (!out.z.empty()) scratch_z_[k] = out.z;
    }

    // cost quadratics plus constraint curvature, then regularization
    DenseMatrix h;
    Vec grad;
    stage_cost_quadratic(k, iterate, opts_.hessian, h, grad);
    if (opts_.hessian == HessianMode::Exact && !terminal && scratch_hess_[k].rows() > 0)
      for (int i = 0; i < h.rows(); ++i)
        for (int j = 0; j < h.cols(); ++j) h(i, j) += scratch_hess_[k](i, j);
    add_constraint_curvature(k, iterate, opts_.hessian, h);
    regularize(h, opts_.reg, opts_.reg_eps);
    for (int i = 0; i < nx; ++i) {
      st.q[i] = grad[i];
      for (int j = 0; j < nx; ++j) st.Q(i, j) = h(i, j);
    }
    for (int i = 0; i < nu; ++i) {
      st.r[i] = grad[nx + i];
      for (int j = 0; j < nx; ++j) st.S(i, j) = h(nx + i, j);
      for (int j = 0; j < nu; ++j) st.R(i, j) = h(nx + i, nx + j);
    }

    // constraint rows in the fixed stacking order
    const StageConstraints& c = nlp_.constraints[k];
    const RowBlocks rows = stage_rows(nlp_, k);
    int row = 0;
    if (k == 0) {
      for (int i = 0; i < nx; ++i, ++row) {
        st.Gx(row, i) = 1.0;
        st.lg[row] = x0[i] - iterate.x[0][i];
        st.ug[row] = x0[i] - iterate.x[0][i];
      }
    }
    for (int i = 0; i < rows.n_bx; ++i, ++row) {
      const int idx = c.bx.index[i];
      st.Gx(row, idx) = 1.0;
      st.lg[row] = c.bx.lb[i] > -qp::kInf ? c.bx.lb[i] - iterate.x[k][idx] : -qp::kInf;
      st.ug[row] = c.bx.ub[i] < qp::kInf ? c.bx.ub[i] - iterate.x[k][idx] : qp::kInf;
    }
    for (int i = 0; i < rows.n_bu; ++i, ++row) {
      const int idx = c.bu.index[i];
      st.Gu(row, idx) = 1.0;
      st.lg[row] = c.bu.lb[i] > -qp::kInf ? c.bu.lb[i] - iterate.u[k][idx] : -qp::kInf;
      st.ug[row] = c.bu.ub[i] < qp::kInf ? c.bu.ub[i] - iterate.u[k][idx] : qp::kInf;
    }
    if (rows.n_lin > 0) {
      Vec v(rows.n_lin, 0.0);
      gemv(1.0, c.cx, Trans::No, iterate.x[k], 0.0, v);
      if (!terminal && c.cu.cols() > 0) gemv(1.0, c.cu, Trans::No, iterate.u[k], 1.0, v);
      for (int i = 0; i < rows.n_lin; ++i, ++row) {
        for (int j = 0; j < nx; ++j) st.Gx(row, j) = c.cx(i, j);
        for (int j = 0; j < nu; ++j) st.Gu(row, j) = c.cu(i, j);
        st.lg[row] = c.cl[i] > -qp::kInf ? c.cl[i] - v[i] : -qp::kInf;
        st.ug[row] = c.cub[i] < qp::kInf ? c.cub[i] - v[i] : qp::kInf;
      }
    }
    if (rows.n_nonl > 0) {
      Bindings in;
      in[Block::X] = iterate.x[k];
      if (!terminal) in[Block::U] = iterate.u[k];
      const Block wrt_xu[] = {Block::X, Block::U};
      const Block wrt_x[] = {Block::X};
      Vec g(rows.n_nonl);
      c.g_nonl->eval(in, g);
      DenseMatrix jac;
      c.g_nonl->jacobian(in, terminal ? std::span<const Block>(wrt_x)
                                      : std::span<const Block>(wrt_xu), jac);
      for (int i = 0; i < rows.n_nonl; ++i, ++row) {
        for (int j = 0; j < nx; ++j) st.Gx(row, j) = jac(i, j);
        for (int j = 0; j < nu; ++j) st.Gu(row, j) = jac(i, nx + j);
        st.lg[row] = c.gl[i] > -qp::kInf ? c.gl[i] - g[i] : -qp::kInf;
        st.ug[row] = c.gu[i] < qp::kInf ? c.gu[i] - g[i] : qp::kInf;
      }
    }

    // soft rows and their penalties (slacks enter the QP in absolute value)
    for (size_t j = 0; j < c.soft.size(); ++j) {
      st.Js(rows.x0_rows + c.soft[j].row, static_cast<int>(j)) = 1.0;
      st.P_diag[j] = 2.0 * c.soft[j].beta;
      st.p_slack[j] = c.soft[j].alpha;
    }
  }
  return qp;
}

std::vector<DenseMatrix> SqpSolver::exact_hessian_blocks(const SqpIterate& iterate) {
  const int N = nlp_.dims.N;
  std::vector<DenseMatrix> out(N + 1);
  for (int k = 0; k <= N; ++k) {
    const bool terminal = k == N;
    DenseMatrix h;
    Vec grad;
    stage_cost_quadratic(k, iterate, HessianMode::Exact, h, grad);
    if (!terminal) {
      sim::SimIn in;
      in.x0 = iterate.x[k];
      in.u = iterate.u[k];
      in.t_interval = nlp_.dynamics[k].config.t_interval;
      in.n_steps = nlp_.dynamics[k].config.n_steps;
      in.z_init = iterate.z[k];
      in.seed = iterate.pi[k];
      in.want_hessian = true;
      sim::SimOut sim_out = erk_index_[k] >= 0 ? erk_[erk_index_[k]].simulate(in)
                                               : irk_[irk_index_[k]].simulate(in);
      for (int i = 0; i < h.rows(); ++i)
        for (int j = 0; j < h.cols(); ++j) h(i, j) += sim_out.hess(i, j);
    }
    add_constraint_curvature(k, iterate, HessianMode::Exact, h);
    out[k] = std::move(h);
  }
  return out;
}

qp::KktResiduals SqpSolver::residuals(const SqpIterate& iterate, const Vec& x0) {
  const int N = nlp_.dims.N;
  qp::KktResiduals res;
  for (int k = 0; k <= N; ++k) {
    const bool terminal = k == N;
    const int nx = nlp_.dims.nx[k];
    const int nu = terminal ? 0 : nlp_.dims.nu[k];
    const StageConstraints& c = nlp_.constraints[k];
    const RowBlocks rows = stage_rows(nlp_, k);

    DenseMatrix h_unused;
    Vec grad;
    // gradient of the stage cost; Hessian mode only affects h_unused
    stage_cost_quadratic(k, iterate,
                         std::holds_alternative<ExternalCost>(nlp_.cost[k].spec)
                             ? HessianMode::Exact
                             : HessianMode::GaussNewton,
                         h_unused, grad);

    Vec gx(grad.begin(), grad.begin() + nx);
    Vec gu(grad.begin() + nx, grad.end());

    if (!terminal) {
      sim::SimIn in;
      in.x0 = iterate.x[k];
      in.u = iterate.u[k];
      in.t_interval = nlp_.dynamics[k].config.t_interval;
      in.n_steps = nlp_.dynamics[k].config.n_steps;
      in.z_init = iterate.z[k];
      in.seed = iterate.pi[k];
      in.want_adjoint = true;
      sim::SimOut out = erk_index_[k] >= 0 ? erk_[erk_index_[k]].simulate(in)
                                           : irk_[irk_index_[k]].simulate(in);
      t_integration_accum_ += out.timings.total;
      for (int i = 0; i < nx; ++i) gx[i] += out.adjoint[i];
      for (int i = 0; i < nu; ++i) gu[i] += out.adjoint[nx + i];
      // dynamics residual
      Vec d = out.x_next;
      linalg::axpy(-1.0, iterate.x[k + 1], d);
      res.equality = std::max(res.equality, linalg::norm_inf(d));
    }
    if (k > 0) linalg::axpy(-1.0, iterate.pi[k - 1], gx);

    // row values and Jacobian contributions
    Vec lam_diff(rows.total);
    for (int i = 0; i < rows.total; ++i) lam_diff[i] = iterate.lam_up[k][i] - iterate.lam_lo[k][i];

    Vec v(rows.total, 0.0);
    int row = 0;
    if (k == 0)
      for (int i = 0; i < nx; ++i, ++row) {
        v[row] = iterate.x[0][i];
        gx[i] += lam_diff[row];
      }
    for (int i = 0; i < rows.n_bx; ++i, ++row) {
      v[row] = iterate.x[k][c.bx.index[i]];
      gx[c.bx.index[i]] += lam_diff[row];
    }
    for (int i = 0; i < rows.n_bu; ++i, ++row) {
      v[row] = iterate.u[k][c.bu.index[i]];
      gu[c.bu.index[i]] += lam_diff[row];
    }
    for (int i = 0; i < rows.n_lin; ++i, ++row) {
      double acc = 0.0;
      for (int j = 0; j < nx; ++j) acc += c.cx(i, j) * iterate.x[k][j];
      for (int j = 0; j < nu; ++j) acc += c.cu(i, j) * iterate.u[k][j];
      v[row] = acc;
      for (int j = 0; j < nx; ++j) gx[j] += c.cx(i, j) * lam_diff[row];
      for (int j = 0; j < nu; ++j) gu[j] += c.cu(i, j) * lam_diff[row];
    }
    if (rows.n_nonl > 0) {
      Bindings in;
      in[Block::X] = iterate.x[k];
      if (!terminal) in[Block::U] = iterate.u[k];
      const Block wrt_xu[] = {Block::X, Block::U};
      const Block wrt_x[] = {Block::X};
      Vec g(rows.n_nonl);
      c.g_nonl->eval(in, g);
      DenseMatrix jac;
      c.g_nonl->jacobian(in, terminal ? std::span<const Block>(wrt_x)
                                      : std::span<const Block>(wrt_xu), jac);
      for (int i = 0; i < rows.n_nonl; ++i, ++row) {
        v[row] = g[i];
        for (int j = 0; j < nx; ++j) gx[j] += jac(i, j) * lam_diff[row];
        for (int j = 0; j < nu; ++j) gu[j] += jac(i, nx + j) * lam_diff[row];
      }
    }
    res.stationarity = std::max(res.stationarity, linalg::norm_inf(gx));
    if (!terminal) res.stationarity = std::max(res.stationarity, linalg::norm_inf(gu));

    // bounds for the stacked rows
    Vec lb(rows.total, -qp::kInf), ub(rows.total, qp::kInf);
    row = 0;
    if (k == 0)
      for (int i = 0; i < nx; ++i, ++row) {
        lb[row] = x0[i];
        ub[row] = x0[i];
      }
    for (int i = 0; i < rows.n_bx; ++i, ++row) {
      lb[row] = c.bx.lb[i];
      ub[row] = c.bx.ub[i];
    }
    for (int i = 0; i < rows.n_bu; ++i, ++row) {
      lb[row] = c.bu.lb[i];
      ub[row] = c.bu.ub[i];
    }
    for (int i = 0; i < rows.n_lin; ++i, ++row) {
      lb[row] = c.cl[i];
      ub[row] = c.cub[i];
    }
    for (int i = 0; i < rows.n_nonl; ++i, ++row) {
      lb[row] = c.gl[i];
      ub[row] = c.gu[i];
    }

    // slack stationarity, inequality violation, complementarity
    std::vector<int> row_slack(rows.total, -1);
    for (size_t j = 0; j < c.soft.size(); ++j) row_slack[rows.x0_rows + c.soft[j].row] = int(j);
    Vec gs(c.soft.size());
    for (size_t j = 0; j < c.soft.size(); ++j)
      gs[j] = 2.0 * c.soft[j].beta * iterate.s[k][j] + c.soft[j].alpha - iterate.lam_s[k][j];
    for (int i = 0; i < rows.total; ++i) {
      const double relax = row_slack[i] >= 0 ? iterate.s[k][row_slack[i]] : 0.0;
      if (row_slack[i] >= 0)
        gs[row_slack[i]] -= iterate.lam_lo[k][i] + iterate.lam_up[k][i];
      if (lb[i] > -qp::kInf) {
        const double dist = v[i] + relax - lb[i];
        res.inequality = std::max(res.inequality, std::max(0.0, -dist));
        res.complementarity =
            std::max(res.complementarity, std::abs(iterate.lam_lo[k][i] * dist));
      }
      if (ub[i] < qp::kInf) {
        const double dist = ub[i] - v[i] + relax;
        res.inequality = std::max(res.inequality, std::max(0.0, -dist));
        res.complementarity =
            std::max(res.complementarity, std::abs(iterate.lam_up[k][i] * dist));
      }
    }
    for (size_t j = 0; j < c.soft.size(); ++j) {
      res.inequality = std::max(res.inequality, std::max(0.0, -iterate.s[k][j]));
      res.complementarity =
          std::max(res.complementarity, std::abs(iterate.lam_s[k][j] * iterate.s[k][j]));
      res.stationarity = std::max(res.stationarity, std::abs(gs[j]));
    }
  }
  return res;
}

bool SqpSolver::qp_step(const qp::OcpQp& qp, qp::QpSolution& sol, int& qp_iters, double& t_qp,
                        bool warm_start) {
  const double t0 = now_seconds();
  bool ok = false;
  qp::IpmOptions ipm = opts_.qp;
  ipm.warm_start = warm_start && opts_.warm_start_qp;

  if (opts_.backend == QpBackend::CondensedDenseIpm) {
    auto [dense, data] = qp::full_condense(qp);
    auto [dsol, stats] =
        qp::solve_dense_qp_ipm(dense, ipm, warm_dense_ ? &*warm_dense_ : nullptr);
    if (dsol.status != qp::QpStatus::Solved && ipm.warm_start) {
      // a stale warm point can defeat the interior-point method; retry cold
      ipm.warm_start = false;
      std::tie(dsol, stats) = qp::solve_dense_qp_ipm(dense, ipm);
    }
    qp_iters = stats.iterations;
    warm_dense_ = dsol;
    sol = qp::expand(qp, data, dsol);
    ok = dsol.status == qp::QpStatus::Solved ||
         (opts_.qp_accept_residual > 0.0 && sol.residuals.max() <= opts_.qp_accept_residual);
  } else if (opts_.partial_condensing_n2 >= 1 && opts_.partial_condensing_n2 < qp.dims.N) {
    auto [pqp, data] = qp::partial_condense(qp, opts_.partial_condensing_n2);
    auto [psol, stats] =
        qp::solve_ocp_qp_ipm(pqp, ipm, warm_partial_ ? &*warm_partial_ : nullptr);
    if (psol.status != qp::QpStatus::Solved && ipm.warm_start) {
      ipm.warm_start = false;
      std::tie(psol, stats) = qp::solve_ocp_qp_ipm(pqp, ipm);
    }
    qp_iters = stats.iterations;
    warm_partial_ = psol;
    sol = qp::partial_expand(qp, data, psol);
    ok = psol.status == qp::QpStatus::Solved ||
         (opts_.qp_accept_residual > 0.0 && sol.residuals.max() <= opts_.qp_accept_residual);
  } else {
    auto [ssol, stats] =
        qp::solve_ocp_qp_ipm(qp, ipm, warm_structured_ ? &*warm_structured_ : nullptr);
    if (ssol.status != qp::QpStatus::Solved && ipm.warm_start) {
      ipm.warm_start = false;
      std::tie(ssol, stats) = qp::solve_ocp_qp_ipm(qp, ipm);
    }
    qp_iters = stats.iterations;
    ok = ssol.status == qp::QpStatus::Solved ||
         (opts_.qp_accept_residual > 0.0 && ssol.residuals.max() <= opts_.qp_accept_residual);
    warm_structured_ = ssol;
    sol = std::move(ssol);
  }
  t_qp = now_seconds() - t0;
  return ok;
}

double SqpSolver::apply_full_step(SqpIterate& iterate, const qp::QpSolution& sol) const {
  const int N = nlp_.dims.N;
  double step = 0.0;
  for (int k = 0; k <= N; ++k) {
    step = std::max(step, linalg::norm_inf(sol.x[k]));
    linalg::axpy(1.0, sol.x[k], iterate.x[k]);
    if (k < N) {
      step = std::max(step, linalg::norm_inf(sol.u[k]));
      linalg::axpy(1.0, sol.u[k], iterate.u[k]);
      iterate.pi[k] = sol.pi[k];
    }
    iterate.s[k] = sol.s[k];
    iterate.lam_lo[k] = sol.lam_lo[k];
    iterate.lam_up[k] = sol.lam_up[k];
    iterate.lam_s[k] = sol.lam_s[k];
  }
  return step;
}

std::pair<SqpIterate, SqpStats> SqpSolver::solve(const Vec& x0, SqpIterate iterate) {
  const double t0 = now_seconds();
  SqpStats stats;

  for (int iter = 0; iter <= opts_.max_iter; ++iter) {
    SqpIterationRecord rec;
    t_integration_accum_ = 0.0;
    rec.residuals = residuals(iterate, x0);
    rec.t_integration = t_integration_accum_;
    stats.history.push_back(rec);

    if (rec.residuals.stationarity <= opts_.tol_stat && rec.residuals.equality <= opts_.tol_eq &&
        rec.residuals.inequality <= opts_.tol_ineq &&
        rec.residuals.complementarity <= opts_.tol_comp) {
      stats.status = SqpStatus::Converged;
      stats.iterations = iter;
      stats.t_total = now_seconds() - t0;
      return {std::move(iterate), std::move(stats)};
    }
    if (iter == opts_.max_iter) break;

    SqpIterationRecord& r = stats.history.back();
    t_integration_accum_ = 0.0;
    const double t_lin0 = now_seconds();
    qp::OcpQp qp = linearize(iterate, x0);
    r.t_integration += t_integration_accum_;
    r.t_linearize = now_seconds() - t_lin0 - t_integration_accum_;

    qp::QpSolution sol;
    if (!qp_step(qp, sol, r.qp_iterations, r.t_qp, /*warm_start=*/false)) {
      stats.status = SqpStatus::QpFailure;
      stats.iterations = iter;
      stats.t_total = now_seconds() - t0;
      return {std::move(iterate), std::move(stats)};
    }
    r.step_norm = apply_full_step(iterate, sol);
    for (int k = 0; k < nlp_.dims.N; ++k)
      if (!scratch_z_[k].empty()) iterate.z[k] = scratch_z_[k];
  }

  stats.status = SqpStatus::MaxIter;
  stats.iterations = opts_.max_iter;
  stats.t_total = now_seconds() - t0;
  return {std::move(iterate), std::move(stats)};
}

std::pair<SqpIterate, SqpStats> SqpSolver::rti_step(const Vec& x0, SqpIterate iterate) {
  const double t0 = now_seconds();
  SqpStats stats;
  SqpIterationRecord rec;

  if (opts_.rti_shift) {
    // shift states/controls one stage forward, duplicating the tail
    const int N = nlp_.dims.N;
    for (int k = 0; k + 1 <= N; ++k) iterate.x[k] = iterate.x[k + 1];
    for (int k = 0; k + 1 < N; ++k) {
      iterate.u[k] = iterate.u[k + 1];
      iterate.z[k] = iterate.z[k + 1];
      iterate.pi[k] = iterate.pi[k + 1];
    }
  }

  t_integration_accum_ = 0.0;
  const double t_lin0 = now_seconds();
  qp::OcpQp qp = linearize(iterate, x0);
  rec.t_integration = t_integration_accum_;
  rec.t_linearize = now_seconds() - t_lin0 - t_integration_accum_;

  qp::QpSolution sol;
  if (!qp_step(qp, sol, rec.qp_iterations, rec.t_qp, /*warm_start=*/true)) {
    stats.status = SqpStatus::QpFailure;
    stats.iterations = 0;
    stats.history.push_back(rec);
    stats.t_total = now_seconds() - t0;
    return {std::move(iterate), std::move(stats)};
  }
  rec.step_norm = apply_full_step(iterate, sol);
  for (int k = 0; k < nlp_.dims.N; ++k)
    if (!scratch_z_[k].empty()) iterate.z[k] = scratch_z_[k];
  rec.residuals = sol.residuals;  // QP-level residuals; NLP residuals on request
  stats.history.push_back(rec);
  stats.status = SqpStatus::Converged;
  stats.iterations = 1;
  stats.t_total = now_seconds() - t0;
  return {std::move(iterate), std::move(stats)};
}

}  // namespace nmpc::sqp
