#include <cmath>

#include "nmpc/qp/ipm.hpp"

namespace nmpc::qp {

using linalg::gemm;
using linalg::gemv;
using linalg::Trans;

namespace {

// Cholesky with a minimum-pivot bump instead of failure.
void potrf_bump(const DenseMatrix& a, DenseMatrix& l, double delta) {
  const int n = a.rows();
  l.resize(n, n);
  for (int j = 0; j < n; ++j) {
    double d = a(j, j);
    for (int k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
    if (d < delta) d = delta;
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

void chol_solve_vec(const DenseMatrix& l, Vec& b) {
  linalg::trsv(l, linalg::Uplo::Lower, Trans::No, linalg::Diag::NonUnit, b);
  linalg::trsv(l, linalg::Uplo::Lower, Trans::Yes, linalg::Diag::NonUnit, b);
}

void chol_solve_mat(const DenseMatrix& l, DenseMatrix& b) {
  linalg::trsm(l, linalg::Uplo::Lower, Trans::No, linalg::Diag::NonUnit, linalg::Side::Left, b);
  linalg::trsm(l, linalg::Uplo::Lower, Trans::Yes, linalg::Diag::NonUnit, linalg::Side::Left, b);
}

// Per-stage iterate and scratch for the interior-point iteration.
struct Stage {
  int nx, nu, ng, ns, nxn;  // nxn: next-state dim (k < N)
  bool terminal;

  std::vector<bool> has_lo, has_up;
  // iterate
  Vec x, u, s;
  Vec pi;  // k < N
  Vec t_lo, t_up, lam_lo, lam_up, lam_s;
  // residuals
  Vec f_x, f_u, f_s, f_dyn, f_lo, f_up;
  Vec v;  // row values
  // elimination quantities
  Vec sig_lo, sig_up, d_s_inv;  // diagonal weights
  DenseMatrix w_row;            // ng x ng row weight after slack elimination
  DenseMatrix qbar, sbar, rbar;
  // riccati
  DenseMatrix pmat, luu, kmat, m_ux;
  Vec pvec, kff;
  // step
  Vec dx, du, ds, dpi, dt_lo, dt_up, dlam_lo, dlam_up, dlam_s;
  Vec rho, rho2, rs_hat, gx_hat, gu_hat, b_hat;
  // slack of each row (-1 if hard)
  std::vector<int> row_slack;
};

class OcpIpmSolver {
 public:
  OcpIpmSolver(const OcpQp& qp, const IpmOptions& opts) : qp_(qp), opts_(opts) {
    const int N = qp.dims.N;
    st_.resize(N + 1);
    for (int k = 0; k <= N; ++k) {
      Stage& s = st_[k];
      s.terminal = k == N;
      s.nx = qp.dims.nx[k];
      s.nu = s.terminal ? 0 : qp.dims.nu[k];
      s.ng = qp.dims.ng[k];
      s.ns = qp.dims.ns[k];
      s.nxn = s.terminal ? 0 : qp.dims.nx[k + 1];
      const OcpQpStage& d = qp.stages[k];
      s.has_lo.resize(s.ng);
      s.has_up.resize(s.ng);
      for (int i = 0; i < s.ng; ++i) {
        s.has_lo[i] = d.lg[i] > -kInf;
        s.has_up[i] = d.ug[i] < kInf;
        if (!s.has_lo[i] && !s.has_up[i])
          throw InvalidInputError("ocp qp ipm: row with no finite bound");
      }
      s.row_slack.assign(s.ng, -1);
      for (int i = 0; i < s.ng; ++i)
        for (int j = 0; j < s.ns; ++j)
          if (d.Js(i, j) == 1.0) s.row_slack[i] = j;
      n_pairs_ += s.ns;
      for (int i = 0; i < s.ng; ++i) n_pairs_ += int(s.has_lo[i]) + int(s.has_up[i]);
    }
  }

  std::pair<QpSolution, IpmStats> solve(const QpSolution* warm);

 private:
  void initialize(const QpSolution* warm);
  void compute_row_values();
  KktResiduals compute_residuals();
  double mu() const;
  void build_elimination();
  void riccati_factor(double bump);
  void riccati_solve();
  void riccati_solve_refined();
  bool step_finite() const;
  // assemble right-hand sides from the current residuals and the
  // complementarity targets stored in fc_*
  void assemble_rhs();
  void back_substitute();
  double step_to_boundary_primal(double frac) const;
  double step_to_boundary_dual(double frac) const;
  void apply_step(double ap, double ad);
  bool iterate_finite() const;
  QpSolution extract() const;

  const OcpQp& qp_;
  const IpmOptions& opts_;
  std::vector<Stage> st_;
  DenseMatrix l0_;
  int n_pairs_ = 0;
  // complementarity targets per stage: fc = t.*lam (+ corrector - sigma mu)
  std::vector<Vec> fc_lo_, fc_up_, fc_s_;
};

void OcpIpmSolver::initialize(const QpSolution* warm) {
  const int N = qp_.dims.N;
  fc_lo_.resize(N + 1);
  fc_up_.resize(N + 1);
  fc_s_.resize(N + 1);
  for (int k = 0; k <= N; ++k) {
    Stage& s = st_[k];
    const OcpQpStage& d = qp_.stages[k];
    s.x.assign(s.nx, 0.0);
    s.u.assign(s.nu, 0.0);
    s.s.assign(s.ns, 1.0);
    s.pi.assign(s.nxn, 0.0);
    s.lam_lo.assign(s.ng, 0.0);
    s.lam_up.assign(s.ng, 0.0);
    for (int i = 0; i < s.ng; ++i) {
      if (s.has_lo[i]) s.lam_lo[i] = 1.0;
      if (s.has_up[i]) s.lam_up[i] = 1.0;
    }
    s.lam_s.assign(s.ns, 1.0);
    s.t_lo.assign(s.ng, 1.0);
    s.t_up.assign(s.ng, 1.0);
    fc_lo_[k].assign(s.ng, 0.0);
    fc_up_[k].assign(s.ng, 0.0);
    fc_s_[k].assign(s.ns, 0.0);
    s.f_x.resize(s.nx);
    s.f_u.resize(s.nu);
    s.f_s.resize(s.ns);
    s.f_dyn.resize(s.nxn);
    s.f_lo.resize(s.ng);
    s.f_up.resize(s.ng);
    s.v.resize(s.ng);
    s.sig_lo.resize(s.ng);
    s.sig_up.resize(s.ng);
    s.d_s_inv.resize(s.ns);
    s.w_row.resize(s.ng, s.ng);
    s.qbar.resize(s.nx, s.nx);
    s.sbar.resize(s.nu, s.nx);
    s.rbar.resize(s.nu, s.nu);
    s.dx.resize(s.nx);
    s.du.resize(s.nu);
    s.ds.resize(s.ns);
    s.dpi.resize(s.nxn);
    s.dt_lo.resize(s.ng);
    s.dt_up.resize(s.ng);
    s.dlam_lo.resize(s.ng);
    s.dlam_up.resize(s.ng);
    s.dlam_s.resize(s.ns);
    s.rho.resize(s.ng);
    s.rho2.resize(s.ng);
    s.rs_hat.resize(s.ns);
    s.gx_hat.resize(s.nx);
    s.gu_hat.resize(s.nu);
    s.b_hat.resize(s.nxn);
    (void)d;
  }

  if (warm && opts_.warm_start) {
    const double push = opts_.warm_start_push;
    for (int k = 0; k <= N; ++k) {
      Stage& s = st_[k];
      s.x = warm->x[k];
      if (!s.terminal) {
        s.u = warm->u[k];
        s.pi = warm->pi[k];
      }
      for (int j = 0; j < s.ns; ++j) s.s[j] = std::max(warm->s[k][j], push);
      for (int i = 0; i < s.ng; ++i) {
        s.lam_lo[i] = s.has_lo[i] ? std::max(warm->lam_lo[k][i], push) : 0.0;
        s.lam_up[i] = s.has_up[i] ? std::max(warm->lam_up[k][i], push) : 0.0;
      }
      for (int j = 0; j < s.ns; ++j) s.lam_s[j] = std::max(warm->lam_s[k][j], push);
    }
    compute_row_values();
    for (int k = 0; k <= N; ++k) {
      Stage& s = st_[k];
      const OcpQpStage& d = qp_.stages[k];
      for (int i = 0; i < s.ng; ++i) {
        const double relax = s.row_slack[i] >= 0 ? s.s[s.row_slack[i]] : 0.0;
        if (s.has_lo[i]) s.t_lo[i] = std::max(s.v[i] + relax - d.lg[i], push);
        if (s.has_up[i]) s.t_up[i] = std::max(d.ug[i] - s.v[i] + relax, push);
      }
    }
    return;
  }

  // Cold start: equality-constrained solve with zero row weights gives a
  // dynamics-feasible primal; slacks and duals start at unit scale.
  for (int k = 0; k <= N; ++k) {
    Stage& s = st_[k];
    const OcpQpStage& d = qp_.stages[k];
    s.qbar = d.Q;
    if (!s.terminal) {
      s.sbar = d.S;
      s.rbar = d.R;
    }
  }
  riccati_factor(std::max(opts_.reg_delta, 1e-6));
  for (int k = 0; k <= N; ++k) {
    Stage& s = st_[k];
    const OcpQpStage& d = qp_.stages[k];
    s.gx_hat = d.q;
    if (!s.terminal) {
      s.gu_hat = d.r;
      for (int i = 0; i < s.nxn; ++i) s.b_hat[i] = d.b[i];
    }
  }
  riccati_solve();
  for (int k = 0; k <= N; ++k) {
    Stage& s = st_[k];
    s.x = s.dx;
    if (!s.terminal) {
      s.u = s.du;
      s.pi = s.dpi;
    }
  }
  compute_row_values();
  for (int k = 0; k <= N; ++k) {
    Stage& s = st_[k];
    const OcpQpStage& d = qp_.stages[k];
    for (int i = 0; i < s.ng; ++i) {
      const double relax = s.row_slack[i] >= 0 ? 1.0 : 0.0;
      if (s.has_lo[i]) s.t_lo[i] = std::max(1.0, std::abs(s.v[i] + relax - d.lg[i]));
      if (s.has_up[i]) s.t_up[i] = std::max(1.0, std::abs(d.ug[i] - s.v[i] + relax));
    }
  }
}

void OcpIpmSolver::compute_row_values() {
  for (int k = 0; k <= qp_.dims.N; ++k) {
    Stage& s = st_[k];
    if (s.ng == 0) continue;
    const OcpQpStage& d = qp_.stages[k];
    gemv(1.0, d.Gx, Trans::No, s.x, 0.0, s.v);
    if (!s.terminal && s.nu > 0) gemv(1.0, d.Gu, Trans::No, s.u, 1.0, s.v);
  }
}

KktResiduals OcpIpmSolver::compute_residuals() {
  compute_row_values();
  KktResiduals res;
  const int N = qp_.dims.N;
  for (int k = 0; k <= N; ++k) {
    Stage& s = st_[k];
    const OcpQpStage& d = qp_.stages[k];

    // stationarity
    gemv(1.0, d.Q, Trans::No, s.x, 0.0, s.f_x);
    linalg::axpy(1.0, d.q, s.f_x);
    if (!s.terminal) {
      gemv(1.0, d.S, Trans::Yes, s.u, 1.0, s.f_x);
      gemv(1.0, d.A, Trans::Yes, s.pi, 1.0, s.f_x);
    }
    if (k > 0) linalg::axpy(-1.0, st_[k - 1].pi, s.f_x);
    if (s.ng > 0) {
      Vec lam_diff(s.ng);
      for (int i = 0; i < s.ng; ++i) lam_diff[i] = s.lam_up[i] - s.lam_lo[i];
      gemv(1.0, d.Gx, Trans::Yes, lam_diff, 1.0, s.f_x);
      if (!s.terminal && s.nu > 0) {
        gemv(1.0, d.S, Trans::No, s.x, 0.0, s.f_u);
        gemv(1.0, d.R, Trans::No, s.u, 1.0, s.f_u);
        linalg::axpy(1.0, d.r, s.f_u);
        gemv(1.0, d.B, Trans::Yes, s.pi, 1.0, s.f_u);
        gemv(1.0, d.Gu, Trans::Yes, lam_diff, 1.0, s.f_u);
      }
    } else if (!s.terminal && s.nu > 0) {
      gemv(1.0, d.S, Trans::No, s.x, 0.0, s.f_u);
      gemv(1.0, d.R, Trans::No, s.u, 1.0, s.f_u);
      linalg::axpy(1.0, d.r, s.f_u);
      gemv(1.0, d.B, Trans::Yes, s.pi, 1.0, s.f_u);
    }
    for (int j = 0; j < s.ns; ++j) s.f_s[j] = d.P_diag[j] * s.s[j] + d.p_slack[j] - s.lam_s[j];
    for (int i = 0; i < s.ng; ++i)
      if (s.row_slack[i] >= 0) s.f_s[s.row_slack[i]] -= s.lam_lo[i] + s.lam_up[i];
    res.stationarity = std::max(res.stationarity, linalg::norm_inf(s.f_x));
    if (!s.terminal) res.stationarity = std::max(res.stationarity, linalg::norm_inf(s.f_u));
    res.stationarity = std::max(res.stationarity, linalg::norm_inf(s.f_s));

    // dynamics
    if (!s.terminal) {
      for (int i = 0; i < s.nxn; ++i) s.f_dyn[i] = d.b[i] - st_[k + 1].x[i];
      gemv(1.0, d.A, Trans::No, s.x, 1.0, s.f_dyn);
      gemv(1.0, d.B, Trans::No, s.u, 1.0, s.f_dyn);
      res.equality = std::max(res.equality, linalg::norm_inf(s.f_dyn));
    }

    // inequality rows
    for (int i = 0; i < s.ng; ++i) {
      const double relax = s.row_slack[i] >= 0 ? s.s[s.row_slack[i]] : 0.0;
      s.f_lo[i] = s.has_lo[i] ? s.v[i] + relax - s.t_lo[i] - d.lg[i] : 0.0;
      s.f_up[i] = s.has_up[i] ? s.v[i] - relax + s.t_up[i] - d.ug[i] : 0.0;
      res.inequality = std::max(res.inequality, std::abs(s.f_lo[i]));
      res.inequality = std::max(res.inequality, std::abs(s.f_up[i]));
      if (s.has_lo[i])
        res.complementarity = std::max(res.complementarity, std::abs(s.t_lo[i] * s.lam_lo[i]));
      if (s.has_up[i])
        res.complementarity = std::max(res.complementarity, std::abs(s.t_up[i] * s.lam_up[i]));
    }
    for (int j = 0; j < s.ns; ++j)
      res.complementarity = std::max(res.complementarity, std::abs(s.s[j] * s.lam_s[j]));
  }
  return res;
}

double OcpIpmSolver::mu() const {
  if (n_pairs_ == 0) return 0.0;
  double acc = 0.0;
  for (const Stage& s : st_) {
    for (int i = 0; i < s.ng; ++i) {
      if (s.has_lo[i]) acc += s.t_lo[i] * s.lam_lo[i];
      if (s.has_up[i]) acc += s.t_up[i] * s.lam_up[i];
    }
    for (int j = 0; j < s.ns; ++j) acc += s.s[j] * s.lam_s[j];
  }
  return acc / n_pairs_;
}

void OcpIpmSolver::build_elimination() {
  for (int k = 0; k <= qp_.dims.N; ++k) {
    Stage& s = st_[k];
    const OcpQpStage& d = qp_.stages[k];
    for (int i = 0; i < s.ng; ++i) {
      // overflow guard only; legitimate values stay far below this cap
      s.sig_lo[i] = s.has_lo[i] ? std::min(s.lam_lo[i] / s.t_lo[i], 1e30) : 0.0;
      s.sig_up[i] = s.has_up[i] ? std::min(s.lam_up[i] / s.t_up[i], 1e30) : 0.0;
    }
    for (int j = 0; j < s.ns; ++j) {
      double dd = d.P_diag[j] + std::min(s.lam_s[j] / s.s[j], 1e30);
      for (int i = 0; i < s.ng; ++i)
        if (s.row_slack[i] == j) dd += s.sig_lo[i] + s.sig_up[i];
      s.d_s_inv[j] = 1.0 / dd;
    }
    // W = diag(sig_lo + sig_up) - Dd Js Ds^-1 Js' Dd, with Dd = sig_lo - sig_up
    s.w_row.set_zero();
    for (int i = 0; i < s.ng; ++i) s.w_row(i, i) = s.sig_lo[i] + s.sig_up[i];
    for (int i = 0; i < s.ng; ++i) {
      if (s.row_slack[i] < 0) continue;
      const double ddi = s.sig_lo[i] - s.sig_up[i];
      for (int i2 = 0; i2 < s.ng; ++i2) {
        if (s.row_slack[i2] != s.row_slack[i]) continue;
        const double ddi2 = s.sig_lo[i2] - s.sig_up[i2];
        s.w_row(i, i2) -= ddi * s.d_s_inv[s.row_slack[i]] * ddi2;
      }
    }

    // Hbar = H + [Gx Gu]' W [Gx Gu]
    s.qbar = d.Q;
    if (!s.terminal) {
      s.sbar = d.S;
      s.rbar = d.R;
    }
    if (s.ng > 0) {
      DenseMatrix wg(s.ng, s.nx);
      gemm(1.0, s.w_row, d.Gx, 0.0, wg);
      gemm(1.0, d.Gx, Trans::Yes, wg, Trans::No, 1.0, s.qbar);
      if (!s.terminal && s.nu > 0) {
        gemm(1.0, d.Gu, Trans::Yes, wg, Trans::No, 1.0, s.sbar);
        DenseMatrix wgu(s.ng, s.nu);
        gemm(1.0, s.w_row, d.Gu, 0.0, wgu);
        gemm(1.0, d.Gu, Trans::Yes, wgu, Trans::No, 1.0, s.rbar);
      }
    }
  }
}

void OcpIpmSolver::riccati_factor(double bump) {
  const int N = qp_.dims.N;
  Stage& last = st_[N];
  last.pmat = last.qbar;
  linalg::symmetrize(last.pmat);
  for (int k = N - 1; k >= 0; --k) {
    Stage& s = st_[k];
    const OcpQpStage& d = qp_.stages[k];
    const DenseMatrix& pn = st_[k + 1].pmat;
    DenseMatrix pa(s.nxn, s.nx), pb(s.nxn, s.nu);
    gemm(1.0, pn, d.A, 0.0, pa);
    gemm(1.0, pn, d.B, 0.0, pb);
    DenseMatrix m_xx = s.qbar;
    gemm(1.0, d.A, Trans::Yes, pa, Trans::No, 1.0, m_xx);
    s.m_ux = s.sbar;
    gemm(1.0, d.B, Trans::Yes, pa, Trans::No, 1.0, s.m_ux);
    DenseMatrix m_uu = s.rbar;
    gemm(1.0, d.B, Trans::Yes, pb, Trans::No, 1.0, m_uu);
    linalg::symmetrize(m_uu);

    potrf_bump(m_uu, s.luu, bump);
    s.kmat = s.m_ux;
    linalg::scale(-1.0, {s.kmat.data(), size_t(s.kmat.rows()) * s.kmat.cols()});
    chol_solve_mat(s.luu, s.kmat);

    s.pmat = m_xx;
    gemm(1.0, s.m_ux, Trans::Yes, s.kmat, Trans::No, 1.0, s.pmat);
    linalg::symmetrize(s.pmat);
  }
  potrf_bump(st_[0].pmat, l0_, bump);
}

void OcpIpmSolver::riccati_solve() {
  const int N = qp_.dims.N;
  st_[N].pvec = st_[N].gx_hat;
  for (int k = N - 1; k >= 0; --k) {
    Stage& s = st_[k];
    const OcpQpStage& d = qp_.stages[k];
    Vec tmp = st_[k + 1].pvec;
    gemv(1.0, st_[k + 1].pmat, Trans::No, s.b_hat, 1.0, tmp);
    Vec m_x = s.gx_hat;
    gemv(1.0, d.A, Trans::Yes, tmp, 1.0, m_x);
    Vec m_u = s.gu_hat;
    gemv(1.0, d.B, Trans::Yes, tmp, 1.0, m_u);
    s.kff = m_u;
    linalg::scale(-1.0, s.kff);
    chol_solve_vec(s.luu, s.kff);
    s.pvec = m_x;
    gemv(1.0, s.m_ux, Trans::Yes, s.kff, 1.0, s.pvec);
  }
  // initial stage: P_0 dx_0 = -p_0
  Stage& s0 = st_[0];
  s0.dx = s0.pvec;
  linalg::scale(-1.0, s0.dx);
  chol_solve_vec(l0_, s0.dx);
  for (int k = 0; k < N; ++k) {
    Stage& s = st_[k];
    const OcpQpStage& d = qp_.stages[k];
    s.du = s.kff;
    gemv(1.0, s.kmat, Trans::No, s.dx, 1.0, s.du);
    Stage& sn = st_[k + 1];
    sn.dx = s.b_hat;
    gemv(1.0, d.A, Trans::No, s.dx, 1.0, sn.dx);
    gemv(1.0, d.B, Trans::No, s.du, 1.0, sn.dx);
    s.dpi = sn.pvec;
    gemv(1.0, sn.pmat, Trans::No, sn.dx, 1.0, s.dpi);
  }
}

void OcpIpmSolver::riccati_solve_refined() {
  riccati_solve();
  if (!opts_.iterative_refinement) return;
  const int N = qp_.dims.N;
  // residual of the reduced equality-QP at the base step, in solver form
  std::vector<Vec> base_dx(N + 1), base_du(N), base_dpi(N);
  std::vector<Vec> r_gx(N + 1), r_gu(N), r_b(N);
  for (int k = 0; k <= N; ++k) {
    Stage& s = st_[k];
    base_dx[k] = s.dx;
    if (!s.terminal) {
      base_du[k] = s.du;
      base_dpi[k] = s.dpi;
    }
  }
  for (int k = 0; k <= N; ++k) {
    Stage& s = st_[k];
    const OcpQpStage& d = qp_.stages[k];
    r_gx[k] = s.gx_hat;
    gemv(1.0, s.qbar, Trans::No, base_dx[k], 1.0, r_gx[k]);
    if (!s.terminal) {
      gemv(1.0, s.sbar, Trans::Yes, base_du[k], 1.0, r_gx[k]);
      gemv(1.0, d.A, Trans::Yes, base_dpi[k], 1.0, r_gx[k]);
      r_gu[k] = s.gu_hat;
      gemv(1.0, s.sbar, Trans::No, base_dx[k], 1.0, r_gu[k]);
      gemv(1.0, s.rbar, Trans::No, base_du[k], 1.0, r_gu[k]);
      gemv(1.0, d.B, Trans::Yes, base_dpi[k], 1.0, r_gu[k]);
      r_b[k] = s.b_hat;
      gemv(1.0, d.A, Trans::No, base_dx[k], 1.0, r_b[k]);
      gemv(1.0, d.B, Trans::No, base_du[k], 1.0, r_b[k]);
      linalg::axpy(-1.0, base_dx[k + 1], r_b[k]);
    }
    if (k > 0) linalg::axpy(-1.0, base_dpi[k - 1], r_gx[k]);
  }
  for (int k = 0; k <= N; ++k) {
    Stage& s = st_[k];
    s.gx_hat = r_gx[k];
    if (!s.terminal) {
      s.gu_hat = r_gu[k];
      s.b_hat = r_b[k];
    }
  }
  riccati_solve();
  for (int k = 0; k <= N; ++k) {
    Stage& s = st_[k];
    linalg::axpy(1.0, base_dx[k], s.dx);
    if (!s.terminal) {
      linalg::axpy(1.0, base_du[k], s.du);
      linalg::axpy(1.0, base_dpi[k], s.dpi);
    }
  }
}

bool OcpIpmSolver::step_finite() const {
  for (const Stage& s : st_) {
    for (double v : s.dx)
      if (!std::isfinite(v)) return false;
    for (double v : s.du)
      if (!std::isfinite(v)) return false;
    for (double v : s.ds)
      if (!std::isfinite(v)) return false;
    for (double v : s.dlam_lo)
      if (!std::isfinite(v)) return false;
    for (double v : s.dlam_up)
      if (!std::isfinite(v)) return false;
    for (double v : s.dt_lo)
      if (!std::isfinite(v)) return false;
    for (double v : s.dt_up)
      if (!std::isfinite(v)) return false;
  }
  return true;
}

void OcpIpmSolver::assemble_rhs() {
  for (int k = 0; k <= qp_.dims.N; ++k) {
    Stage& s = st_[k];
    const OcpQpStage& d = qp_.stages[k];
    for (int i = 0; i < s.ng; ++i) {
      const double tl_inv_fc = s.has_lo[i] ? fc_lo_[k][i] / s.t_lo[i] : 0.0;
      const double tu_inv_fc = s.has_up[i] ? fc_up_[k][i] / s.t_up[i] : 0.0;
      const double lo_term = s.has_lo[i] ? s.sig_lo[i] * s.f_lo[i] : 0.0;
      const double up_term = s.has_up[i] ? s.sig_up[i] * s.f_up[i] : 0.0;
      s.rho[i] = tl_inv_fc + lo_term - tu_inv_fc + up_term;
      s.rho2[i] = -tl_inv_fc - lo_term - tu_inv_fc + up_term;
    }
    for (int j = 0; j < s.ns; ++j) s.rs_hat[j] = -s.f_s[j] - fc_s_[k][j] / s.s[j];
    for (int i = 0; i < s.ng; ++i)
      if (s.row_slack[i] >= 0) s.rs_hat[s.row_slack[i]] += s.rho2[i];

    // ghat = F_w + G'(rho + Dd Js Ds^-1 rhat_s)
    Vec row_term(s.ng);
    for (int i = 0; i < s.ng; ++i) {
      row_term[i] = s.rho[i];
      if (s.row_slack[i] >= 0)
        row_term[i] += (s.sig_lo[i] - s.sig_up[i]) * s.d_s_inv[s.row_slack[i]] *
                       s.rs_hat[s.row_slack[i]];
    }
    s.gx_hat = s.f_x;
    if (s.ng > 0) gemv(1.0, d.Gx, Trans::Yes, row_term, 1.0, s.gx_hat);
    if (!s.terminal) {
      s.gu_hat = s.f_u;
      if (s.ng > 0 && s.nu > 0) gemv(1.0, d.Gu, Trans::Yes, row_term, 1.0, s.gu_hat);
      for (int i = 0; i < s.nxn; ++i) s.b_hat[i] = s.f_dyn[i];
    }
  }
}

void OcpIpmSolver::back_substitute() {
  for (int k = 0; k <= qp_.dims.N; ++k) {
    Stage& s = st_[k];
    const OcpQpStage& d = qp_.stages[k];
    if (s.ng == 0 && s.ns == 0) continue;
    // row direction G dw
    Vec gdw(s.ng, 0.0);
    if (s.ng > 0) {
      gemv(1.0, d.Gx, Trans::No, s.dx, 0.0, gdw);
      if (!s.terminal && s.nu > 0) gemv(1.0, d.Gu, Trans::No, s.du, 1.0, gdw);
    }
    // ds = Ds^-1 (rhat_s - Js' Dd G dw)
    for (int j = 0; j < s.ns; ++j) s.ds[j] = s.rs_hat[j];
    for (int i = 0; i < s.ng; ++i)
      if (s.row_slack[i] >= 0)
        s.ds[s.row_slack[i]] -= (s.sig_lo[i] - s.sig_up[i]) * gdw[i];
    for (int j = 0; j < s.ns; ++j) s.ds[j] *= s.d_s_inv[j];

    for (int i = 0; i < s.ng; ++i) {
      const double ds_row = s.row_slack[i] >= 0 ? s.ds[s.row_slack[i]] : 0.0;
      if (s.has_lo[i]) {
        s.dt_lo[i] = gdw[i] + ds_row + s.f_lo[i];
        s.dlam_lo[i] = -(fc_lo_[k][i] + s.lam_lo[i] * s.dt_lo[i]) / s.t_lo[i];
      } else {
        s.dt_lo[i] = 0.0;
        s.dlam_lo[i] = 0.0;
      }
      if (s.has_up[i]) {
        s.dt_up[i] = -gdw[i] + ds_row - s.f_up[i];
        s.dlam_up[i] = -(fc_up_[k][i] + s.lam_up[i] * s.dt_up[i]) / s.t_up[i];
      } else {
        s.dt_up[i] = 0.0;
        s.dlam_up[i] = 0.0;
      }
    }
    for (int j = 0; j < s.ns; ++j)
      s.dlam_s[j] = -(fc_s_[k][j] + s.lam_s[j] * s.ds[j]) / s.s[j];
  }
}

double OcpIpmSolver::step_to_boundary_primal(double frac) const {
  double alpha = 1.0;
  for (const Stage& s : st_) {
    for (int i = 0; i < s.ng; ++i) {
      if (s.has_lo[i] && s.dt_lo[i] < 0.0) alpha = std::min(alpha, -frac * s.t_lo[i] / s.dt_lo[i]);
      if (s.has_up[i] && s.dt_up[i] < 0.0) alpha = std::min(alpha, -frac * s.t_up[i] / s.dt_up[i]);
    }
    for (int j = 0; j < s.ns; ++j)
      if (s.ds[j] < 0.0) alpha = std::min(alpha, -frac * s.s[j] / s.ds[j]);
  }
  return alpha;
}

double OcpIpmSolver::step_to_boundary_dual(double frac) const {
  double alpha = 1.0;
  for (const Stage& s : st_) {
    for (int i = 0; i < s.ng; ++i) {
      if (s.has_lo[i] && s.dlam_lo[i] < 0.0)
        alpha = std::min(alpha, -frac * s.lam_lo[i] / s.dlam_lo[i]);
      if (s.has_up[i] && s.dlam_up[i] < 0.0)
        alpha = std::min(alpha, -frac * s.lam_up[i] / s.dlam_up[i]);
    }
    for (int j = 0; j < s.ns; ++j)
      if (s.dlam_s[j] < 0.0) alpha = std::min(alpha, -frac * s.lam_s[j] / s.dlam_s[j]);
  }
  return alpha;
}

void OcpIpmSolver::apply_step(double ap, double ad) {
  for (Stage& s : st_) {
    linalg::axpy(ap, s.dx, s.x);
    linalg::axpy(ap, s.du, s.u);
    linalg::axpy(ap, s.ds, s.s);
    linalg::axpy(ap, s.dt_lo, s.t_lo);
    linalg::axpy(ap, s.dt_up, s.t_up);
    linalg::axpy(ad, s.dpi, s.pi);
    linalg::axpy(ad, s.dlam_lo, s.lam_lo);
    linalg::axpy(ad, s.dlam_up, s.lam_up);
    linalg::axpy(ad, s.dlam_s, s.lam_s);
  }
}

bool OcpIpmSolver::iterate_finite() const {
  for (const Stage& s : st_) {
    for (double v : s.x)
      if (!std::isfinite(v)) return false;
    for (double v : s.u)
      if (!std::isfinite(v)) return false;
    for (double v : s.lam_lo)
      if (!std::isfinite(v)) return false;
    for (double v : s.lam_up)
      if (!std::isfinite(v)) return false;
  }
  return true;
}

QpSolution OcpIpmSolver::extract() const {
  QpSolution sol = QpSolution::zeros(qp_.dims);
  for (int k = 0; k <= qp_.dims.N; ++k) {
    const Stage& s = st_[k];
    sol.x[k] = s.x;
    sol.s[k] = s.s;
    sol.lam_lo[k] = s.lam_lo;
    sol.lam_up[k] = s.lam_up;
    sol.lam_s[k] = s.lam_s;
    if (!s.terminal) {
      sol.u[k] = s.u;
      sol.pi[k] = s.pi;
    }
  }
  // mask off duals of non-existent bounds
  for (int k = 0; k <= qp_.dims.N; ++k) {
    const Stage& s = st_[k];
    for (int i = 0; i < s.ng; ++i) {
      if (!s.has_lo[i]) sol.lam_lo[k][i] = 0.0;
      if (!s.has_up[i]) sol.lam_up[k][i] = 0.0;
    }
  }
  return sol;
}

std::pair<QpSolution, IpmStats> OcpIpmSolver::solve(const QpSolution* warm) {
  IpmStats stats;
  initialize(warm);

  QpSolution best = extract();
  double best_max = std::numeric_limits<double>::infinity();
  int best_iter = 0;
  double prev_alpha = 1.0;

  for (int iter = 0; iter < opts_.max_iter; ++iter) {
    KktResiduals res = compute_residuals();
    const double mu_now = mu();
    stats.history.push_back({res, mu_now, 0.0, 0.0});

    if (res.max() < best_max) {
      best_max = res.max();
      best = extract();
      best_iter = iter;
    }

    if (res.stationarity <= opts_.tol_stat && res.equality <= opts_.tol_eq &&
        res.inequality <= opts_.tol_ineq && res.complementarity <= opts_.tol_comp) {
      stats.status = QpStatus::Solved;
      stats.iterations = iter;
      QpSolution sol = extract();
      sol.status = QpStatus::Solved;
      sol.iterations = iter;
      sol.residuals = kkt_residuals(qp_, sol);
      return {std::move(sol), std::move(stats)};
    }
    // residuals oscillate legitimately at moderate mu; only treat a stall as
    // final once the barrier is essentially exhausted
    if (n_pairs_ > 0 && mu_now < 1e-19) break;
    if (mu_now < 1e-16 && iter - best_iter > 8) break;

    build_elimination();
    riccati_factor(opts_.reg_delta);

    // predictor (affine scaling) step
    for (int k = 0; k <= qp_.dims.N; ++k) {
      Stage& s = st_[k];
      for (int i = 0; i < s.ng; ++i) {
        fc_lo_[k][i] = s.has_lo[i] ? s.t_lo[i] * s.lam_lo[i] : 0.0;
        fc_up_[k][i] = s.has_up[i] ? s.t_up[i] * s.lam_up[i] : 0.0;
      }
      for (int j = 0; j < s.ns; ++j) fc_s_[k][j] = s.s[j] * s.lam_s[j];
    }
    assemble_rhs();
    riccati_solve_refined();
    back_substitute();
    if (!step_finite()) break;  // factorization breakdown; keep the best iterate

    double sigma = 0.0;
    if (n_pairs_ > 0) {
      const double a_p = step_to_boundary_primal(1.0);
      const double a_d = step_to_boundary_dual(1.0);
      double mu_aff = 0.0;
      for (const Stage& s : st_) {
        for (int i = 0; i < s.ng; ++i) {
          if (s.has_lo[i])
            mu_aff += (s.t_lo[i] + a_p * s.dt_lo[i]) * (s.lam_lo[i] + a_d * s.dlam_lo[i]);
          if (s.has_up[i])
            mu_aff += (s.t_up[i] + a_p * s.dt_up[i]) * (s.lam_up[i] + a_d * s.dlam_up[i]);
        }
        for (int j = 0; j < s.ns; ++j)
          mu_aff += (s.s[j] + a_p * s.ds[j]) * (s.lam_s[j] + a_d * s.dlam_s[j]);
      }
      mu_aff /= n_pairs_;
      const double ratio = mu_now > 0.0 ? mu_aff / mu_now : 0.0;
      sigma = ratio * ratio * ratio;
      // blocked steps (typical after a stale warm start) need re-centering
      // before the predictor can make progress again
      if (prev_alpha < 0.1) sigma = std::max(sigma, 0.5);
      if (prev_alpha < 0.01) sigma = std::max(sigma, 0.9);

      // corrector: fc += dt_aff .* dlam_aff - sigma mu
      for (int k = 0; k <= qp_.dims.N; ++k) {
        Stage& s = st_[k];
        for (int i = 0; i < s.ng; ++i) {
          if (s.has_lo[i]) fc_lo_[k][i] += s.dt_lo[i] * s.dlam_lo[i] - sigma * mu_now;
          if (s.has_up[i]) fc_up_[k][i] += s.dt_up[i] * s.dlam_up[i] - sigma * mu_now;
        }
        for (int j = 0; j < s.ns; ++j) fc_s_[k][j] += s.ds[j] * s.dlam_s[j] - sigma * mu_now;
      }
      assemble_rhs();
      riccati_solve_refined();
      back_substitute();
      if (!step_finite()) break;
    }

    // sharpen the fraction-to-boundary as the barrier vanishes
    const double tau_eff = std::min(0.99999, std::max(opts_.tau, 1.0 - 1e3 * mu_now));
    const double ap = step_to_boundary_primal(tau_eff);
    const double ad = step_to_boundary_dual(tau_eff);
    apply_step(ap, ad);
    prev_alpha = std::min(ap, ad);
    stats.history.back().alpha_primal = ap;
    stats.history.back().alpha_dual = ad;

    if (!iterate_finite()) {
      stats.status = QpStatus::NumericalFailure;
      stats.iterations = iter + 1;
      QpSolution sol = std::move(best);  // last finite iterate
      sol.status = QpStatus::NumericalFailure;
      sol.iterations = iter + 1;
      sol.residuals = kkt_residuals(qp_, sol);
      return {std::move(sol), std::move(stats)};
    }
  }

  stats.status = QpStatus::MaxIter;
  stats.iterations = static_cast<int>(stats.history.size());
  QpSolution sol = std::move(best);
  sol.status = QpStatus::MaxIter;
  sol.iterations = stats.iterations;
  sol.residuals = kkt_residuals(qp_, sol);
  return {std::move(sol), std::move(stats)};
}

}  // namespace

void IpmOptions::validate() const {
  if (tol_stat <= 0 || tol_eq <= 0 || tol_ineq <= 0 || tol_comp <= 0)
    throw InvalidInputError("ipm options: tolerances must be positive");
  if (tau <= 0.0 || tau >= 1.0) throw InvalidInputError("ipm options: tau must be in (0,1)");
}

std::pair<QpSolution, IpmStats> solve_ocp_qp_ipm(const OcpQp& qp, const IpmOptions& opts,
                                                 const QpSolution* warm) {
  qp.validate();
  opts.validate();
  OcpIpmSolver solver(qp, opts);
  return solver.solve(warm);
}

}  // namespace nmpc::qp
