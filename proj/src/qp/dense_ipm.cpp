#include <cmath>

#include "nmpc/qp/ipm.hpp"

namespace nmpc::qp {

using linalg::gemm;
using linalg::gemv;
using linalg::Trans;

namespace {

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

class DenseIpmSolver {
 public:
  DenseIpmSolver(const DenseQp& qp, const IpmOptions& opts) : qp_(qp), opts_(opts) {
    n_ = qp.n();
    m_ = qp.n_rows();
    has_lo_.resize(m_);
    has_up_.resize(m_);
    for (int i = 0; i < m_; ++i) {
      has_lo_[i] = qp.lg[i] > -kInf;
      has_up_[i] = qp.ug[i] < kInf;
      if (!has_lo_[i] && !has_up_[i])
        throw InvalidInputError("dense qp ipm: row with no finite bound");
      n_pairs_ += int(has_lo_[i]) + int(has_up_[i]);
    }
  }

  std::pair<DenseQpSolution, IpmStats> solve(const DenseQpSolution* warm);

 private:
  KktResiduals residuals();
  double mu() const;
  void solve_newton();

  const DenseQp& qp_;
  const IpmOptions& opts_;
  int n_ = 0, m_ = 0, n_pairs_ = 0;
  std::vector<bool> has_lo_, has_up_;
  Vec v_, x_;
  Vec t_lo_, t_up_, lam_lo_, lam_up_;
  Vec f_x_, f_lo_, f_up_, fc_lo_, fc_up_;
  Vec sig_lo_, sig_up_;
  Vec dx_, dt_lo_, dt_up_, dlam_lo_, dlam_up_;
  DenseMatrix lfac_, kkt_;
};

KktResiduals DenseIpmSolver::residuals() {
  KktResiduals res;
  v_.assign(m_, 0.0);
  if (m_ > 0) gemv(1.0, qp_.G, Trans::No, x_, 0.0, v_);
  f_x_ = qp_.g;
  gemv(1.0, qp_.H, Trans::No, x_, 1.0, f_x_);
  if (m_ > 0) {
    Vec lam_diff(m_);
    for (int i = 0; i < m_; ++i) lam_diff[i] = lam_up_[i] - lam_lo_[i];
    gemv(1.0, qp_.G, Trans::Yes, lam_diff, 1.0, f_x_);
  }
  res.stationarity = linalg::norm_inf(f_x_);
  for (int i = 0; i < m_; ++i) {
    f_lo_[i] = has_lo_[i] ? v_[i] - t_lo_[i] - qp_.lg[i] : 0.0;
    f_up_[i] = has_up_[i] ? v_[i] + t_up_[i] - qp_.ug[i] : 0.0;
    res.inequality = std::max(res.inequality, std::abs(f_lo_[i]));
    res.inequality = std::max(res.inequality, std::abs(f_up_[i]));
    if (has_lo_[i])
      res.complementarity = std::max(res.complementarity, std::abs(t_lo_[i] * lam_lo_[i]));
    if (has_up_[i])
      res.complementarity = std::max(res.complementarity, std::abs(t_up_[i] * lam_up_[i]));
  }
  return res;
}

double DenseIpmSolver::mu() const {
  if (n_pairs_ == 0) return 0.0;
  double acc = 0.0;
  for (int i = 0; i < m_; ++i) {
    if (has_lo_[i]) acc += t_lo_[i] * lam_lo_[i];
    if (has_up_[i]) acc += t_up_[i] * lam_up_[i];
  }
  return acc / n_pairs_;
}

void DenseIpmSolver::solve_newton() {
  // rho as in the structured solver, without slack coupling
  Vec rho(m_);
  for (int i = 0; i < m_; ++i) {
    const double lo = has_lo_[i] ? fc_lo_[i] / t_lo_[i] + sig_lo_[i] * f_lo_[i] : 0.0;
    const double up = has_up_[i] ? -fc_up_[i] / t_up_[i] + sig_up_[i] * f_up_[i] : 0.0;
    rho[i] = lo + up;
  }
  dx_ = f_x_;
  if (m_ > 0) gemv(1.0, qp_.G, Trans::Yes, rho, 1.0, dx_);
  linalg::scale(-1.0, dx_);
  Vec rhs = dx_;
  linalg::potrs(lfac_, dx_);
  if (opts_.iterative_refinement) {
    Vec res = rhs;
    gemv(-1.0, kkt_, Trans::No, dx_, 1.0, res);
    linalg::potrs(lfac_, res);
    linalg::axpy(1.0, res, dx_);
  }
  Vec gdx(m_, 0.0);
  if (m_ > 0) gemv(1.0, qp_.G, Trans::No, dx_, 0.0, gdx);
  for (int i = 0; i < m_; ++i) {
    if (has_lo_[i]) {
      dt_lo_[i] = gdx[i] + f_lo_[i];
      dlam_lo_[i] = -(fc_lo_[i] + lam_lo_[i] * dt_lo_[i]) / t_lo_[i];
    } else {
      dt_lo_[i] = dlam_lo_[i] = 0.0;
    }
    if (has_up_[i]) {
      dt_up_[i] = -gdx[i] - f_up_[i];
      dlam_up_[i] = -(fc_up_[i] + lam_up_[i] * dt_up_[i]) / t_up_[i];
    } else {
      dt_up_[i] = dlam_up_[i] = 0.0;
    }
  }
}

std::pair<DenseQpSolution, IpmStats> DenseIpmSolver::solve(const DenseQpSolution* warm) {
  IpmStats stats;
  x_.assign(n_, 0.0);
  t_lo_.assign(m_, 1.0);
  t_up_.assign(m_, 1.0);
  lam_lo_.assign(m_, 0.0);
  lam_up_.assign(m_, 0.0);
  for (int i = 0; i < m_; ++i) {
    if (has_lo_[i]) lam_lo_[i] = 1.0;
    if (has_up_[i]) lam_up_[i] = 1.0;
  }
  f_x_.resize(n_);
  f_lo_.resize(m_);
  f_up_.resize(m_);
  fc_lo_.assign(m_, 0.0);
  fc_up_.assign(m_, 0.0);
  sig_lo_.resize(m_);
  sig_up_.resize(m_);
  dx_.resize(n_);
  dt_lo_.resize(m_);
  dt_up_.resize(m_);
  dlam_lo_.resize(m_);
  dlam_up_.resize(m_);

  if (warm && opts_.warm_start) {
    const double push = opts_.warm_start_push;
    x_ = warm->v;
    Vec v(m_, 0.0);
    if (m_ > 0) gemv(1.0, qp_.G, Trans::No, x_, 0.0, v);
    for (int i = 0; i < m_; ++i) {
      lam_lo_[i] = has_lo_[i] ? std::max(warm->lam_lo[i], push) : 0.0;
      lam_up_[i] = has_up_[i] ? std::max(warm->lam_up[i], push) : 0.0;
      if (has_lo_[i]) t_lo_[i] = std::max(v[i] - qp_.lg[i], push);
      if (has_up_[i]) t_up_[i] = std::max(qp_.ug[i] - v[i], push);
    }
  } else {
    // unconstrained solve for the primal start
    potrf_bump(qp_.H, lfac_, std::max(opts_.reg_delta, 1e-6));
    x_ = qp_.g;
    linalg::scale(-1.0, x_);
    linalg::potrs(lfac_, x_);
    Vec v(m_, 0.0);
    if (m_ > 0) gemv(1.0, qp_.G, Trans::No, x_, 0.0, v);
    for (int i = 0; i < m_; ++i) {
      if (has_lo_[i]) t_lo_[i] = std::max(1.0, std::abs(v[i] - qp_.lg[i]));
      if (has_up_[i]) t_up_[i] = std::max(1.0, std::abs(qp_.ug[i] - v[i]));
    }
  }

  Vec best_x = x_, best_lam_lo = lam_lo_, best_lam_up = lam_up_;
  double best_max = std::numeric_limits<double>::infinity();
  int best_iter = 0;
  double prev_alpha = 1.0;

  for (int iter = 0; iter < opts_.max_iter; ++iter) {
    KktResiduals res = residuals();
    const double mu_now = mu();
    stats.history.push_back({res, mu_now, 0.0, 0.0});
    if (res.max() < best_max) {
      best_max = res.max();
      best_x = x_;
      best_lam_lo = lam_lo_;
      best_lam_up = lam_up_;
      best_iter = iter;
    }
    if (n_pairs_ > 0 && mu_now < 1e-19) break;
    if (mu_now < 1e-16 && iter - best_iter > 8) break;
    if (res.stationarity <= opts_.tol_stat && res.inequality <= opts_.tol_ineq &&
        res.complementarity <= opts_.tol_comp) {
      stats.status = QpStatus::Solved;
      stats.iterations = iter;
      DenseQpSolution sol{x_, lam_lo_, lam_up_, QpStatus::Solved, iter, {}};
      sol.residuals = kkt_residuals(qp_, sol);
      return {std::move(sol), std::move(stats)};
    }

    for (int i = 0; i < m_; ++i) {
      sig_lo_[i] = has_lo_[i] ? std::min(lam_lo_[i] / t_lo_[i], 1e30) : 0.0;
      sig_up_[i] = has_up_[i] ? std::min(lam_up_[i] / t_up_[i], 1e30) : 0.0;
    }
    // normal matrix H + G' Sigma G
    kkt_ = qp_.H;
    if (m_ > 0) {
      DenseMatrix sg(m_, n_);
      for (int i = 0; i < m_; ++i) {
        const double w = sig_lo_[i] + sig_up_[i];
        for (int j = 0; j < n_; ++j) sg(i, j) = w * qp_.G(i, j);
      }
      gemm(1.0, qp_.G, Trans::Yes, sg, Trans::No, 1.0, kkt_);
    }
    potrf_bump(kkt_, lfac_, opts_.reg_delta);

    // affine step
    for (int i = 0; i < m_; ++i) {
      fc_lo_[i] = has_lo_[i] ? t_lo_[i] * lam_lo_[i] : 0.0;
      fc_up_[i] = has_up_[i] ? t_up_[i] * lam_up_[i] : 0.0;
    }
    solve_newton();
    auto step_ok = [&]() {
      for (double v : dx_)
        if (!std::isfinite(v)) return false;
      for (int i = 0; i < m_; ++i)
        if (!std::isfinite(dt_lo_[i]) || !std::isfinite(dt_up_[i]) ||
            !std::isfinite(dlam_lo_[i]) || !std::isfinite(dlam_up_[i]))
          return false;
      return true;
    };
    if (!step_ok()) break;

    double sigma = 0.0;
    if (n_pairs_ > 0) {
      double a_p = 1.0, a_d = 1.0;
      for (int i = 0; i < m_; ++i) {
        if (dt_lo_[i] < 0.0) a_p = std::min(a_p, -t_lo_[i] / dt_lo_[i]);
        if (dt_up_[i] < 0.0) a_p = std::min(a_p, -t_up_[i] / dt_up_[i]);
        if (dlam_lo_[i] < 0.0) a_d = std::min(a_d, -lam_lo_[i] / dlam_lo_[i]);
        if (dlam_up_[i] < 0.0) a_d = std::min(a_d, -lam_up_[i] / dlam_up_[i]);
      }
      double mu_aff = 0.0;
      for (int i = 0; i < m_; ++i) {
        if (has_lo_[i]) mu_aff += (t_lo_[i] + a_p * dt_lo_[i]) * (lam_lo_[i] + a_d * dlam_lo_[i]);
        if (has_up_[i]) mu_aff += (t_up_[i] + a_p * dt_up_[i]) * (lam_up_[i] + a_d * dlam_up_[i]);
      }
      mu_aff /= n_pairs_;
      const double ratio = mu_now > 0.0 ? mu_aff / mu_now : 0.0;
      sigma = ratio * ratio * ratio;
      if (prev_alpha < 0.1) sigma = std::max(sigma, 0.5);
      if (prev_alpha < 0.01) sigma = std::max(sigma, 0.9);
      for (int i = 0; i < m_; ++i) {
        if (has_lo_[i]) fc_lo_[i] += dt_lo_[i] * dlam_lo_[i] - sigma * mu_now;
        if (has_up_[i]) fc_up_[i] += dt_up_[i] * dlam_up_[i] - sigma * mu_now;
      }
      solve_newton();
      if (!step_ok()) break;
    }

    double ap = 1.0, ad = 1.0;
    const double tau_eff = std::min(0.99999, std::max(opts_.tau, 1.0 - 1e3 * mu_now));
    for (int i = 0; i < m_; ++i) {
      if (dt_lo_[i] < 0.0) ap = std::min(ap, -tau_eff * t_lo_[i] / dt_lo_[i]);
      if (dt_up_[i] < 0.0) ap = std::min(ap, -tau_eff * t_up_[i] / dt_up_[i]);
      if (dlam_lo_[i] < 0.0) ad = std::min(ad, -tau_eff * lam_lo_[i] / dlam_lo_[i]);
      if (dlam_up_[i] < 0.0) ad = std::min(ad, -tau_eff * lam_up_[i] / dlam_up_[i]);
    }
    linalg::axpy(ap, dx_, x_);
    linalg::axpy(ap, dt_lo_, t_lo_);
    linalg::axpy(ap, dt_up_, t_up_);
    linalg::axpy(ad, dlam_lo_, lam_lo_);
    linalg::axpy(ad, dlam_up_, lam_up_);
    prev_alpha = std::min(ap, ad);
    stats.history.back().alpha_primal = ap;
    stats.history.back().alpha_dual = ad;

    bool finite = true;
    for (double vv : x_)
      if (!std::isfinite(vv)) finite = false;
    if (!finite) {
      stats.status = QpStatus::NumericalFailure;
      stats.iterations = iter + 1;
      DenseQpSolution sol{best_x, best_lam_lo, best_lam_up, QpStatus::NumericalFailure, iter + 1,
                          {}};
      sol.residuals = kkt_residuals(qp_, sol);
      return {std::move(sol), std::move(stats)};
    }
  }

  stats.status = QpStatus::MaxIter;
  stats.iterations = static_cast<int>(stats.history.size());
  DenseQpSolution sol{best_x, best_lam_lo, best_lam_up, QpStatus::MaxIter, stats.iterations, {}};
  sol.residuals = kkt_residuals(qp_, sol);
  return {std::move(sol), std::move(stats)};
}

}  // namespace

std::pair<DenseQpSolution, IpmStats> solve_dense_qp_ipm(const DenseQp& qp, const IpmOptions& opts,
                                                        const DenseQpSolution* warm) {
  qp.validate();
  opts.validate();
  DenseIpmSolver solver(qp, opts);
  return solver.solve(warm);
}

}  // namespace nmpc::qp
