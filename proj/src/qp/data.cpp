#include "nmpc/qp/data.hpp"

#include <algorithm>
#include <cmath>

namespace nmpc::qp {

void OcpQpDims::validate() const {
  if (N < 0) throw DimensionError("ocp qp dims: negative horizon");
  if (static_cast<int>(nx.size()) != N + 1 || static_cast<int>(nu.size()) != N ||
      static_cast<int>(ng.size()) != N + 1 || static_cast<int>(ns.size()) != N + 1)
    throw DimensionError("ocp qp dims: vector lengths do not match the horizon");
  auto nonneg = [](const std::vector<int>& v) {
    return std::all_of(v.begin(), v.end(), [](int x) { return x >= 0; });
  };
  if (!nonneg(nx) || !nonneg(nu) || !nonneg(ng) || !nonneg(ns))
    throw DimensionError("ocp qp dims: negative entry");
}

void OcpQp::validate() const {
  dims.validate();
  if (static_cast<int>(stages.size()) != dims.N + 1)
    throw DimensionError("ocp qp: stage count mismatch");
  for (int k = 0; k <= dims.N; ++k) {
    const OcpQpStage& st = stages[k];
    const int nx = dims.nx[k], ng = dims.ng[k], ns = dims.ns[k];
    const int nu = k < dims.N ? dims.nu[k] : 0;
    if (st.Q.rows() != nx || st.Q.cols() != nx) throw DimensionError("ocp qp: Q shape");
    if (static_cast<int>(st.q.size()) != nx) throw DimensionError("ocp qp: q length");
    if (nu > 0 || k < dims.N) {
      if (st.R.rows() != nu || st.R.cols() != nu) throw DimensionError("ocp qp: R shape");
      if (st.S.rows() != nu || st.S.cols() != nx) throw DimensionError("ocp qp: S shape");
      if (static_cast<int>(st.r.size()) != nu) throw DimensionError("ocp qp: r length");
    }
    if (k < dims.N) {
      if (st.A.rows() != dims.nx[k + 1] || st.A.cols() != nx)
        throw DimensionError("ocp qp: A shape");
      if (st.B.rows() != dims.nx[k + 1] || st.B.cols() != nu)
        throw DimensionError("ocp qp: B shape");
      if (static_cast<int>(st.b.size()) != dims.nx[k + 1]) throw DimensionError("ocp qp: b length");
    }
    if (st.Gx.rows() != ng || st.Gx.cols() != nx) throw DimensionError("ocp qp: Gx shape");
    if (k < dims.N && (st.Gu.rows() != ng || st.Gu.cols() != nu))
      throw DimensionError("ocp qp: Gu shape");
    if (static_cast<int>(st.lg.size()) != ng || static_cast<int>(st.ug.size()) != ng)
      throw DimensionError("ocp qp: bound lengths");
    if (st.Js.rows() != ng || st.Js.cols() != ns) throw DimensionError("ocp qp: Js shape");
    if (static_cast<int>(st.P_diag.size()) != ns || static_cast<int>(st.p_slack.size()) != ns)
      throw DimensionError("ocp qp: slack penalty lengths");
    for (int i = 0; i < ns; ++i)
      if (!(st.P_diag[i] > 0.0)) throw InvalidInputError("ocp qp: slack penalty must be positive");
    for (int i = 0; i < ng; ++i) {
      if (st.lg[i] > st.ug[i]) throw InvalidInputError("ocp qp: row with lg > ug");
      int count = 0;
      for (int j = 0; j < ns; ++j) {
        const double v = st.Js(i, j);
        if (v != 0.0 && v != 1.0) throw InvalidInputError("ocp qp: Js must be 0/1");
        if (v == 1.0) ++count;
      }
      if (count > 1) throw InvalidInputError("ocp qp: Js row with more than one slack");
    }
  }
}

OcpQp OcpQp::zeros(const OcpQpDims& dims) {
  dims.validate();
  OcpQp qp;
  qp.dims = dims;
  qp.stages.resize(dims.N + 1);
  for (int k = 0; k <= dims.N; ++k) {
    OcpQpStage& st = qp.stages[k];
    const int nx = dims.nx[k], ng = dims.ng[k], ns = dims.ns[k];
    const int nu = k < dims.N ? dims.nu[k] : 0;
    st.Q.resize(nx, nx);
    st.S.resize(nu, nx);
    st.R.resize(nu, nu);
    st.q.assign(nx, 0.0);
    st.r.assign(nu, 0.0);
    if (k < dims.N) {
      st.A.resize(dims.nx[k + 1], nx);
      st.B.resize(dims.nx[k + 1], nu);
      st.b.assign(dims.nx[k + 1], 0.0);
    }
    st.Gx.resize(ng, nx);
    st.Gu.resize(ng, nu);
    st.lg.assign(ng, -kInf);
    st.ug.assign(ng, kInf);
    st.Js.resize(ng, ns);
    st.P_diag.assign(ns, 1.0);
    st.p_slack.assign(ns, 0.0);
  }
  return qp;
}

void DenseQp::validate() const {
  if (H.rows() != H.cols()) throw DimensionError("dense qp: H must be square");
  if (static_cast<int>(g.size()) != H.rows()) throw DimensionError("dense qp: g length");
  if (!G.empty() && G.cols() != H.rows()) throw DimensionError("dense qp: G columns");
  if (static_cast<int>(lg.size()) != G.rows() || static_cast<int>(ug.size()) != G.rows())
    throw DimensionError("dense qp: bound lengths");
  for (int i = 0; i < G.rows(); ++i)
    if (lg[i] > ug[i]) throw InvalidInputError("dense qp: row with lg > ug");
}

const char* to_string(QpStatus s) {
  switch (s) {
    case QpStatus::Solved: return "solved";
    case QpStatus::MaxIter: return "max_iter";
    case QpStatus::NumericalFailure: return "numerical_failure";
  }
  return "?";
}

double KktResiduals::max() const {
  return std::max(std::max(stationarity, equality), std::max(inequality, complementarity));
}

QpSolution QpSolution::zeros(const OcpQpDims& dims) {
  QpSolution sol;
  sol.x.resize(dims.N + 1);
  sol.u.resize(dims.N);
  sol.s.resize(dims.N + 1);
  sol.pi.resize(dims.N);
  sol.lam_lo.resize(dims.N + 1);
  sol.lam_up.resize(dims.N + 1);
  sol.lam_s.resize(dims.N + 1);
  for (int k = 0; k <= dims.N; ++k) {
    sol.x[k].assign(dims.nx[k], 0.0);
    sol.s[k].assign(dims.ns[k], 0.0);
    sol.lam_lo[k].assign(dims.ng[k], 0.0);
    sol.lam_up[k].assign(dims.ng[k], 0.0);
    sol.lam_s[k].assign(dims.ns[k], 0.0);
    if (k < dims.N) {
      sol.u[k].assign(dims.nu[k], 0.0);
      sol.pi[k].assign(dims.nx[k + 1], 0.0);
    }
  }
  return sol;
}

namespace {

// row values v = Gx x + Gu u
Vec row_values(const OcpQpStage& st, const Vec& x, const Vec* u) {
  Vec v(st.Gx.rows(), 0.0);
  linalg::gemv(1.0, st.Gx, linalg::Trans::No, x, 0.0, v);
  if (u && st.Gu.cols() > 0) linalg::gemv(1.0, st.Gu, linalg::Trans::No, *u, 1.0, v);
  return v;
}

}  // namespace

KktResiduals kkt_residuals(const OcpQp& qp, const QpSolution& sol) {
  KktResiduals res;
  const int N = qp.dims.N;
  for (int k = 0; k <= N; ++k) {
    const OcpQpStage& st = qp.stages[k];
    const int nx = qp.dims.nx[k], ng = qp.dims.ng[k], ns = qp.dims.ns[k];
    const int nu = k < N ? qp.dims.nu[k] : 0;
    const Vec& x = sol.x[k];
    const Vec* u = k < N ? &sol.u[k] : nullptr;

    // stationarity in x: Q x + S'u + q + A'pi_k - pi_{k-1} + Gx'(lam_up - lam_lo)
    Vec gx(nx, 0.0);
    linalg::gemv(1.0, st.Q, linalg::Trans::No, x, 0.0, gx);
    if (u) linalg::gemv(1.0, st.S, linalg::Trans::Yes, *u, 1.0, gx);
    linalg::axpy(1.0, st.q, gx);
    if (k < N) linalg::gemv(1.0, st.A, linalg::Trans::Yes, sol.pi[k], 1.0, gx);
    if (k > 0) linalg::axpy(-1.0, sol.pi[k - 1], gx);
    Vec lam_diff(ng);
    for (int i = 0; i < ng; ++i) lam_diff[i] = sol.lam_up[k][i] - sol.lam_lo[k][i];
    linalg::gemv(1.0, st.Gx, linalg::Trans::Yes, lam_diff, 1.0, gx);
    res.stationarity = std::max(res.stationarity, linalg::norm_inf(gx));

    if (u) {
      Vec gu(nu, 0.0);
      linalg::gemv(1.0, st.S, linalg::Trans::No, x, 0.0, gu);
      linalg::gemv(1.0, st.R, linalg::Trans::No, *u, 1.0, gu);
      linalg::axpy(1.0, st.r, gu);
      linalg::gemv(1.0, st.B, linalg::Trans::Yes, sol.pi[k], 1.0, gu);
      linalg::gemv(1.0, st.Gu, linalg::Trans::Yes, lam_diff, 1.0, gu);
      res.stationarity = std::max(res.stationarity, linalg::norm_inf(gu));
    }

    // stationarity in s: P s + p - Js'(lam_lo + lam_up) - lam_s
    if (ns > 0) {
      Vec gs(ns, 0.0);
      for (int j = 0; j < ns; ++j) gs[j] = st.P_diag[j] * sol.s[k][j] + st.p_slack[j];
      for (int i = 0; i < ng; ++i)
        for (int j = 0; j < ns; ++j)
          if (st.Js(i, j) == 1.0) gs[j] -= sol.lam_lo[k][i] + sol.lam_up[k][i];
      for (int j = 0; j < ns; ++j) gs[j] -= sol.lam_s[k][j];
      res.stationarity = std::max(res.stationarity, linalg::norm_inf(gs));
    }

    // dynamics
    if (k < N) {
      Vec d = st.b;
      linalg::gemv(1.0, st.A, linalg::Trans::No, x, 1.0, d);
      linalg::gemv(1.0, st.B, linalg::Trans::No, *u, 1.0, d);
      linalg::axpy(-1.0, sol.x[k + 1], d);
      res.equality = std::max(res.equality, linalg::norm_inf(d));
    }

    // inequality violation and complementarity
    Vec v = row_values(st, x, u);
    for (int i = 0; i < ng; ++i) {
      double relax = 0.0;
      for (int j = 0; j < ns; ++j)
        if (st.Js(i, j) == 1.0) relax += sol.s[k][j];
      if (st.lg[i] > -kInf) {
        const double dist = v[i] + relax - st.lg[i];
        res.inequality = std::max(res.inequality, std::max(0.0, -dist));
        res.complementarity = std::max(res.complementarity, std::abs(sol.lam_lo[k][i] * dist));
      }
      if (st.ug[i] < kInf) {
        const double dist = st.ug[i] - v[i] + relax;
        res.inequality = std::max(res.inequality, std::max(0.0, -dist));
        res.complementarity = std::max(res.complementarity, std::abs(sol.lam_up[k][i] * dist));
      }
    }
    for (int j = 0; j < ns; ++j) {
      res.inequality = std::max(res.inequality, std::max(0.0, -sol.s[k][j]));
      res.complementarity =
          std::max(res.complementarity, std::abs(sol.lam_s[k][j] * sol.s[k][j]));
    }
  }
  return res;
}

KktResiduals kkt_residuals(const DenseQp& qp, const DenseQpSolution& sol) {
  KktResiduals res;
  const int n = qp.n(), m = qp.n_rows();
  Vec grad = qp.g;
  linalg::gemv(1.0, qp.H, linalg::Trans::No, sol.v, 1.0, grad);
  Vec lam_diff(m);
  for (int i = 0; i < m; ++i) lam_diff[i] = sol.lam_up[i] - sol.lam_lo[i];
  if (m > 0) linalg::gemv(1.0, qp.G, linalg::Trans::Yes, lam_diff, 1.0, grad);
  res.stationarity = linalg::norm_inf(grad);

  Vec v(m, 0.0);
  if (m > 0) linalg::gemv(1.0, qp.G, linalg::Trans::No, sol.v, 0.0, v);
  for (int i = 0; i < m; ++i) {
    if (qp.lg[i] > -kInf) {
      const double dist = v[i] - qp.lg[i];
      res.inequality = std::max(res.inequality, std::max(0.0, -dist));
      res.complementarity = std::max(res.complementarity, std::abs(sol.lam_lo[i] * dist));
    }
    if (qp.ug[i] < kInf) {
      const double dist = qp.ug[i] - v[i];
      res.inequality = std::max(res.inequality, std::max(0.0, -dist));
      res.complementarity = std::max(res.complementarity, std::abs(sol.lam_up[i] * dist));
    }
  }
  (void)n;
  return res;
}

}  // namespace nmpc::qp
