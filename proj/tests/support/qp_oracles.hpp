#pragma once

#include <functional>
#include <optional>
#include <random>

#include "nmpc/qp/data.hpp"
#include "support/test_util.hpp"

namespace qp_oracles {

using namespace nmpc::qp;
using nmpc::linalg::DenseMatrix;
using nmpc::linalg::Trans;
using nmpc::linalg::Vec;

// Finite-horizon LQR with affine dynamics, solved by the plain backward
// recursion with LU solves; independent of the IPM code path.
struct LqrResult {
  std::vector<Vec> x, u, pi;
};

inline LqrResult lqr_riccati(const OcpQp& qp, const Vec& x0) {
  const int N = qp.dims.N;
  std::vector<DenseMatrix> pmat(N + 1);
  std::vector<Vec> pvec(N + 1);
  std::vector<DenseMatrix> kmat(N);
  std::vector<Vec> kff(N);

  pmat[N] = qp.stages[N].Q;
  pvec[N] = qp.stages[N].q;
  for (int k = N - 1; k >= 0; --k) {
    const OcpQpStage& st = qp.stages[k];
    const int nx = qp.dims.nx[k], nu = qp.dims.nu[k], nxn = qp.dims.nx[k + 1];
    DenseMatrix pa(nxn, nx), pb(nxn, nu);
    nmpc::linalg::gemm(1.0, pmat[k + 1], st.A, 0.0, pa);
    nmpc::linalg::gemm(1.0, pmat[k + 1], st.B, 0.0, pb);
    DenseMatrix m_xx = st.Q, m_ux = st.S, m_uu = st.R;
    nmpc::linalg::gemm(1.0, st.A, Trans::Yes, pa, Trans::No, 1.0, m_xx);
    nmpc::linalg::gemm(1.0, st.B, Trans::Yes, pa, Trans::No, 1.0, m_ux);
    nmpc::linalg::gemm(1.0, st.B, Trans::Yes, pb, Trans::No, 1.0, m_uu);
    Vec tmp = pvec[k + 1];
    nmpc::linalg::gemv(1.0, pmat[k + 1], Trans::No, st.b, 1.0, tmp);
    Vec m_x = st.q, m_u = st.r;
    nmpc::linalg::gemv(1.0, st.A, Trans::Yes, tmp, 1.0, m_x);
    nmpc::linalg::gemv(1.0, st.B, Trans::Yes, tmp, 1.0, m_u);

    DenseMatrix lu;
    std::vector<int> piv;
    nmpc::linalg::getrf(m_uu, lu, piv);
    kmat[k] = m_ux;
    nmpc::linalg::scale(-1.0, {kmat[k].data(), size_t(nu) * nx});
    nmpc::linalg::getrs(lu, piv, kmat[k]);
    kff[k] = m_u;
    nmpc::linalg::scale(-1.0, kff[k]);
    nmpc::linalg::getrs(lu, piv, kff[k]);

    pmat[k] = m_xx;
    nmpc::linalg::gemm(1.0, m_ux, Trans::Yes, kmat[k], Trans::No, 1.0, pmat[k]);
    nmpc::linalg::symmetrize(pmat[k]);
    pvec[k] = m_x;
    nmpc::linalg::gemv(1.0, m_ux, Trans::Yes, kff[k], 1.0, pvec[k]);
  }

  LqrResult out;
  out.x.resize(N + 1);
  out.u.resize(N);
  out.pi.resize(N);
  out.x[0] = x0;
  for (int k = 0; k < N; ++k) {
    const OcpQpStage& st = qp.stages[k];
    out.u[k] = kff[k];
    nmpc::linalg::gemv(1.0, kmat[k], Trans::No, out.x[k], 1.0, out.u[k]);
    out.x[k + 1] = st.b;
    nmpc::linalg::gemv(1.0, st.A, Trans::No, out.x[k], 1.0, out.x[k + 1]);
    nmpc::linalg::gemv(1.0, st.B, Trans::No, out.u[k], 1.0, out.x[k + 1]);
    out.pi[k] = pvec[k + 1];
    nmpc::linalg::gemv(1.0, pmat[k + 1], Trans::No, out.x[k + 1], 1.0, out.pi[k]);
  }
  return out;
}

// Equality-constrained structured QP solved through one big KKT system;
// oracle for condensing equivalence on inequality-free instances.
inline std::vector<Vec> structured_kkt_solve(const OcpQp& qp, std::vector<Vec>* pi_out = nullptr) {
  const int N = qp.dims.N;
  std::vector<int> x_off(N + 1), u_off(N);
  int nv = 0;
  for (int k = 0; k <= N; ++k) {
    x_off[k] = nv;
    nv += qp.dims.nx[k];
    if (k < N) {
      u_off[k] = nv;
      nv += qp.dims.nu[k];
    }
  }
  int nc = 0;
  std::vector<int> c_off(N);
  for (int k = 0; k < N; ++k) {
    c_off[k] = nc;
    nc += qp.dims.nx[k + 1];
  }
  const int dim = nv + nc;
  DenseMatrix kkt(dim, dim);
  Vec rhs(dim, 0.0);
  for (int k = 0; k <= N; ++k) {
    const OcpQpStage& st = qp.stages[k];
    const int nx = qp.dims.nx[k];
    for (int i = 0; i < nx; ++i) {
      rhs[x_off[k] + i] = -st.q[i];
      for (int j = 0; j < nx; ++j) kkt(x_off[k] + i, x_off[k] + j) = st.Q(i, j);
    }
    if (k < N) {
      const int nu = qp.dims.nu[k];
      for (int i = 0; i < nu; ++i) {
        rhs[u_off[k] + i] = -st.r[i];
        for (int j = 0; j < nu; ++j) kkt(u_off[k] + i, u_off[k] + j) = st.R(i, j);
        for (int j = 0; j < nx; ++j) {
          kkt(u_off[k] + i, x_off[k] + j) = st.S(i, j);
          kkt(x_off[k] + j, u_off[k] + i) = st.S(i, j);
        }
      }
      const int nxn = qp.dims.nx[k + 1];
      for (int i = 0; i < nxn; ++i) {
        const int row = nv + c_off[k] + i;
        for (int j = 0; j < nx; ++j) {
          kkt(row, x_off[k] + j) = st.A(i, j);
          kkt(x_off[k] + j, row) = st.A(i, j);
        }
        for (int j = 0; j < qp.dims.nu[k]; ++j) {
          kkt(row, u_off[k] + j) = st.B(i, j);
          kkt(u_off[k] + j, row) = st.B(i, j);
        }
        kkt(row, x_off[k + 1] + i) = -1.0;
        kkt(x_off[k + 1] + i, row) = -1.0;
        rhs[row] = -st.b[i];
      }
    }
  }
  DenseMatrix lu;
  std::vector<int> piv;
  nmpc::linalg::getrf(kkt, lu, piv);
  nmpc::linalg::getrs(lu, piv, rhs);

  std::vector<Vec> w(2 * N + 1);
  for (int k = 0; k <= N; ++k) {
    w[2 * k] = Vec(rhs.begin() + x_off[k], rhs.begin() + x_off[k] + qp.dims.nx[k]);
    if (k < N)
      w[2 * k + 1] = Vec(rhs.begin() + u_off[k], rhs.begin() + u_off[k] + qp.dims.nu[k]);
  }
  if (pi_out) {
    pi_out->resize(N);
    for (int k = 0; k < N; ++k)
      (*pi_out)[k] = Vec(rhs.begin() + nv + c_off[k], rhs.begin() + nv + c_off[k] + qp.dims.nx[k + 1]);
  }
  return w;
}

// Brute-force oracle for small dense QPs: solve the KKT system of every
// possible active set (each row inactive / at lower / at upper) and keep the
// candidate that is primal feasible with sign-correct multipliers.
inline std::optional<DenseQpSolution> active_set_enumeration(const DenseQp& qp, double tol = 1e-9) {
  const int n = qp.n(), m = qp.n_rows();
  std::vector<int> state(m, 0);  // 0 inactive, 1 lower, 2 upper
  std::optional<DenseQpSolution> best;

  auto try_candidate = [&]() {
    std::vector<int> act;
    for (int i = 0; i < m; ++i) {
      if (state[i] == 1 && qp.lg[i] <= -kInf) return;
      if (state[i] == 2 && qp.ug[i] >= kInf) return;
      if (state[i] != 0) act.push_back(i);
    }
    const int na = static_cast<int>(act.size());
    DenseMatrix kkt(n + na, n + na);
    Vec rhs(n + na, 0.0);
    for (int i = 0; i < n; ++i) {
      rhs[i] = -qp.g[i];
      for (int j = 0; j < n; ++j) kkt(i, j) = qp.H(i, j);
    }
    for (int a = 0; a < na; ++a) {
      const int row = act[a];
      for (int j = 0; j < n; ++j) {
        kkt(n + a, j) = qp.G(row, j);
        kkt(j, n + a) = qp.G(row, j);
      }
      rhs[n + a] = state[row] == 1 ? qp.lg[row] : qp.ug[row];
    }
    DenseMatrix lu;
    std::vector<int> piv;
    try {
      nmpc::linalg::getrf(kkt, lu, piv);
    } catch (const nmpc::SingularMatrixError&) {
      return;
    }
    nmpc::linalg::getrs(lu, piv, rhs);
    for (double vv : rhs)
      if (!std::isfinite(vv) || std::abs(vv) > 1e12) return;

    // multiplier signs: nu = -lam_lo at lower, +lam_up at upper
    for (int a = 0; a < na; ++a) {
      const double nu_mult = rhs[n + a];
      if (state[act[a]] == 1 && nu_mult > tol) return;
      if (state[act[a]] == 2 && nu_mult < -tol) return;
    }
    Vec v(rhs.begin(), rhs.begin() + n);
    Vec row_vals(m, 0.0);
    if (m > 0) nmpc::linalg::gemv(1.0, qp.G, Trans::No, v, 0.0, row_vals);
    for (int i = 0; i < m; ++i) {
      if (qp.lg[i] > -kInf && row_vals[i] < qp.lg[i] - tol) return;
      if (qp.ug[i] < kInf && row_vals[i] > qp.ug[i] + tol) return;
    }
    DenseQpSolution sol;
    sol.v = v;
    sol.lam_lo.assign(m, 0.0);
    sol.lam_up.assign(m, 0.0);
    for (int a = 0; a < na; ++a) {
      if (state[act[a]] == 1) sol.lam_lo[act[a]] = std::max(0.0, -rhs[n + a]);
      if (state[act[a]] == 2) sol.lam_up[act[a]] = std::max(0.0, rhs[n + a]);
    }
    sol.status = QpStatus::Solved;
    best = sol;
  };

  // depth-first over 3^m states
  std::function<void(int)> rec = [&](int i) {
    if (best) return;
    if (i == m) {
      try_candidate();
      return;
    }
    for (int s = 0; s < 3; ++s) {
      state[i] = s;
      rec(i + 1);
    }
  };
  rec(0);
  return best;
}

// Random strictly convex OCP QP with feasible (and partly active) two-sided,
// one-sided and soft constraints built around a reference trajectory.
struct RandomQpConfig {
  int n_max = 20;
  int nx_max = 8;
  int nu_max = 4;
  bool with_general_rows = true;
  bool with_soft_rows = true;
  bool vary_nx = true;
};

inline OcpQp random_ocp_qp(std::mt19937_64& rng, const RandomQpConfig& cfg) {
  std::uniform_int_distribution<int> n_dist(2, cfg.n_max);
  std::uniform_int_distribution<int> nx_dist(2, cfg.nx_max);
  std::uniform_int_distribution<int> nu_dist(1, cfg.nu_max);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  OcpQpDims dims;
  dims.N = n_dist(rng);
  dims.nx.resize(dims.N + 1);
  dims.nu.resize(dims.N);
  dims.ng.assign(dims.N + 1, 0);
  dims.ns.assign(dims.N + 1, 0);
  const int nx_fixed = nx_dist(rng);
  for (int k = 0; k <= dims.N; ++k) dims.nx[k] = cfg.vary_nx && k > 0 ? nx_dist(rng) : nx_fixed;
  for (int k = 0; k < dims.N; ++k) dims.nu[k] = nu_dist(rng);

  OcpQp qp = OcpQp::zeros(dims);
  for (int k = 0; k <= dims.N; ++k) {
    OcpQpStage& st = qp.stages[k];
    const int nx = dims.nx[k];
    const int nu = k < dims.N ? dims.nu[k] : 0;
    st.Q = test_util::random_spd(rng, nx, 0.5);
    st.q = test_util::random_vec(rng, nx);
    if (k < dims.N) {
      st.R = test_util::random_spd(rng, nu, 0.5);
      st.S = test_util::random_matrix(rng, nu, nx, 0.1);
      st.r = test_util::random_vec(rng, nu);
      st.A = test_util::random_matrix(rng, dims.nx[k + 1], nx, 0.8);
      st.B = test_util::random_matrix(rng, dims.nx[k + 1], nu, 0.8);
      st.b = test_util::random_vec(rng, dims.nx[k + 1], 0.3);
    }
  }

  // reference trajectory for feasibility
  std::vector<Vec> x_ref(dims.N + 1), u_ref(dims.N);
  x_ref[0] = test_util::random_vec(rng, dims.nx[0], 0.5);
  for (int k = 0; k < dims.N; ++k) {
    u_ref[k] = test_util::random_vec(rng, dims.nu[k], 0.5);
    x_ref[k + 1] = qp.stages[k].b;
    nmpc::linalg::gemv(1.0, qp.stages[k].A, Trans::No, x_ref[k], 1.0, x_ref[k + 1]);
    nmpc::linalg::gemv(1.0, qp.stages[k].B, Trans::No, u_ref[k], 1.0, x_ref[k + 1]);
  }

  for (int k = 0; k <= dims.N; ++k) {
    OcpQpStage& st = qp.stages[k];
    const int nx = dims.nx[k];
    const int nu = k < dims.N ? dims.nu[k] : 0;
    std::vector<std::pair<Vec, Vec>> rows;  // (gx, gu)
    // a couple of box rows
    const int n_box = 1 + int(rng() % 2);
    for (int i = 0; i < n_box; ++i) {
      Vec gx(nx, 0.0), gu(nu, 0.0);
      if (nu > 0 && unit(rng) < 0.4)
        gu[rng() % nu] = 1.0;
      else
        gx[rng() % nx] = 1.0;
      rows.emplace_back(gx, gu);
    }
    if (cfg.with_general_rows && unit(rng) < 0.7) {
      Vec gx = test_util::random_vec(rng, nx), gu = test_util::random_vec(rng, nu);
      rows.emplace_back(gx, gu);
    }
    const int ng = static_cast<int>(rows.size());
    int ns = 0;
    std::vector<int> soft_row;
    if (cfg.with_soft_rows) {
      for (int i = 0; i < ng; ++i)
        if (unit(rng) < 0.3) soft_row.push_back(i);
      ns = static_cast<int>(soft_row.size());
    }
    dims.ng[k] = ng;
    dims.ns[k] = ns;
    st.Gx.resize(ng, nx);
    st.Gu.resize(ng, nu);
    st.lg.assign(ng, -kInf);
    st.ug.assign(ng, kInf);
    st.Js.resize(ng, ns);
    st.P_diag.assign(ns, 0.0);
    st.p_slack.assign(ns, 0.0);
    for (int i = 0; i < ng; ++i) {
      for (int j = 0; j < nx; ++j) st.Gx(i, j) = rows[i].first[j];
      for (int j = 0; j < nu; ++j) st.Gu(i, j) = rows[i].second[j];
      double v_ref = 0.0;
      for (int j = 0; j < nx; ++j) v_ref += rows[i].first[j] * x_ref[k][j];
      if (k < dims.N)
        for (int j = 0; j < nu; ++j) v_ref += rows[i].second[j] * u_ref[k][j];
      const double side = unit(rng);
      const double gap_lo = 0.05 + 0.8 * unit(rng);
      const double gap_up = 0.05 + 0.8 * unit(rng);
      if (side < 0.25)
        st.lg[i] = v_ref - gap_lo;  // lower only
      else if (side < 0.5)
        st.ug[i] = v_ref + gap_up;  // upper only
      else {
        st.lg[i] = v_ref - gap_lo;
        st.ug[i] = v_ref + gap_up;
      }
    }
    for (int j = 0; j < ns; ++j) {
      st.Js(soft_row[j], j) = 1.0;
      st.P_diag[j] = 0.5 + 2.0 * unit(rng);  // 2*beta
      st.p_slack[j] = 0.1 + unit(rng);       // alpha
    }
  }
  qp.dims = dims;
  qp.validate();
  return qp;
}

inline double primal_diff(const QpSolution& a, const QpSolution& b) {
  double m = 0.0;
  for (size_t k = 0; k < a.x.size(); ++k) m = std::max(m, test_util::max_abs_diff(a.x[k], b.x[k]));
  for (size_t k = 0; k < a.u.size(); ++k) m = std::max(m, test_util::max_abs_diff(a.u[k], b.u[k]));
  for (size_t k = 0; k < a.s.size(); ++k) m = std::max(m, test_util::max_abs_diff(a.s[k], b.s[k]));
  return m;
}

}  // namespace qp_oracles
