#include "nmpc/qp/condensing.hpp"

#include <numeric>

namespace nmpc::qp {

using linalg::gemm;
using linalg::gemv;
using linalg::Trans;

namespace {

// pi_{k-1} = Q_k x_k + q_k + S_k'u_k + A_k'pi_k + Gx_k'(lam_up - lam_lo)
Vec costate_from_stage(const OcpQp& qp, int k, const QpSolution& sol) {
  const OcpQpStage& st = qp.stages[k];
  const int nx = qp.dims.nx[k], ng = qp.dims.ng[k];
  Vec out(nx, 0.0);
  gemv(1.0, st.Q, Trans::No, sol.x[k], 0.0, out);
  linalg::axpy(1.0, st.q, out);
  if (k < qp.dims.N) {
    gemv(1.0, st.S, Trans::Yes, sol.u[k], 1.0, out);
    gemv(1.0, st.A, Trans::Yes, sol.pi[k], 1.0, out);
  }
  if (ng > 0) {
    Vec lam_diff(ng);
    for (int i = 0; i < ng; ++i) lam_diff[i] = sol.lam_up[k][i] - sol.lam_lo[k][i];
    gemv(1.0, st.Gx, Trans::Yes, lam_diff, 1.0, out);
  }
  return out;
}

int slack_of_row(const OcpQpStage& st, int row) {
  for (int j = 0; j < st.Js.cols(); ++j)
    if (st.Js(row, j) == 1.0) return j;
  return -1;
}

// Accumulates the condensed cost of stages [m, m+len) over the block variable
// [x_m; u_m .. u_{m+len-1}] given in-block propagation matrices.
struct BlockCost {
  DenseMatrix h;  // (nxm + nu_total)^2
  Vec g;
};

BlockCost condense_block_cost(const OcpQp& qp, int m, int len,
                              const std::vector<DenseMatrix>& lx,
                              const std::vector<DenseMatrix>& lu, const std::vector<Vec>& c,
                              const std::vector<int>& u_offset, int nv) {
  BlockCost out;
  out.h.resize(nv, nv);
  out.g.assign(nv, 0.0);
  const int nxm = qp.dims.nx[m];

  DenseMatrix t(0, 0), qt(0, 0), st_t(0, 0);
  for (int j = 0; j < len; ++j) {
    const int k = m + j;
    const OcpQpStage& st = qp.stages[k];
    const int nx = qp.dims.nx[k], nu = qp.dims.nu[k];
    const int u_off = nxm + u_offset[j];

    // T = [lx_j | lu_j], x_k = T vblk + c_j
    t.resize(nx, nv);
    for (int r = 0; r < nx; ++r) {
      for (int cc = 0; cc < nxm; ++cc) t(r, cc) = lx[j](r, cc);
      for (int cc = nxm; cc < nv; ++cc) t(r, cc) = lu[j](r, cc - nxm);
    }

    // H += T'QT;  H += E'ST + T'S'E;  H += E'RE
    qt.resize(nx, nv);
    gemm(1.0, st.Q, t, 0.0, qt);
    gemm(1.0, t, Trans::Yes, qt, Trans::No, 1.0, out.h);
    st_t.resize(nu, nv);
    gemm(1.0, st.S, t, 0.0, st_t);
    for (int r = 0; r < nu; ++r)
      for (int cc = 0; cc < nv; ++cc) {
        out.h(u_off + r, cc) += st_t(r, cc);
        out.h(cc, u_off + r) += st_t(r, cc);
      }
    for (int r = 0; r < nu; ++r)
      for (int cc = 0; cc < nu; ++cc) out.h(u_off + r, u_off + cc) += st.R(r, cc);

    // g += T'(Q c + q) + E'(S c + r)
    Vec qc = st.q;
    gemv(1.0, st.Q, Trans::No, c[j], 1.0, qc);
    gemv(1.0, t, Trans::Yes, qc, 1.0, out.g);
    Vec sc = st.r;
    gemv(1.0, st.S, Trans::No, c[j], 1.0, sc);
    for (int r = 0; r < nu; ++r) out.g[u_off + r] += sc[r];
  }
  return out;
}

}  // namespace

std::pair<DenseQp, FullCondensingData> full_condense(const OcpQp& qp) {
  qp.validate();
  const int N = qp.dims.N;
  FullCondensingData data;
  data.lx.resize(N + 1);
  data.lu.resize(N + 1);
  data.c.resize(N + 1);
  data.u_offset.resize(N);
  data.s_offset.resize(N + 1);

  const int nx0 = qp.dims.nx[0];
  const int nu_total = std::accumulate(qp.dims.nu.begin(), qp.dims.nu.end(), 0);
  const int ns_total = std::accumulate(qp.dims.ns.begin(), qp.dims.ns.end(), 0);
  const int n_xu = nx0 + nu_total;
  data.n_var = n_xu + ns_total;

  {
    int off = 0;
    for (int k = 0; k < N; ++k) {
      data.u_offset[k] = off;
      off += qp.dims.nu[k];
    }
    off = 0;
    for (int k = 0; k <= N; ++k) {
      data.s_offset[k] = off;
      off += qp.dims.ns[k];
    }
  }

  // state propagation x_k = lx x0 + lu u_all + c
  data.lx[0] = DenseMatrix::identity(nx0);
  data.lu[0] = DenseMatrix(nx0, nu_total);
  data.c[0] = Vec(nx0, 0.0);
  for (int k = 0; k < N; ++k) {
    const OcpQpStage& st = qp.stages[k];
    const int nxn = qp.dims.nx[k + 1];
    data.lx[k + 1].resize(nxn, nx0);
    gemm(1.0, st.A, data.lx[k], 0.0, data.lx[k + 1]);
    data.lu[k + 1].resize(nxn, nu_total);
    gemm(1.0, st.A, data.lu[k], 0.0, data.lu[k + 1]);
    for (int r = 0; r < nxn; ++r)
      for (int cc = 0; cc < qp.dims.nu[k]; ++cc)
        data.lu[k + 1](r, data.u_offset[k] + cc) += st.B(r, cc);
    data.c[k + 1] = st.b;
    gemv(1.0, st.A, Trans::No, data.c[k], 1.0, data.c[k + 1]);
  }

  // cost over [x0; u_all] via the block helper covering all stages, then the
  // terminal stage, then the slack diagonal
  DenseQp dense;
  dense.H.resize(data.n_var, data.n_var);
  dense.g.assign(data.n_var, 0.0);
  {
    std::vector<int> u_off_local(N);
    for (int k = 0; k < N; ++k) u_off_local[k] = data.u_offset[k];
    BlockCost bc = condense_block_cost(qp, 0, N, data.lx, data.lu, data.c, u_off_local, n_xu);
    // terminal stage cost pulled in via its propagation
    const OcpQpStage& stn = qp.stages[N];
    const int nxn = qp.dims.nx[N];
    DenseMatrix t(nxn, n_xu);
    for (int r = 0; r < nxn; ++r) {
      for (int cc = 0; cc < nx0; ++cc) t(r, cc) = data.lx[N](r, cc);
      for (int cc = nx0; cc < n_xu; ++cc) t(r, cc) = data.lu[N](r, cc - nx0);
    }
    DenseMatrix qt(nxn, n_xu);
    gemm(1.0, stn.Q, t, 0.0, qt);
    gemm(1.0, t, Trans::Yes, qt, Trans::No, 1.0, bc.h);
    Vec qc = stn.q;
    gemv(1.0, stn.Q, Trans::No, data.c[N], 1.0, qc);
    gemv(1.0, t, Trans::Yes, qc, 1.0, bc.g);

    for (int r = 0; r < n_xu; ++r)
      for (int cc = 0; cc < n_xu; ++cc) dense.H(r, cc) = bc.h(r, cc);
    for (int r = 0; r < n_xu; ++r) dense.g[r] = bc.g[r];
  }
  for (int k = 0; k <= N; ++k) {
    const OcpQpStage& st = qp.stages[k];
    for (int j = 0; j < qp.dims.ns[k]; ++j) {
      const int col = n_xu + data.s_offset[k] + j;
      dense.H(col, col) += st.P_diag[j];
      dense.g[col] += st.p_slack[j];
    }
  }

  // rows
  int n_rows = ns_total;
  for (int k = 0; k <= N; ++k) {
    const OcpQpStage& st = qp.stages[k];
    for (int i = 0; i < qp.dims.ng[k]; ++i) {
      const bool soft = slack_of_row(st, i) >= 0;
      const bool two_sided = st.lg[i] > -kInf && st.ug[i] < kInf;
      n_rows += (soft && two_sided) ? 2 : 1;
    }
  }
  dense.G.resize(n_rows, data.n_var);
  dense.lg.assign(n_rows, -kInf);
  dense.ug.assign(n_rows, kInf);
  data.row_map.reserve(n_rows);

  int row = 0;
  DenseMatrix grow;
  for (int k = 0; k <= N; ++k) {
    const OcpQpStage& st = qp.stages[k];
    const int ng = qp.dims.ng[k];
    if (ng == 0) continue;
    // row values on the dense variable: Gx (lx x0 + lu u + c) + Gu u
    grow.resize(ng, n_xu);
    DenseMatrix t(qp.dims.nx[k], n_xu);
    for (int r = 0; r < qp.dims.nx[k]; ++r) {
      for (int cc = 0; cc < nx0; ++cc) t(r, cc) = data.lx[k](r, cc);
      for (int cc = nx0; cc < n_xu; ++cc) t(r, cc) = data.lu[k](r, cc - nx0);
    }
    gemm(1.0, st.Gx, t, 0.0, grow);
    if (k < N)
      for (int r = 0; r < ng; ++r)
        for (int cc = 0; cc < qp.dims.nu[k]; ++cc)
          grow(r, nx0 + data.u_offset[k] + cc) += st.Gu(r, cc);
    Vec shift(ng, 0.0);
    gemv(1.0, st.Gx, Trans::No, data.c[k], 0.0, shift);

    for (int i = 0; i < ng; ++i) {
      const int slack = slack_of_row(st, i);
      const double lo = st.lg[i] > -kInf ? st.lg[i] - shift[i] : -kInf;
      const double up = st.ug[i] < kInf ? st.ug[i] - shift[i] : kInf;
      const int s_col = slack >= 0 ? n_xu + data.s_offset[k] + slack : -1;
      if (slack < 0 || (st.lg[i] <= -kInf) != (st.ug[i] >= kInf)) {
        // hard row, or soft one-sided row (single dense row)
        for (int cc = 0; cc < n_xu; ++cc) dense.G(row, cc) = grow(i, cc);
        if (slack >= 0) {
          if (st.ug[i] < kInf) {
            dense.G(row, s_col) = -1.0;  // v - s <= ug
            dense.ug[row] = up;
            data.row_map.push_back({k, i, DenseRowRef::SoftUpper});
          } else {
            dense.G(row, s_col) = 1.0;  // v + s >= lg
            dense.lg[row] = lo;
            data.row_map.push_back({k, i, DenseRowRef::SoftLower});
          }
        } else {
          dense.lg[row] = lo;
          dense.ug[row] = up;
          data.row_map.push_back({k, i, DenseRowRef::Hard});
        }
        ++row;
      } else {
        // soft two-sided row: one dense row per side
        for (int cc = 0; cc < n_xu; ++cc) dense.G(row, cc) = grow(i, cc);
        dense.G(row, s_col) = 1.0;
        dense.lg[row] = lo;
        data.row_map.push_back({k, i, DenseRowRef::SoftLower});
        ++row;
        for (int cc = 0; cc < n_xu; ++cc) dense.G(row, cc) = grow(i, cc);
        dense.G(row, s_col) = -1.0;
        dense.ug[row] = up;
        data.row_map.push_back({k, i, DenseRowRef::SoftUpper});
        ++row;
      }
    }
  }
  for (int k = 0; k <= N; ++k)
    for (int j = 0; j < qp.dims.ns[k]; ++j) {
      dense.G(row, n_xu + data.s_offset[k] + j) = 1.0;
      dense.lg[row] = 0.0;
      data.row_map.push_back({k, j, DenseRowRef::Slack});
      ++row;
    }

  dense.validate();
  return {std::move(dense), std::move(data)};
}

QpSolution expand(const OcpQp& qp, const FullCondensingData& data, const DenseQpSolution& sol) {
  const int N = qp.dims.N;
  const int nx0 = qp.dims.nx[0];
  const int n_xu = nx0 + std::accumulate(qp.dims.nu.begin(), qp.dims.nu.end(), 0);
  QpSolution out = QpSolution::zeros(qp.dims);
  out.status = sol.status;
  out.iterations = sol.iterations;

  for (int i = 0; i < nx0; ++i) out.x[0][i] = sol.v[i];
  for (int k = 0; k < N; ++k)
    for (int i = 0; i < qp.dims.nu[k]; ++i) out.u[k][i] = sol.v[nx0 + data.u_offset[k] + i];
  for (int k = 0; k <= N; ++k)
    for (int j = 0; j < qp.dims.ns[k]; ++j) out.s[k][j] = sol.v[n_xu + data.s_offset[k] + j];

  // forward propagation of the states
  for (int k = 0; k < N; ++k) {
    const OcpQpStage& st = qp.stages[k];
    out.x[k + 1] = st.b;
    gemv(1.0, st.A, Trans::No, out.x[k], 1.0, out.x[k + 1]);
    gemv(1.0, st.B, Trans::No, out.u[k], 1.0, out.x[k + 1]);
  }

  for (size_t r = 0; r < data.row_map.size(); ++r) {
    const DenseRowRef& ref = data.row_map[r];
    switch (ref.kind) {
      case DenseRowRef::Hard:
        out.lam_lo[ref.stage][ref.index] = sol.lam_lo[r];
        out.lam_up[ref.stage][ref.index] = sol.lam_up[r];
        break;
      case DenseRowRef::SoftLower:
        out.lam_lo[ref.stage][ref.index] = sol.lam_lo[r];
        break;
      case DenseRowRef::SoftUpper:
        out.lam_up[ref.stage][ref.index] = sol.lam_up[r];
        break;
      case DenseRowRef::Slack:
        out.lam_s[ref.stage][ref.index] = sol.lam_lo[r];
        break;
    }
  }

  // backward costate recursion
  for (int k = N; k >= 1; --k) out.pi[k - 1] = costate_from_stage(qp, k, out);
  out.residuals = kkt_residuals(qp, out);
  return out;
}

std::pair<OcpQp, PartialCondensingData> partial_condense(const OcpQp& qp, int n2) {
  qp.validate();
  const int N = qp.dims.N;
  if (n2 < 1 || n2 > N) throw InvalidInputError("partial_condense: N2 out of range");

  PartialCondensingData data;
  data.n2 = n2;
  data.block_start.resize(n2 + 1);
  const int base = N / n2, rem = N % n2;
  data.block_start[0] = 0;
  for (int k = 0; k < n2; ++k)
    data.block_start[k + 1] = data.block_start[k] + base + (k < rem ? 1 : 0);

  OcpQpDims dims;
  dims.N = n2;
  dims.nx.resize(n2 + 1);
  dims.nu.resize(n2);
  dims.ng.resize(n2 + 1);
  dims.ns.resize(n2 + 1);
  for (int k = 0; k < n2; ++k) {
    const int m = data.block_start[k], len = data.block_start[k + 1] - m;
    dims.nx[k] = qp.dims.nx[m];
    int nu = 0, ng = 0, ns = 0;
    for (int j = 0; j < len; ++j) {
      nu += qp.dims.nu[m + j];
      ng += qp.dims.ng[m + j];
      ns += qp.dims.ns[m + j];
    }
    dims.nu[k] = nu;
    dims.ng[k] = ng;
    dims.ns[k] = ns;
  }
  dims.nx[n2] = qp.dims.nx[N];
  dims.ng[n2] = qp.dims.ng[N];
  dims.ns[n2] = qp.dims.ns[N];

  OcpQp out = OcpQp::zeros(dims);
  data.lx.resize(n2);
  data.lu.resize(n2);
  data.c.resize(n2);
  data.u_offset.resize(n2);
  data.s_offset.resize(n2);
  data.g_offset.resize(n2);

  for (int k = 0; k < n2; ++k) {
    const int m = data.block_start[k], len = data.block_start[k + 1] - m;
    const int nxm = qp.dims.nx[m];
    const int nu_blk = dims.nu[k];
    auto& lx = data.lx[k];
    auto& lu = data.lu[k];
    auto& c = data.c[k];
    auto& u_off = data.u_offset[k];
    auto& s_off = data.s_offset[k];
    auto& g_off = data.g_offset[k];
    lx.resize(len);
    lu.resize(len);
    c.resize(len);
    u_off.resize(len);
    s_off.resize(len);
    g_off.resize(len);
    {
      int off = 0, soff = 0, goff = 0;
      for (int j = 0; j < len; ++j) {
        u_off[j] = off;
        s_off[j] = soff;
        g_off[j] = goff;
        off += qp.dims.nu[m + j];
        soff += qp.dims.ns[m + j];
        goff += qp.dims.ng[m + j];
      }
    }

    lx[0] = DenseMatrix::identity(nxm);
    lu[0] = DenseMatrix(nxm, nu_blk);
    c[0] = Vec(nxm, 0.0);
    for (int j = 0; j + 1 < len; ++j) {
      const OcpQpStage& st = qp.stages[m + j];
      const int nxn = qp.dims.nx[m + j + 1];
      lx[j + 1].resize(nxn, nxm);
      gemm(1.0, st.A, lx[j], 0.0, lx[j + 1]);
      lu[j + 1].resize(nxn, nu_blk);
      gemm(1.0, st.A, lu[j], 0.0, lu[j + 1]);
      for (int r = 0; r < nxn; ++r)
        for (int cc = 0; cc < qp.dims.nu[m + j]; ++cc) lu[j + 1](r, u_off[j] + cc) += st.B(r, cc);
      c[j + 1] = st.b;
      gemv(1.0, st.A, Trans::No, c[j], 1.0, c[j + 1]);
    }

    OcpQpStage& nst = out.stages[k];
    // cost over the block variable
    const int nv = nxm + nu_blk;
    BlockCost bc = condense_block_cost(qp, m, len, lx, lu, c, u_off, nv);
    for (int r = 0; r < nxm; ++r)
      for (int cc = 0; cc < nxm; ++cc) nst.Q(r, cc) = bc.h(r, cc);
    for (int r = 0; r < nu_blk; ++r)
      for (int cc = 0; cc < nxm; ++cc) nst.S(r, cc) = bc.h(nxm + r, cc);
    for (int r = 0; r < nu_blk; ++r)
      for (int cc = 0; cc < nu_blk; ++cc) nst.R(r, cc) = bc.h(nxm + r, nxm + cc);
    for (int r = 0; r < nxm; ++r) nst.q[r] = bc.g[r];
    for (int r = 0; r < nu_blk; ++r) nst.r[r] = bc.g[nxm + r];

    // block dynamics into the next block's first state
    {
      const OcpQpStage& last = qp.stages[m + len - 1];
      const int nxn = qp.dims.nx[m + len];
      nst.A.resize(nxn, nxm);
      gemm(1.0, last.A, lx[len - 1], 0.0, nst.A);
      nst.B.resize(nxn, nu_blk);
      gemm(1.0, last.A, lu[len - 1], 0.0, nst.B);
      for (int r = 0; r < nxn; ++r)
        for (int cc = 0; cc < qp.dims.nu[m + len - 1]; ++cc)
          nst.B(r, u_off[len - 1] + cc) += last.B(r, cc);
      nst.b = last.b;
      gemv(1.0, last.A, Trans::No, c[len - 1], 1.0, nst.b);
    }

    // stacked rows and slack data
    for (int j = 0; j < len; ++j) {
      const OcpQpStage& st = qp.stages[m + j];
      const int ng = qp.dims.ng[m + j];
      if (ng > 0) {
        DenseMatrix gx_l(ng, nxm), gx_lu(ng, nu_blk);
        gemm(1.0, st.Gx, lx[j], 0.0, gx_l);
        gemm(1.0, st.Gx, lu[j], 0.0, gx_lu);
        Vec shift(ng, 0.0);
        gemv(1.0, st.Gx, Trans::No, c[j], 0.0, shift);
        for (int r = 0; r < ng; ++r) {
          for (int cc = 0; cc < nxm; ++cc) nst.Gx(g_off[j] + r, cc) = gx_l(r, cc);
          for (int cc = 0; cc < nu_blk; ++cc) nst.Gu(g_off[j] + r, cc) = gx_lu(r, cc);
          for (int cc = 0; cc < qp.dims.nu[m + j]; ++cc)
            nst.Gu(g_off[j] + r, u_off[j] + cc) += st.Gu(r, cc);
          nst.lg[g_off[j] + r] = st.lg[r] > -kInf ? st.lg[r] - shift[r] : -kInf;
          nst.ug[g_off[j] + r] = st.ug[r] < kInf ? st.ug[r] - shift[r] : kInf;
          for (int cc = 0; cc < qp.dims.ns[m + j]; ++cc)
            nst.Js(g_off[j] + r, s_off[j] + cc) = st.Js(r, cc);
        }
      }
      for (int cc = 0; cc < qp.dims.ns[m + j]; ++cc) {
        nst.P_diag[s_off[j] + cc] = st.P_diag[cc];
        nst.p_slack[s_off[j] + cc] = st.p_slack[cc];
      }
    }
  }
  out.stages[n2] = qp.stages[N];
  out.validate();
  return {std::move(out), std::move(data)};
}

QpSolution partial_expand(const OcpQp& qp, const PartialCondensingData& data,
                          const QpSolution& condensed_sol) {
  const int N = qp.dims.N;
  QpSolution out = QpSolution::zeros(qp.dims);
  out.status = condensed_sol.status;
  out.iterations = condensed_sol.iterations;

  for (int k = 0; k < data.n2; ++k) {
    const int m = data.block_start[k], len = data.block_start[k + 1] - m;
    out.x[m] = condensed_sol.x[k];
    for (int j = 0; j < len; ++j) {
      const int stage = m + j;
      for (int i = 0; i < qp.dims.nu[stage]; ++i)
        out.u[stage][i] = condensed_sol.u[k][data.u_offset[k][j] + i];
      for (int i = 0; i < qp.dims.ns[stage]; ++i)
        out.s[stage][i] = condensed_sol.s[k][data.s_offset[k][j] + i];
      for (int i = 0; i < qp.dims.ng[stage]; ++i) {
        out.lam_lo[stage][i] = condensed_sol.lam_lo[k][data.g_offset[k][j] + i];
        out.lam_up[stage][i] = condensed_sol.lam_up[k][data.g_offset[k][j] + i];
      }
      for (int i = 0; i < qp.dims.ns[stage]; ++i)
        out.lam_s[stage][i] = condensed_sol.lam_s[k][data.s_offset[k][j] + i];
      if (j + 1 < len) {
        const OcpQpStage& st = qp.stages[stage];
        out.x[stage + 1] = st.b;
        gemv(1.0, st.A, Trans::No, out.x[stage], 1.0, out.x[stage + 1]);
        gemv(1.0, st.B, Trans::No, out.u[stage], 1.0, out.x[stage + 1]);
      }
    }
  }
  out.x[N] = condensed_sol.x[data.n2];
  for (int i = 0; i < qp.dims.ng[N]; ++i) {
    out.lam_lo[N][i] = condensed_sol.lam_lo[data.n2][i];
    out.lam_up[N][i] = condensed_sol.lam_up[data.n2][i];
  }
  for (int i = 0; i < qp.dims.ns[N]; ++i) {
    out.s[N][i] = condensed_sol.s[data.n2][i];
    out.lam_s[N][i] = condensed_sol.lam_s[data.n2][i];
  }

  // dynamics multipliers: block boundaries come from the condensed solution,
  // interior stages from the costate recursion
  for (int k = 0; k < data.n2; ++k) {
    const int m = data.block_start[k], len = data.block_start[k + 1] - m;
    out.pi[m + len - 1] = condensed_sol.pi[k];
    for (int j = len - 1; j >= 1; --j) out.pi[m + j - 1] = costate_from_stage(qp, m + j, out);
  }
  out.residuals = kkt_residuals(qp, out);
  return out;
}

}  // namespace nmpc::qp
