#include <cmath>

#include "nmpc/common/timing.hpp"
#include "nmpc/sim/integrator.hpp"

namespace nmpc::sim {

using ad::Bindings;
using ad::Block;
using linalg::gemm;
using linalg::Trans;

namespace {

// Stage data recorded on the forward pass for reverse accumulation.
struct StageRecord {
  Vec x_stage;       // X_i
  DenseMatrix jac;   // [f_x f_u] at (X_i, u), n_x x (n_x + n_u)
  DenseMatrix dx;    // d X_i / d (x0, u), n_x x n_w (hessian path only)
};

}  // namespace

ErkIntegrator::ErkIntegrator(ExplicitModel model, ButcherTableau tableau, int default_n_steps)
    : model_(std::move(model)), tableau_(std::move(tableau)), default_n_steps_(default_n_steps) {
  tableau_.validate();
  if (!tableau_.explicit_scheme())
    throw InvalidInputError("erk: tableau is not explicit (A must be strictly lower-triangular)");
}

SimOut ErkIntegrator::simulate(const SimIn& in) const {
  const double t_start = now_seconds();
  const int nx = model_.n_x();
  const int nu = model_.n_u();
  const int nw = nx + nu;
  const int s = tableau_.stages;
  const int n_steps = in.n_steps > 0 ? in.n_steps : default_n_steps_;

  if (static_cast<int>(in.x0.size()) != nx) throw DimensionError("erk: x0 length mismatch");
  if (static_cast<int>(in.u.size()) != nu) throw DimensionError("erk: u length mismatch");
  if (in.t_interval <= 0.0) throw InvalidInputError("erk: interval length must be positive");
  const bool need_seed = in.want_adjoint || in.want_hessian;
  if (need_seed && static_cast<int>(in.seed.size()) != nx)
    throw InvalidInputError("erk: adjoint/hessian requested without a seed vector");
  const bool need_forward = in.want_forward || in.want_hessian;

  const double h = in.t_interval / n_steps;
  SimOut out;
  out.x_next = in.x0;

  Bindings bind;
  bind[Block::U] = in.u;

  // forward sensitivity S = d x / d (x0, u), starts [I 0]
  DenseMatrix sens;
  if (need_forward) {
    sens.resize(nx, nw);
    for (int i = 0; i < nx; ++i) sens(i, i) = 1.0;
  }

  std::vector<std::vector<StageRecord>> trace;
  if (need_seed) trace.resize(n_steps, std::vector<StageRecord>(s));

  std::vector<Vec> k(s, Vec(nx));
  std::vector<DenseMatrix> dk;
  if (need_forward) dk.assign(s, DenseMatrix(nx, nw));
  Vec x_stage(nx);
  DenseMatrix dx_stage(need_forward ? nx : 0, need_forward ? nw : 0);
  DenseMatrix jac;
  const Block wrt[] = {Block::X, Block::U};

  for (int step = 0; step < n_steps; ++step) {
    for (int i = 0; i < s; ++i) {
      x_stage = out.x_next;
      for (int j = 0; j < i; ++j)
        if (tableau_.a(i, j) != 0.0)
          linalg::axpy(h * tableau_.a(i, j), k[j], x_stage);
      bind[Block::X] = x_stage;

      try {
        const ScopedTimer tm(out.timings.model);
        if (need_seed || need_forward) {
          model_.f->jacobian(bind, wrt, jac);
        }
        model_.f->eval(bind, k[i]);
      } catch (const DomainEvalError& e) {
        throw DomainEvalError(e.node_index, "erk step " + std::to_string(step) + " stage " +
                                                std::to_string(i));
      }

      if (need_forward) {
        // dX_i = S + h * sum_j a_ij dK_j; dK_i = f_x dX_i + f_u [0 I]
        dx_stage = sens;
        for (int j = 0; j < i; ++j)
          if (tableau_.a(i, j) != 0.0)
            for (int r = 0; r < nx; ++r)
              linalg::axpy(h * tableau_.a(i, j), dk[j].row(r), dx_stage.row(r));
        for (int r = 0; r < nx; ++r) {
          auto drow = dk[i].row(r);
          std::fill(drow.begin(), drow.end(), 0.0);
          for (int c = 0; c < nx; ++c)
            if (jac(r, c) != 0.0) linalg::axpy(jac(r, c), dx_stage.row(c), drow);
          for (int c = 0; c < nu; ++c) drow[nx + c] += jac(r, nx + c);
        }
        if (in.want_hessian) trace[step][i].dx = dx_stage;
      }
      if (need_seed) {
        trace[step][i].x_stage = x_stage;
        trace[step][i].jac = jac;
      }
    }

    for (int i = 0; i < s; ++i) linalg::axpy(h * tableau_.b[i], k[i], out.x_next);
    if (need_forward)
      for (int i = 0; i < s; ++i)
        for (int r = 0; r < nx; ++r)
          linalg::axpy(h * tableau_.b[i], dk[i].row(r), sens.row(r));
  }

  if (in.want_forward) {
    out.sx.resize(nx, nx);
    out.su.resize(nx, nu);
    for (int i = 0; i < nx; ++i) {
      for (int j = 0; j < nx; ++j) out.sx(i, j) = sens(i, j);
      for (int j = 0; j < nu; ++j) out.su(i, j) = sens(i, nx + j);
    }
  }

  if (need_seed) {
    // Reverse accumulation through steps and stages. lambda tracks the
    // adjoint with respect to the running state, mu_i the stage adjoints.
    Vec lambda = in.seed;
    Vec adj_u(nu, 0.0);
    std::vector<Vec> mu(s, Vec(nx));
    Vec tmp(nx);
    if (in.want_hessian) out.hess.resize(nw, nw);
    DenseMatrix stage_hess, v_full(nw, nw), m_v(nw, nw);

    for (int step = n_steps - 1; step >= 0; --step) {
      for (int i = s - 1; i >= 0; --i) {
        for (int r = 0; r < nx; ++r) mu[i][r] = h * tableau_.b[i] * lambda[r];
        for (int j = i + 1; j < s; ++j) {
          if (tableau_.a(j, i) == 0.0) continue;
          // mu_i += h a_ji * f_x(X_j)^T mu_j
          const DenseMatrix& jj = trace[step][j].jac;
          for (int c = 0; c < nx; ++c) {
            double acc = 0.0;
            for (int r = 0; r < nx; ++r) acc += jj(r, c) * mu[j][r];
            mu[i][c] += h * tableau_.a(j, i) * acc;
          }
        }
      }
      for (int i = 0; i < s; ++i) {
        const DenseMatrix& ji = trace[step][i].jac;
        for (int c = 0; c < nx; ++c) {
          double acc = 0.0;
          for (int r = 0; r < nx; ++r) acc += ji(r, c) * mu[i][r];
          tmp[c] = acc;
        }
        linalg::axpy(1.0, tmp, lambda);
        for (int c = 0; c < nu; ++c) {
          double acc = 0.0;
          for (int r = 0; r < nx; ++r) acc += ji(r, nx + c) * mu[i][r];
          adj_u[c] += acc;
        }

        if (in.want_hessian) {
          // H += V_i^T (mu_i^T f'') V_i with V_i = [dX_i; 0 I].
          Bindings hb;
          hb[Block::X] = trace[step][i].x_stage;
          hb[Block::U] = in.u;
          {
            const ScopedTimer tm(out.timings.model);
            model_.f->seeded_hessian(hb, wrt, mu[i], stage_hess);
          }
          const DenseMatrix& dxi = trace[step][i].dx;
          v_full.set_zero();
          for (int r = 0; r < nx; ++r)
            for (int c = 0; c < nw; ++c) v_full(r, c) = dxi(r, c);
          for (int r = 0; r < nu; ++r) v_full(nx + r, nx + r) = 1.0;
          const ScopedTimer tl(out.timings.linear_algebra);
          gemm(1.0, stage_hess, v_full, 0.0, m_v);
          gemm(1.0, v_full, Trans::Yes, m_v, Trans::No, 1.0, out.hess);
        }
      }
    }

    if (in.want_adjoint) {
      out.adjoint.resize(nw);
      for (int i = 0; i < nx; ++i) out.adjoint[i] = lambda[i];
      for (int i = 0; i < nu; ++i) out.adjoint[nx + i] = adj_u[i];
    }
    if (in.want_hessian) linalg::symmetrize(out.hess);
  }

  out.timings.total = now_seconds() - t_start;
  return out;
}

double convergence_slope(const std::function<Vec(double)>& end_state, const Vec& reference,
                         std::span<const double> h_list) {
  if (h_list.size() < 4)
    throw InvalidInputError("convergence_slope: need at least 4 step sizes");
  std::vector<double> lx, ly;
  for (double h : h_list) {
    Vec x = end_state(h);
    double err = 0.0;
    for (size_t i = 0; i < x.size(); ++i) err = std::max(err, std::abs(x[i] - reference[i]));
    lx.push_back(std::log(h));
    ly.push_back(std::log(std::max(err, 1e-300)));
  }
  const int n = static_cast<int>(lx.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (int i = 0; i < n; ++i) {
    sx += lx[i];
    sy += ly[i];
    sxx += lx[i] * lx[i];
    sxy += lx[i] * ly[i];
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

}  // namespace nmpc::sim
