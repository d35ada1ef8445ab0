#include <cmath>

#include "nmpc/common/timing.hpp"
#include "nmpc/linalg/kernels.hpp"
#include "nmpc/sim/integrator.hpp"

namespace nmpc::sim {

using ad::Bindings;
using ad::Block;
using linalg::gemm;
using linalg::Trans;

namespace {

struct SubstepRecord {
  std::vector<Vec> k;        // stage derivatives
  std::vector<Vec> x_stage;  // X_i
  std::vector<Vec> z_stage;  // Z_i
  std::vector<DenseMatrix> jac;  // [f_xdot f_x f_z f_u] per stage
  DenseMatrix lu;            // factorized stage system at the solution
  std::vector<int> piv;
  DenseMatrix dkz;           // d(k, Z)/d(x0, u), global, (s*m) x nw
  DenseMatrix sens_in;       // d x_t / d (x0, u) entering this substep
};

}  // namespace

IrkIntegrator::IrkIntegrator(ImplicitDaeModel model, IrkOptions opts, int default_n_steps)
    : model_(std::move(model)), opts_(opts), default_n_steps_(default_n_steps) {
  if (opts_.newton_tol <= 0.0) throw InvalidInputError("irk: newton_tol must be positive");
  tableau_ = gl_tableau(opts_.stages);
}

SimOut IrkIntegrator::simulate(const SimIn& in) const {
  const double t_start = now_seconds();
  const int nx = model_.n_x;
  const int nz = model_.n_z;
  const int nu = model_.n_u();
  const int nw = nx + nu;
  const int m = nx + nz;     // residual rows per stage
  const int s = tableau_.stages;
  const int dim = s * m;     // stage-system size
  const int n_steps = in.n_steps > 0 ? in.n_steps : default_n_steps_;

  if (static_cast<int>(in.x0.size()) != nx) throw DimensionError("irk: x0 length mismatch");
  if (static_cast<int>(in.u.size()) != nu) throw DimensionError("irk: u length mismatch");
  if (in.t_interval <= 0.0) throw InvalidInputError("irk: interval length must be positive");
  const bool need_seed = in.want_adjoint || in.want_hessian;
  if (need_seed && static_cast<int>(in.seed.size()) != nx)
    throw InvalidInputError("irk: adjoint/hessian requested without a seed vector");
  const bool need_derivs = in.want_forward || need_seed;

  const double h = in.t_interval / n_steps;
  SimOut out;
  out.x_next = in.x0;

  // Unknowns per substep: stage derivatives k_i and algebraics Z_i,
  // interleaved [(k_1, Z_1), ..., (k_s, Z_s)].
  Vec kz(dim, 0.0);
  for (int i = 0; i < s; ++i)
    for (int j = 0; j < nz; ++j)
      kz[i * m + nx + j] = in.z_init.empty() ? 0.0 : in.z_init[j];

  std::vector<SubstepRecord> trace(need_seed ? n_steps : 0);

  DenseMatrix sens;  // d x_t / d (x0, u)
  if (need_derivs) {
    sens.resize(nx, nw);
    for (int i = 0; i < nx; ++i) sens(i, i) = 1.0;
  }

  std::vector<Vec> x_stage(s, Vec(nx)), z_stage(s, Vec(nz)), k_stage(s, Vec(nx));
  std::vector<DenseMatrix> jac(s);
  Vec residual(dim), delta(dim), trial(dim);
  DenseMatrix newton_mat(dim, dim), lu;
  std::vector<int> piv;
  const Block wrt[] = {Block::XDot, Block::X, Block::Z, Block::U};

  auto unpack = [&](const Vec& v, const Vec& x_base) {
    for (int i = 0; i < s; ++i) {
      for (int r = 0; r < nx; ++r) k_stage[i][r] = v[i * m + r];
      for (int r = 0; r < nz; ++r) z_stage[i][r] = v[i * m + nx + r];
      x_stage[i] = x_base;
      for (int j = 0; j < s; ++j)
        if (tableau_.a(i, j) != 0.0)
          for (int r = 0; r < nx; ++r) x_stage[i][r] += h * tableau_.a(i, j) * v[j * m + r];
    }
  };

  auto eval_residual = [&](Vec& res) {
    for (int i = 0; i < s; ++i) {
      Bindings b;
      b[Block::XDot] = k_stage[i];
      b[Block::X] = x_stage[i];
      b[Block::Z] = z_stage[i];
      b[Block::U] = in.u;
      const ScopedTimer tm(out.timings.model);
      model_.f->eval(b, {res.data() + i * m, size_t(m)});
    }
  };

  auto eval_jacobians = [&]() {
    for (int i = 0; i < s; ++i) {
      Bindings b;
      b[Block::XDot] = k_stage[i];
      b[Block::X] = x_stage[i];
      b[Block::Z] = z_stage[i];
      b[Block::U] = in.u;
      const ScopedTimer tm(out.timings.model);
      model_.f->jacobian(b, wrt, jac[i]);
    }
  };

  auto build_newton_matrix = [&]() {
    newton_mat.set_zero();
    for (int i = 0; i < s; ++i) {
      const DenseMatrix& j_i = jac[i];  // columns: [xdot | x | z | u]
      for (int r = 0; r < m; ++r) {
        for (int c = 0; c < nx; ++c) {
          // d R_i / d k_j = delta_ij f_xdot + h a_ij f_x
          for (int j = 0; j < s; ++j) {
            double v = 0.0;
            if (j == i) v += j_i(r, c);
            if (tableau_.a(i, j) != 0.0) v += h * tableau_.a(i, j) * j_i(r, nx + c);
            if (v != 0.0) newton_mat(i * m + r, j * m + c) = v;
          }
        }
        for (int c = 0; c < nz; ++c) newton_mat(i * m + r, i * m + nx + c) = j_i(r, 2 * nx + c);
      }
    }
  };

  auto factorize = [&]() {
    const ScopedTimer tl(out.timings.linear_algebra);
    try {
      linalg::getrf(newton_mat, lu, piv);
    } catch (const SingularMatrixError&) {
      throw SingularStageJacobianError("irk: stage jacobian is singular");
    }
  };

  for (int step = 0; step < n_steps; ++step) {
    const Vec x_base = out.x_next;

    // Newton iteration on the stage equations. On a domain error the step is
    // halved a few times before giving up.
    unpack(kz, x_base);
    eval_residual(residual);
    double res_norm = linalg::norm_inf(residual);
    int iter = 0;
    bool factored = false;
    while (res_norm > opts_.newton_tol) {
      if (iter >= opts_.newton_max_iter) throw NewtonNoConvergenceError(iter, res_norm);
      if (!factored || opts_.refactor_every_iter) {
        eval_jacobians();
        build_newton_matrix();
        factorize();
        factored = true;
      }
      delta = residual;
      {
        const ScopedTimer tl(out.timings.linear_algebra);
        linalg::getrs(lu, piv, delta);
      }
      // a negligible Newton step means the stage equations are satisfied to
      // the attainable precision, even if the residual floor sits above tol
      if (linalg::norm_inf(delta) <= 1e-12 * (1.0 + linalg::norm_inf(kz))) break;
      double alpha = 1.0;
      bool accepted = false;
      for (int attempt = 0; attempt < 30 && !accepted; ++attempt) {
        for (int q = 0; q < dim; ++q) trial[q] = kz[q] - alpha * delta[q];
        try {
          unpack(trial, x_base);
          eval_residual(residual);
          // accept any step that reduces the residual; the full step is
          // always tried first so quadratic convergence is kept
          if (linalg::norm_inf(residual) < res_norm) accepted = true;
        } catch (const DomainEvalError&) {
        }
        if (!accepted) alpha *= 0.5;
      }
      if (!accepted) throw NewtonNoConvergenceError(iter, res_norm);
      kz = trial;
      res_norm = linalg::norm_inf(residual);
      ++iter;
    }
    unpack(kz, x_base);

    if (need_derivs) {
      // Refresh the factorization at the converged stage values; the
      // implicit-function-theorem solves below use it.
      eval_jacobians();
      build_newton_matrix();
      factorize();

      // d(k,Z)/dw from M * D = -[f_x * S + f_u * U_sel] stacked per stage.
      DenseMatrix rhs(dim, nw);
      for (int i = 0; i < s; ++i) {
        const DenseMatrix& j_i = jac[i];
        for (int r = 0; r < m; ++r) {
          for (int c = 0; c < nw; ++c) {
            double v = 0.0;
            for (int q = 0; q < nx; ++q) v += j_i(r, nx + q) * sens(q, c);
            if (c >= nx) v += j_i(r, 2 * nx + nz + (c - nx));
            rhs(i * m + r, c) = -v;
          }
        }
      }
      {
        const ScopedTimer tl(out.timings.linear_algebra);
        linalg::getrs(lu, piv, rhs);
      }

      if (need_seed) {
        SubstepRecord& rec = trace[step];
        rec.k = k_stage;
        rec.x_stage = x_stage;
        rec.z_stage = z_stage;
        rec.jac = jac;
        rec.lu = lu;
        rec.piv = piv;
        rec.dkz = rhs;
        rec.sens_in = sens;
      }

      // S <- S + h sum_i b_i dk_i
      for (int i = 0; i < s; ++i)
        for (int r = 0; r < nx; ++r)
          for (int c = 0; c < nw; ++c) sens(r, c) += h * tableau_.b[i] * rhs(i * m + r, c);
    }

    if (step == 0) {
      if (opts_.extrapolate_z_to_start) {
        // Lagrange extrapolation of the stage algebraics to the interval start.
        out.z.assign(nz, 0.0);
        for (int i = 0; i < s; ++i) {
          double w = 1.0;
          for (int j = 0; j < s; ++j)
            if (j != i) w *= (0.0 - tableau_.c[j]) / (tableau_.c[i] - tableau_.c[j]);
          for (int r = 0; r < nz; ++r) out.z[r] += w * z_stage[i][r];
        }
      } else {
        out.z = z_stage[0];
      }
    }

    for (int i = 0; i < s; ++i)
      for (int r = 0; r < nx; ++r) out.x_next[r] += h * tableau_.b[i] * k_stage[i][r];
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
    Vec lambda = in.seed;
    Vec adj_u(nu, 0.0);
    Vec v(dim), mu(dim);
    if (in.want_hessian) out.hess.resize(nw, nw);
    const int nf = 2 * nx + nz + nu;  // inputs of f: (xdot, x, z, u)
    DenseMatrix g_total(nf, nw), stage_hess, m_g(nf, nw);

    for (int step = n_steps - 1; step >= 0; --step) {
      const SubstepRecord& rec = trace[step];
      for (int i = 0; i < s; ++i)
        for (int r = 0; r < nx; ++r) v[i * m + r] = h * tableau_.b[i] * lambda[r];
      for (int i = 0; i < s; ++i)
        for (int r = 0; r < nz; ++r) v[i * m + nx + r] = 0.0;
      mu = v;
      {
        const ScopedTimer tl(out.timings.linear_algebra);
        linalg::getrs_trans(rec.lu, rec.piv, mu);
        linalg::scale(-1.0, mu);
      }
      for (int i = 0; i < s; ++i) {
        const DenseMatrix& j_i = rec.jac[i];
        for (int c = 0; c < nx; ++c) {
          double acc = 0.0;
          for (int r = 0; r < m; ++r) acc += j_i(r, nx + c) * mu[i * m + r];
          lambda[c] += acc;
        }
        for (int c = 0; c < nu; ++c) {
          double acc = 0.0;
          for (int r = 0; r < m; ++r) acc += j_i(r, 2 * nx + nz + c) * mu[i * m + r];
          adj_u[c] += acc;
        }

        if (in.want_hessian) {
          // Total input sensitivities G_i = d(k_i, X_i, Z_i, u)/dw and the
          // congruence H += G_i^T (mu_i^T f'') G_i.
          g_total.set_zero();
          for (int r = 0; r < nx; ++r)
            for (int c = 0; c < nw; ++c) g_total(r, c) = rec.dkz(i * m + r, c);
          for (int r = 0; r < nx; ++r) {
            for (int c = 0; c < nw; ++c) {
              double acc = rec.sens_in(r, c);
              for (int j = 0; j < s; ++j)
                if (tableau_.a(i, j) != 0.0) acc += h * tableau_.a(i, j) * rec.dkz(j * m + r, c);
              g_total(nx + r, c) = acc;
            }
          }
          for (int r = 0; r < nz; ++r)
            for (int c = 0; c < nw; ++c) g_total(2 * nx + r, c) = rec.dkz(i * m + nx + r, c);
          for (int r = 0; r < nu; ++r) g_total(2 * nx + nz + r, nx + r) = 1.0;

          Bindings hb;
          hb[Block::XDot] = rec.k[i];
          hb[Block::X] = rec.x_stage[i];
          hb[Block::Z] = rec.z_stage[i];
          hb[Block::U] = in.u;
          Vec mu_i(m);
          for (int r = 0; r < m; ++r) mu_i[r] = mu[i * m + r];
          {
            const ScopedTimer tm(out.timings.model);
            model_.f->seeded_hessian(hb, wrt, mu_i, stage_hess);
          }
          const ScopedTimer tl(out.timings.linear_algebra);
          gemm(1.0, stage_hess, g_total, 0.0, m_g);
          gemm(1.0, g_total, Trans::Yes, m_g, Trans::No, 1.0, out.hess);
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

}  // namespace nmpc::sim
