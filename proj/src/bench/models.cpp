#include "nmpc/bench/models.hpp"

#include <cmath>

#include "nmpc/linalg/kernels.hpp"

namespace nmpc::bench {

using ad::Block;
using ad::Expr;
using ad::GraphBuilder;
using ad::GraphFunction;

namespace {

// Hooke force between two masses: F = D (1 - L/||d||) d with d = p_b - p_a.
std::array<Expr, 3> spring_force(const std::array<Expr, 3>& pa, const std::array<Expr, 3>& pb,
                                 double d_const, double rest_length) {
  std::array<Expr, 3> d{pb[0] - pa[0], pb[1] - pa[1], pb[2] - pa[2]};
  Expr norm = sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
  Expr coef = d_const * (1.0 - rest_length / norm);
  return {coef * d[0], coef * d[1], coef * d[2]};
}

// The four engine pressure-ratio equations as expressions; shared between the
// DAE model and the steady-state system.
struct EngineEquations {
  Expr dot_pi_c_lp;  // rhs of the LP differential equation
  Expr dot_pi_c_hp;  // rhs of the HP differential equation
  Expr alg_lp;       // LP algebraic residual
  Expr alg_hp;       // HP algebraic residual
};

EngineEquations engine_equations(const EngineParams& prm, Expr pi_c_lp, Expr pi_c_hp,
                                 Expr u_wg_lp, Expr u_wg_hp, Expr pi_t_lp, Expr pi_t_hp) {
  const double n_eng = prm.engine_speed;
  // eta(u, v) = gamma_1(u) * gamma_2(v) with u the total boost ratio and v
  // the LP wastegate signal; (1 + e^((-v+b3)/b4))^-1 == logistic((v-b3)/b4).
  Expr boost = pi_c_lp * pi_c_hp;
  Expr g1 = prm.gamma1[0] + prm.gamma1[1] * logistic((boost - prm.gamma1[2]) / prm.gamma1[3]);
  Expr g2 = prm.gamma2[0] + prm.gamma2[1] * logistic((u_wg_lp - prm.gamma2[2]) / prm.gamma2[3]);
  Expr eta = g1 * g2;

  EngineEquations eq;
  eq.dot_pi_c_lp = prm.c[0] * (pow(pi_t_lp, 1.5) - pow(pi_t_lp, 1.25)) *
                       sqrt(pow(pi_t_lp, -1.5) - pow(pi_t_lp, -1.75)) -
                   prm.c[1] * n_eng * pi_c_hp * (pow(pi_c_lp, 1.29) - pi_c_lp);
  eq.alg_lp = boost - (prm.c[2] / n_eng) * sqrt(pow(pi_t_lp, 0.5) - pow(pi_t_lp, 0.25)) *
                          (sqrt(pi_t_lp) + prm.c[3] * eta);
  eq.dot_pi_c_hp = prm.c[4] * (pow(pi_t_hp, 1.5) - pow(pi_t_hp, 1.25)) *
                       sqrt(pow(pi_t_hp, -1.5) - pow(pi_t_hp, -1.75)) -
                   prm.c[5] * n_eng * pi_c_lp * (pow(pi_c_hp, 1.29) - pi_c_hp);
  eq.alg_hp = boost - (prm.c[6] / n_eng) * sqrt(pow(pi_t_hp, 0.5) - pow(pi_t_hp, 0.25)) *
                          (sqrt(pi_t_hp) + prm.c[7] * (1.0 - u_wg_hp / 100.0));
  return eq;
}

}  // namespace

ExplicitModel build_chain_model(const ChainParams& prm) {
  if (prm.masses < 3) throw InvalidInputError("chain: need at least 3 masses");
  const int m_free = prm.masses - 2;  // middle masses with dynamics
  GraphBuilder b;
  auto x = b.input(Block::X, prm.n_x());
  auto u = b.input(Block::U, 3);

  // positions p_1 (fixed), p_2..p_M
  std::vector<std::array<Expr, 3>> p(prm.masses);
  p[0] = {b.constant(0.0), b.constant(0.0), b.constant(0.0)};
  for (int i = 1; i < prm.masses; ++i)
    p[i] = {x[3 * (i - 1) + 0], x[3 * (i - 1) + 1], x[3 * (i - 1) + 2]};

  std::vector<std::array<Expr, 3>> force(prm.masses - 1);
  for (int i = 0; i + 1 < prm.masses; ++i)
    force[i] = spring_force(p[i], p[i + 1], prm.spring_constant, prm.rest_length);

  std::vector<Expr> f;
  f.reserve(prm.n_x());
  const int v_off = 3 * (m_free + 1);
  // dp_i = v_i for the middle masses
  for (int i = 0; i < 3 * m_free; ++i) f.push_back(x[v_off + i]);
  // dp_M = u
  for (int c = 0; c < 3; ++c) f.push_back(u[c]);
  // dv_i = (F_{i,i+1} - F_{i-1,i})/m + g
  for (int i = 0; i < m_free; ++i)
    for (int c = 0; c < 3; ++c)
      f.push_back((force[i + 1][c] - force[i][c]) / prm.mass + prm.gravity[c]);
  b.set_outputs(f);
  return ExplicitModel{std::make_shared<GraphFunction>(b.release())};
}

Vec chain_horizontal_state(const ChainParams& prm) {
  Vec x(prm.n_x(), 0.0);
  for (int i = 2; i <= prm.masses; ++i) {
    const double t = double(i - 1) / (prm.masses - 1);
    for (int c = 0; c < 3; ++c) x[3 * (i - 2) + c] = t * prm.p_end_ref[c];
  }
  return x;
}

Vec chain_steady_state(const ChainParams& prm) {
  // Stationarity system: v = 0, p_M pinned to the reference, force balance on
  // the middle masses.
  const int m_free = prm.masses - 2;
  GraphBuilder b;
  auto x = b.input(Block::X, prm.n_x());

  std::vector<std::array<Expr, 3>> p(prm.masses);
  p[0] = {b.constant(0.0), b.constant(0.0), b.constant(0.0)};
  for (int i = 1; i < prm.masses; ++i)
    p[i] = {x[3 * (i - 1) + 0], x[3 * (i - 1) + 1], x[3 * (i - 1) + 2]};
  std::vector<std::array<Expr, 3>> force(prm.masses - 1);
  for (int i = 0; i + 1 < prm.masses; ++i)
    force[i] = spring_force(p[i], p[i + 1], prm.spring_constant, prm.rest_length);

  std::vector<Expr> r;
  const int v_off = 3 * (m_free + 1);
  for (int i = 0; i < 3 * m_free; ++i) r.push_back(x[v_off + i]);
  for (int c = 0; c < 3; ++c) r.push_back(p[prm.masses - 1][c] - prm.p_end_ref[c]);
  for (int i = 0; i < m_free; ++i)
    for (int c = 0; c < 3; ++c)
      r.push_back((force[i + 1][c] - force[i][c]) / prm.mass + prm.gravity[c]);
  b.set_outputs(r);
  GraphFunction residual(b.release());

  Vec x0 = chain_horizontal_state(prm);
  damped_newton(residual, x0, 1e-12, 100);
  return x0;
}

ExplicitModel build_pendulum_model(const PendulumParams& prm) {
  GraphBuilder b;
  auto x = b.input(Block::X, 4);
  auto u = b.input(Block::U, 1);
  Expr theta = x[1], v = x[2], omega = x[3], force = u[0];
  const double mc = prm.cart_mass, mp = prm.pole_mass, l = prm.length, g = prm.gravity;

  Expr st = sin(theta), ct = cos(theta);
  Expr denom = mc + mp - mp * ct * ct;
  Expr dv = (-mp * l * st * omega * omega + mp * g * ct * st + force) / denom;
  Expr domega = (-mp * l * ct * st * omega * omega + force * ct + (mc + mp) * g * st) / (l * denom);
  std::vector<Expr> f = {v, omega, dv, domega};
  b.set_outputs(f);
  return ExplicitModel{std::make_shared<GraphFunction>(b.release())};
}

ImplicitDaeModel build_engine_model(const EngineParams& prm) {
  GraphBuilder b;
  auto xdot = b.input(Block::XDot, 4);
  auto x = b.input(Block::X, 4);
  auto z = b.input(Block::Z, 2);
  auto u = b.input(Block::U, 2);

  EngineEquations eq = engine_equations(prm, x[0], x[1], x[2], x[3], z[0], z[1]);

  std::vector<Expr> f = {
      xdot[0] - eq.dot_pi_c_lp,  // LP pressure-ratio dynamics
      xdot[1] - eq.dot_pi_c_hp,  // HP pressure-ratio dynamics
      xdot[2] - u[0],            // wastegate LP integrates its rate
      xdot[3] - u[1],            // wastegate HP integrates its rate
      eq.alg_lp,
      eq.alg_hp,
  };
  b.set_outputs(f);

  ImplicitDaeModel model;
  model.f = std::make_shared<GraphFunction>(b.release());
  model.n_x = 4;
  model.n_z = 2;
  return model;
}

EngineSteadyState engine_steady_state(const EngineParams& prm, double u_wg_lp, double u_wg_hp) {
  // Unknowns (Pi_c_lp, Pi_c_hp, Pi_t_lp, Pi_t_hp) at fixed wastegates.
  GraphBuilder b;
  auto y = b.input(Block::X, 4);
  Expr wlp = b.constant(u_wg_lp), whp = b.constant(u_wg_hp);
  EngineEquations eq = engine_equations(prm, y[0], y[1], wlp, whp, y[2], y[3]);
  std::vector<Expr> r = {eq.dot_pi_c_lp, eq.dot_pi_c_hp, eq.alg_lp, eq.alg_hp};
  b.set_outputs(r);
  GraphFunction residual(b.release());

  Vec y0{1.2, 1.5, 1.3, 1.5};
  damped_newton(residual, y0, 1e-12, 200);

  EngineSteadyState out;
  out.x = {y0[0], y0[1], u_wg_lp, u_wg_hp};
  out.z = {y0[2], y0[3]};
  return out;
}

Vec dae_consistent_z(const ImplicitDaeModel& model, const Vec& x, const Vec& u, Vec z_guess,
                     double tol) {
  const int nx = model.n_x;
  const int nz = model.n_z;
  Vec xdot(nx, 0.0), residual(nx + nz), step(nz);
  DenseMatrix jac, lu;
  std::vector<int> piv;
  const Block wrt[] = {Block::Z};

  for (int iter = 0; iter < 100; ++iter) {
    ad::Bindings in;
    in[Block::XDot] = xdot;
    in[Block::X] = x;
    in[Block::Z] = z_guess;
    in[Block::U] = u;
    model.f->eval(in, residual);
    double norm = 0.0;
    for (int r = 0; r < nz; ++r) norm = std::max(norm, std::abs(residual[nx + r]));
    if (norm <= tol) return z_guess;

    model.f->jacobian(in, wrt, jac);
    DenseMatrix alg_jac(nz, nz);
    for (int r = 0; r < nz; ++r)
      for (int c = 0; c < nz; ++c) alg_jac(r, c) = jac(nx + r, c);
    linalg::getrf(alg_jac, lu, piv);
    for (int r = 0; r < nz; ++r) step[r] = residual[nx + r];
    linalg::getrs(lu, piv, step);

    double alpha = 1.0;
    for (int attempt = 0; attempt < 30; ++attempt) {
      Vec trial = z_guess;
      linalg::axpy(-alpha, step, trial);
      try {
        ad::Bindings ti;
        ti[Block::XDot] = xdot;
        ti[Block::X] = x;
        ti[Block::Z] = trial;
        ti[Block::U] = u;
        model.f->eval(ti, residual);
        z_guess = trial;
        break;
      } catch (const DomainEvalError&) {
        alpha *= 0.5;
      }
    }
  }
  throw NewtonNoConvergenceError(100, -1.0);
}

double damped_newton(const ad::StageFunction& residual, Vec& x, double tol, int max_iter) {
  const int n = static_cast<int>(x.size());
  if (residual.n_out() != n) throw DimensionError("damped_newton: system is not square");
  Vec r(n), trial(n), r_trial(n);
  DenseMatrix jac, lu;
  std::vector<int> piv;
  const Block wrt[] = {Block::X};

  ad::Bindings in;
  in[Block::X] = x;
  residual.eval(in, r);
  double norm = linalg::norm_inf(r);

  for (int iter = 0; iter < max_iter; ++iter) {
    if (norm <= tol) return norm;
    residual.jacobian(in, wrt, jac);
    linalg::getrf(jac, lu, piv);
    Vec step = r;
    linalg::getrs(lu, piv, step);

    double alpha = 1.0;
    bool accepted = false;
    for (int attempt = 0; attempt < 30; ++attempt) {
      for (int i = 0; i < n; ++i) trial[i] = x[i] - alpha * step[i];
      try {
        ad::Bindings ti;
        ti[Block::X] = trial;
        residual.eval(ti, r_trial);
        const double trial_norm = linalg::norm_inf(r_trial);
        if (trial_norm < norm || trial_norm <= tol) {
          x = trial;
          r = r_trial;
          norm = trial_norm;
          accepted = true;
          break;
        }
      } catch (const DomainEvalError&) {
        // step left the model domain; shrink
      }
      alpha *= 0.5;
    }
    if (!accepted) throw NewtonNoConvergenceError(iter, norm);
    in[Block::X] = x;
  }
  if (norm <= tol) return norm;
  throw NewtonNoConvergenceError(max_iter, norm);
}

}  // namespace nmpc::bench
