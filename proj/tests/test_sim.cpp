#include <cmath>

#include "doctest.h"
#include "nmpc/bench/models.hpp"
#include "nmpc/sim/integrator.hpp"
#include "support/test_util.hpp"

using namespace nmpc;
using namespace nmpc::sim;
using ad::Block;
using ad::Expr;
using ad::GraphBuilder;
using ad::GraphFunction;
using linalg::DenseMatrix;
using linalg::Vec;

namespace {

ExplicitModel scalar_linear_model(double a) {
  GraphBuilder b;
  auto x = b.input(Block::X, 1);
  b.get()->declare_block(Block::U, 0);
  std::vector<Expr> f = {a * x[0]};
  b.set_outputs(f);
  return ExplicitModel{std::make_shared<GraphFunction>(b.release())};
}

ExplicitModel matrix_linear_model(const DenseMatrix& a) {
  GraphBuilder b;
  auto x = b.input(Block::X, a.rows());
  b.get()->declare_block(Block::U, 0);
  std::vector<Expr> f;
  for (int i = 0; i < a.rows(); ++i) {
    Expr acc = b.constant(0.0);
    for (int j = 0; j < a.cols(); ++j) acc = acc + a(i, j) * x[j];
    f.push_back(acc);
  }
  b.set_outputs(f);
  return ExplicitModel{std::make_shared<GraphFunction>(b.release())};
}

SimIn basic_in(Vec x0, Vec u, double t, int n_steps) {
  SimIn in;
  in.x0 = std::move(x0);
  in.u = std::move(u);
  in.t_interval = t;
  in.n_steps = n_steps;
  return in;
}

// RK4 transition polynomial for xdot = A x: I + hA + (hA)^2/2 + ... + (hA)^4/24.
DenseMatrix rk4_matrix_polynomial(const DenseMatrix& a, double h) {
  const int n = a.rows();
  DenseMatrix acc = DenseMatrix::identity(n);
  DenseMatrix term = DenseMatrix::identity(n);
  double factorial = 1.0;
  DenseMatrix tmp(n, n);
  for (int p = 1; p <= 4; ++p) {
    linalg::gemm(h, a, term, 0.0, tmp);
    term = tmp;
    factorial *= p;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) acc(i, j) += term(i, j) / factorial;
  }
  return acc;
}

}  // namespace

TEST_CASE("gl tableaus: defining cases") {
  ButcherTableau t1 = gl_tableau(1);
  CHECK(t1.a(0, 0) == 0.5);
  CHECK(t1.b[0] == 1.0);
  CHECK(t1.c[0] == 0.5);
  CHECK(t1.order == 2);

  ButcherTableau t2 = gl_tableau(2);
  CHECK(t2.c[0] == doctest::Approx(0.5 - std::sqrt(3.0) / 6.0));
  CHECK(t2.c[1] == doctest::Approx(0.5 + std::sqrt(3.0) / 6.0));
  CHECK(t2.b[0] == 0.5);
  CHECK(t2.order == 4);

  CHECK(gl_tableau(3).order == 6);
  CHECK_THROWS_AS(gl_tableau(4), nmpc::InvalidInputError);
}

TEST_CASE("erk: truncated exponential series on xdot = x") {
  ErkIntegrator rk4(scalar_linear_model(1.0), erk_rk4());
  SimIn in = basic_in({1.0}, {}, 0.1, 1);
  SimOut out = rk4.simulate(in);
  const double h = 0.1;
  const double expected = 1.0 + h + h * h / 2 + h * h * h / 6 + h * h * h * h / 24;
  CHECK(out.x_next[0] == doctest::Approx(expected).epsilon(1e-15));
}

TEST_CASE("erk: forward sensitivity equals the RK4 matrix polynomial") {
  std::mt19937_64 rng(21);
  DenseMatrix a = test_util::random_matrix(rng, 4, 4);
  ErkIntegrator rk4(matrix_linear_model(a), erk_rk4());
  SimIn in = basic_in(test_util::random_vec(rng, 4), {}, 0.05, 1);
  in.want_forward = true;
  SimOut out = rk4.simulate(in);
  CHECK(test_util::max_abs_diff(out.sx, rk4_matrix_polynomial(a, 0.05)) <= 1e-13);
}

TEST_CASE("erk: multi-step equals composition of single steps") {
  bench::PendulumParams pp;
  ExplicitModel model = bench::build_pendulum_model(pp);
  ErkIntegrator rk4(model, erk_rk4());

  Vec x0{0.1, 2.5, -0.3, 0.4}, u{3.0};
  const int k = 4;
  SimIn multi = basic_in(x0, u, 0.08, k);
  multi.want_forward = true;
  SimOut ref = rk4.simulate(multi);

  Vec x = x0;
  DenseMatrix sx = DenseMatrix::identity(4), su(4, 1);
  for (int i = 0; i < k; ++i) {
    SimIn single = basic_in(x, u, 0.02, 1);
    single.want_forward = true;
    SimOut step = rk4.simulate(single);
    x = step.x_next;
    DenseMatrix sx_new(4, 4), su_new(4, 1);
    linalg::gemm(1.0, step.sx, sx, 0.0, sx_new);
    linalg::gemm(1.0, step.sx, su, 0.0, su_new);
    for (int r = 0; r < 4; ++r) su_new(r, 0) += step.su(r, 0);
    sx = sx_new;
    su = su_new;
  }
  CHECK(test_util::max_abs_diff(x, ref.x_next) <= 1e-12);
  CHECK(test_util::max_abs_diff(sx, ref.sx) <= 1e-11);
  CHECK(test_util::max_abs_diff(su, ref.su) <= 1e-11);
}

TEST_CASE("erk: forward sensitivities match finite differences") {
  bench::ChainParams cp;
  cp.masses = 4;
  ExplicitModel chain = bench::build_chain_model(cp);
  ErkIntegrator rk4(chain, erk_rk4());
  std::mt19937_64 rng(22);

  Vec base = bench::chain_horizontal_state(cp);
  for (int trial = 0; trial < 5; ++trial) {
    Vec x0 = base;
    for (double& v : x0) v += 0.05 * test_util::random_vec(rng, 1)[0];
    Vec u = test_util::random_vec(rng, 3, 0.5);
    SimIn in = basic_in(x0, u, 0.2, 2);
    in.want_forward = true;
    SimOut out = rk4.simulate(in);

    const double h = 1e-6;
    for (int j = 0; j < cp.n_x(); ++j) {
      SimIn p = basic_in(x0, u, 0.2, 2);
      p.x0[j] += h;
      SimIn m = basic_in(x0, u, 0.2, 2);
      m.x0[j] -= h;
      Vec fp = rk4.simulate(p).x_next, fm = rk4.simulate(m).x_next;
      for (int i = 0; i < cp.n_x(); ++i) {
        const double fd = (fp[i] - fm[i]) / (2 * h);
        CHECK(std::abs(fd - out.sx(i, j)) <= 1e-6 * std::max(1.0, std::abs(fd)));
      }
    }
    for (int j = 0; j < 3; ++j) {
      SimIn p = basic_in(x0, u, 0.2, 2);
      p.u[j] += h;
      SimIn m = basic_in(x0, u, 0.2, 2);
      m.u[j] -= h;
      Vec fp = rk4.simulate(p).x_next, fm = rk4.simulate(m).x_next;
      for (int i = 0; i < cp.n_x(); ++i) {
        const double fd = (fp[i] - fm[i]) / (2 * h);
        CHECK(std::abs(fd - out.su(i, j)) <= 1e-6 * std::max(1.0, std::abs(fd)));
      }
    }
  }
}

TEST_CASE("erk: adjoint equals seed^T [Sx Su]") {
  bench::PendulumParams pp;
  ErkIntegrator rk4(bench::build_pendulum_model(pp), erk_rk4());
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 10; ++trial) {
    SimIn in = basic_in(test_util::random_vec(rng, 4, 2.0), test_util::random_vec(rng, 1, 10.0),
                        0.05, 3);
    in.want_forward = true;
    in.want_adjoint = true;
    in.seed = test_util::random_vec(rng, 4);
    SimOut out = rk4.simulate(in);
    for (int c = 0; c < 4; ++c) {
      double acc = 0.0;
      for (int r = 0; r < 4; ++r) acc += in.seed[r] * out.sx(r, c);
      CHECK(std::abs(acc - out.adjoint[c]) <= 1e-10);
    }
    double acc = 0.0;
    for (int r = 0; r < 4; ++r) acc += in.seed[r] * out.su(r, 0);
    CHECK(std::abs(acc - out.adjoint[4]) <= 1e-10);
  }
}

TEST_CASE("erk: hessian matches finite differences of the adjoint") {
  bench::PendulumParams pp;
  ErkIntegrator rk4(bench::build_pendulum_model(pp), erk_rk4());
  std::mt19937_64 rng(24);
  SimIn in = basic_in({0.2, 2.8, -0.4, 0.7}, {5.0}, 0.04, 2);
  in.seed = test_util::random_vec(rng, 4);
  in.want_adjoint = true;
  in.want_hessian = true;
  SimOut out = rk4.simulate(in);

  // exact symmetry as stored
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j) CHECK(out.hess(i, j) == out.hess(j, i));

  const double h = 1e-5;
  auto adjoint_at = [&](const Vec& x0, const Vec& u) {
    SimIn pin = basic_in(x0, u, 0.04, 2);
    pin.seed = in.seed;
    pin.want_adjoint = true;
    return rk4.simulate(pin).adjoint;
  };
  for (int j = 0; j < 5; ++j) {
    Vec xp = in.x0, xm = in.x0, up = in.u, um = in.u;
    if (j < 4) {
      xp[j] += h;
      xm[j] -= h;
    } else {
      up[0] += h;
      um[0] -= h;
    }
    Vec ap = adjoint_at(xp, up), am = adjoint_at(xm, um);
    for (int i = 0; i < 5; ++i) {
      const double fd = (ap[i] - am[i]) / (2 * h);
      CHECK(std::abs(fd - out.hess(i, j)) <= 1e-5 * std::max(1.0, std::abs(fd)));
    }
  }
}

TEST_CASE("irk: implicit midpoint on xdot = -x is the analytic rational map") {
  ImplicitDaeModel model = ad::make_implicit(scalar_linear_model(-1.0));
  IrkOptions opts;
  opts.stages = 1;
  IrkIntegrator irk(model, opts);
  const double h = 0.3;
  SimIn in = basic_in({2.0}, {}, h, 1);
  SimOut out = irk.simulate(in);
  CHECK(out.x_next[0] == doctest::Approx(2.0 * (1 - h / 2) / (1 + h / 2)).epsilon(1e-14));
}

TEST_CASE("irk: linear dae {xdot = z, 0 = z - u}") {
  GraphBuilder b;
  auto xdot = b.input(Block::XDot, 1);
  b.input(Block::X, 1);
  auto z = b.input(Block::Z, 1);
  auto u = b.input(Block::U, 1);
  std::vector<Expr> f = {xdot[0] - z[0], z[0] - u[0]};
  b.set_outputs(f);
  ImplicitDaeModel model;
  model.f = std::make_shared<GraphFunction>(b.release());
  model.n_x = 1;
  model.n_z = 1;

  IrkOptions opts;
  opts.stages = 2;
  IrkIntegrator irk(model, opts);
  SimIn in = basic_in({1.5}, {0.7}, 0.25, 1);
  in.want_forward = true;
  SimOut out = irk.simulate(in);
  CHECK(out.x_next[0] == doctest::Approx(1.5 + 0.25 * 0.7).epsilon(1e-14));
  CHECK(out.z[0] == doctest::Approx(0.7).epsilon(1e-14));
  CHECK(out.sx(0, 0) == doctest::Approx(1.0));
  CHECK(out.su(0, 0) == doctest::Approx(0.25));
}

TEST_CASE("irk: stage counts agree with the matrix exponential on linear systems") {
  std::mt19937_64 rng(25);
  DenseMatrix a = test_util::random_matrix(rng, 3, 3);
  ImplicitDaeModel model = ad::make_implicit(matrix_linear_model(a));
  Vec x0 = test_util::random_vec(rng, 3);
  const double h = 0.05;

  // reference: fine RK4
  ErkIntegrator rk4(matrix_linear_model(a), erk_rk4());
  SimIn fine = basic_in(x0, {}, h, 200);
  Vec x_ref = rk4.simulate(fine).x_next;

  for (int s : {2, 3}) {
    IrkOptions opts;
    opts.stages = s;
    IrkIntegrator irk(model, opts);
    SimIn in = basic_in(x0, {}, h, 1);
    SimOut out = irk.simulate(in);
    const double tol = s == 2 ? 5e-9 : 1e-11;
    CHECK(test_util::max_abs_diff(out.x_next, x_ref) <= tol);
  }
}

TEST_CASE("irk: engine sensitivities, adjoint and hessian") {
  bench::EngineParams ep;
  ImplicitDaeModel model = bench::build_engine_model(ep);
  bench::EngineSteadyState ss = bench::engine_steady_state(ep, 50.0, 0.0);

  IrkOptions opts;
  opts.stages = 3;
  opts.newton_tol = 1e-13;
  IrkIntegrator irk(model, opts);

  SimIn in = basic_in(ss.x, {8.0, -5.0}, 0.05, 1);
  in.z_init = ss.z;
  in.want_forward = true;
  in.want_adjoint = true;
  in.want_hessian = true;
  std::mt19937_64 rng(26);
  in.seed = test_util::random_vec(rng, 4);
  SimOut out = irk.simulate(in);

  // adjoint consistency
  for (int c = 0; c < 6; ++c) {
    double acc = 0.0;
    for (int r = 0; r < 4; ++r)
      acc += in.seed[r] * (c < 4 ? out.sx(r, c) : out.su(r, c - 4));
    CHECK(std::abs(acc - out.adjoint[c]) <= 1e-10);
  }

  // forward sensitivities vs FD
  const double h = 1e-6;
  auto end_state = [&](const Vec& x0, const Vec& u) {
    SimIn pin = basic_in(x0, u, 0.05, 1);
    pin.z_init = ss.z;
    return irk.simulate(pin).x_next;
  };
  for (int j = 0; j < 6; ++j) {
    Vec xp = in.x0, xm = in.x0, up = in.u, um = in.u;
    if (j < 4) {
      xp[j] += h;
      xm[j] -= h;
    } else {
      up[j - 4] += h;
      um[j - 4] -= h;
    }
    Vec fp = end_state(xp, up), fm = end_state(xm, um);
    for (int i = 0; i < 4; ++i) {
      const double fd = (fp[i] - fm[i]) / (2 * h);
      const double got = j < 4 ? out.sx(i, j) : out.su(i, j - 4);
      CHECK(std::abs(fd - got) <= 1e-6 * std::max(1.0, std::abs(fd)));
    }
  }

  // hessian vs FD of adjoint
  auto adjoint_at = [&](const Vec& x0, const Vec& u) {
    SimIn pin = basic_in(x0, u, 0.05, 1);
    pin.z_init = ss.z;
    pin.seed = in.seed;
    pin.want_adjoint = true;
    return irk.simulate(pin).adjoint;
  };
  const double h2 = 1e-5;
  for (int j = 0; j < 6; ++j) {
    Vec xp = in.x0, xm = in.x0, up = in.u, um = in.u;
    if (j < 4) {
      xp[j] += h2;
      xm[j] -= h2;
    } else {
      up[j - 4] += h2;
      um[j - 4] -= h2;
    }
    Vec ap = adjoint_at(xp, up), am = adjoint_at(xm, um);
    for (int i = 0; i < 6; ++i) {
      const double fd = (ap[i] - am[i]) / (2 * h2);
      CHECK(std::abs(fd - out.hess(i, j)) <= 1e-5 * std::max(1.0, std::abs(fd)));
    }
  }
}

TEST_CASE("irk: newton failure reports iteration count") {
  bench::EngineParams ep;
  ImplicitDaeModel model = bench::build_engine_model(ep);
  IrkOptions opts;
  opts.stages = 3;
  opts.newton_max_iter = 1;
  IrkIntegrator irk(model, opts);
  SimIn in = basic_in({1.2, 1.5, 50.0, 50.0}, {0.0, 0.0}, 0.05, 1);
  in.z_init = {1.3, 1.5};
  CHECK_THROWS_AS(irk.simulate(in), nmpc::NewtonNoConvergenceError);
}

TEST_CASE("convergence slopes: RK4 and Gauss-Legendre orders") {
  bench::PendulumParams pp;
  ExplicitModel pend = bench::build_pendulum_model(pp);
  ImplicitDaeModel pend_dae = ad::make_implicit(pend);
  Vec x0{0.0, 2.6, 0.3, -0.2}, u{2.0};
  const double t_end = 0.4;

  ErkIntegrator fine(pend, erk_rk4());
  SimIn ref_in = basic_in(x0, u, t_end, 4000);
  Vec x_ref = fine.simulate(ref_in).x_next;

  std::vector<double> hs{t_end / 4, t_end / 8, t_end / 16, t_end / 32, t_end / 64};

  auto run_erk = [&](double h) {
    ErkIntegrator rk4(pend, erk_rk4());
    SimIn in = basic_in(x0, u, t_end, int(std::lround(t_end / h)));
    return rk4.simulate(in).x_next;
  };
  const double slope_rk4 = convergence_slope(run_erk, x_ref, hs);
  CHECK(slope_rk4 > 3.7);
  CHECK(slope_rk4 < 4.3);

  auto run_gl = [&](int stages) {
    return [&, stages](double h) {
      IrkOptions opts;
      opts.stages = stages;
      opts.newton_tol = 1e-14;
      opts.newton_max_iter = 50;
      IrkIntegrator irk(pend_dae, opts);
      SimIn in = basic_in(x0, u, t_end, int(std::lround(t_end / h)));
      return irk.simulate(in).x_next;
    };
  };
  const double slope_gl2 = convergence_slope(run_gl(2), x_ref, hs);
  CHECK(slope_gl2 > 3.7);
  CHECK(slope_gl2 < 4.3);

  std::vector<double> hs3{t_end / 2, t_end / 3, t_end / 4, t_end / 6, t_end / 8};
  const double slope_gl3 = convergence_slope(run_gl(3), x_ref, hs3);
  CHECK(slope_gl3 > 5.5);
  CHECK(slope_gl3 < 6.5);
}

TEST_CASE("irk: frozen-jacobian policy reaches the same solution") {
  bench::EngineParams ep;
  ImplicitDaeModel model = bench::build_engine_model(ep);
  bench::EngineSteadyState ss = bench::engine_steady_state(ep, 50.0, 0.0);

  IrkOptions fresh;
  fresh.stages = 3;
  fresh.newton_tol = 1e-12;
  IrkOptions frozen = fresh;
  frozen.refactor_every_iter = false;
  frozen.newton_max_iter = 60;

  SimIn in = basic_in(ss.x, {5.0, -3.0}, 0.05, 1);
  in.z_init = ss.z;
  Vec a = IrkIntegrator(model, fresh).simulate(in).x_next;
  Vec b = IrkIntegrator(model, frozen).simulate(in).x_next;
  CHECK(test_util::max_abs_diff(a, b) <= 1e-10);
}

TEST_CASE("irk: algebraic output conventions agree on a constant dae") {
  // z == u makes first-stage value and extrapolation identical
  GraphBuilder b;
  auto xdot = b.input(Block::XDot, 1);
  b.input(Block::X, 1);
  auto z = b.input(Block::Z, 1);
  auto u = b.input(Block::U, 1);
  std::vector<Expr> f = {xdot[0] - z[0], z[0] - u[0]};
  b.set_outputs(f);
  ImplicitDaeModel model;
  model.f = std::make_shared<GraphFunction>(b.release());
  model.n_x = 1;
  model.n_z = 1;

  for (bool extrapolate : {false, true}) {
    IrkOptions opts;
    opts.stages = 2;
    opts.extrapolate_z_to_start = extrapolate;
    IrkIntegrator irk(model, opts);
    SimIn in = basic_in({0.0}, {0.9}, 0.1, 1);
    CHECK(irk.simulate(in).z[0] == doctest::Approx(0.9).epsilon(1e-13));
  }
}
