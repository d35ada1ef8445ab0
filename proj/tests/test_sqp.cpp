#include <cmath>
#include <sstream>
#include <algorithm>

#include "doctest.h"
#include "nmpc/bench/ocps.hpp"
#include "nmpc/sqp/solver.hpp"
#include "support/test_util.hpp"

using namespace nmpc;
using namespace nmpc::sqp;
using ad::Block;
using ad::Expr;
using ad::GraphBuilder;
using ad::GraphFunction;
using linalg::DenseMatrix;
using linalg::Vec;

namespace {

// Linear continuous dynamics xdot = Ac x + Bc u; its RK4 discretization is
// exactly affine, so the NLP is a convex QP.
OcpNlp linear_nlp(std::mt19937_64& rng, int n, int nx, int nu, double u_bound = qp::kInf) {
  DenseMatrix ac = test_util::random_matrix(rng, nx, nx, 0.4);
  DenseMatrix bc = test_util::random_matrix(rng, nx, nu, 0.8);
  GraphBuilder b;
  auto x = b.input(Block::X, nx);
  auto u = b.input(Block::U, nu);
  std::vector<Expr> f;
  for (int i = 0; i < nx; ++i) {
    Expr acc = b.constant(0.0);
    for (int j = 0; j < nx; ++j) acc = acc + ac(i, j) * x[j];
    for (int j = 0; j < nu; ++j) acc = acc + bc(i, j) * u[j];
    f.push_back(acc);
  }
  b.set_outputs(f);
  ad::ExplicitModel model{std::make_shared<GraphFunction>(b.release())};

  OcpNlp nlp;
  nlp.dims.N = n;
  nlp.dims.nx.assign(n + 1, nx);
  nlp.dims.nu.assign(n, nu);
  nlp.dims.nz.assign(n, 0);
  nlp.dynamics.resize(n);
  for (int k = 0; k < n; ++k) {
    nlp.dynamics[k].explicit_model = model;
    nlp.dynamics[k].config.t_interval = 0.1;
  }
  nlp.cost.resize(n + 1);
  for (int k = 0; k <= n; ++k) {
    LinearLsCost ls;
    const int nuk = k < n ? nu : 0;
    ls.vx.resize(nx + nuk, nx);
    ls.vu.resize(nx + nuk, nuk);
    for (int i = 0; i < nx; ++i) ls.vx(i, i) = 1.0;
    for (int i = 0; i < nuk; ++i) ls.vu(nx + i, i) = 1.0;
    ls.y_ref = test_util::random_vec(rng, nx + nuk, 0.5);
    ls.w.resize(nx + nuk, nx + nuk);
    for (int i = 0; i < nx + nuk; ++i) ls.w(i, i) = 0.5 + (i % 3) * 0.25;
    nlp.cost[k] = StageCost{std::move(ls), 1.0};
  }
  nlp.constraints.resize(n + 1);
  if (u_bound < qp::kInf) {
    for (int k = 0; k < n; ++k) {
      nlp.constraints[k].bu.index.resize(nu);
      for (int i = 0; i < nu; ++i) nlp.constraints[k].bu.index[i] = i;
      nlp.constraints[k].bu.lb.assign(nu, -u_bound);
      nlp.constraints[k].bu.ub.assign(nu, u_bound);
    }
  }
  nlp.validate();
  return nlp;
}

SqpOptions default_opts() {
  SqpOptions o;
  o.qp.max_iter = 100;
  return o;
}

}  // namespace

TEST_CASE("regularize: PD blocks unchanged, indefinite ones lifted") {
  DenseMatrix pd(2, 2, {3.0, 0.2, 0.2, 2.0});
  DenseMatrix h = pd;
  regularize(h, Regularization::Project, 1e-4);
  CHECK(test_util::max_abs_diff(h, pd) == 0.0);
  regularize(h, Regularization::Mirror, 1e-4);
  CHECK(test_util::max_abs_diff(h, pd) == 0.0);

  DenseMatrix ind(2, 2, {-2.0, 0.0, 0.0, 3.0});
  h = ind;
  regularize(h, Regularization::Project, 1e-4);
  CHECK(h(0, 0) == doctest::Approx(1e-4).epsilon(1e-9));
  CHECK(h(1, 1) == doctest::Approx(3.0));
  h = ind;
  regularize(h, Regularization::Mirror, 1e-4);
  CHECK(h(0, 0) == doctest::Approx(2.0));
  CHECK(h(1, 1) == doctest::Approx(3.0));

  std::mt19937_64 rng(51);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 2 + int(rng() % 9);
    DenseMatrix a = test_util::random_symmetric(rng, n, 2.0);
    for (auto mode : {Regularization::Project, Regularization::Mirror}) {
      DenseMatrix m = a;
      regularize(m, mode, 1e-4);
      linalg::SymEigResult eig = linalg::syev_jacobi(m);
      CHECK(eig.eigenvalues.front() >= 1e-4 - 1e-10);
    }
  }
}

TEST_CASE("linearize: linear dynamics and quadratic cost give iterate-independent data") {
  std::mt19937_64 rng(52);
  OcpNlp nlp = linear_nlp(rng, 4, 3, 2);
  SqpSolver solver(nlp, default_opts());
  Vec x0 = test_util::random_vec(rng, 3);

  SqpIterate it1 = SqpIterate::zeros(nlp);
  SqpIterate it2 = SqpIterate::zeros(nlp);
  for (int k = 0; k <= 4; ++k) it2.x[k] = test_util::random_vec(rng, 3);
  for (int k = 0; k < 4; ++k) it2.u[k] = test_util::random_vec(rng, 2);

  qp::OcpQp qp1 = solver.linearize(it1, x0);
  qp::OcpQp qp2 = solver.linearize(it2, x0);
  for (int k = 0; k < 4; ++k) {
    CHECK(test_util::max_abs_diff(qp1.stages[k].A, qp2.stages[k].A) <= 1e-12);
    CHECK(test_util::max_abs_diff(qp1.stages[k].B, qp2.stages[k].B) <= 1e-12);
    CHECK(test_util::max_abs_diff(qp1.stages[k].Q, qp2.stages[k].Q) <= 1e-12);
    // b = phi(x,u) - x_next stays consistent with the affine dynamics
    Vec expect = qp2.stages[k].b;
    Vec affine(3, 0.0);
    linalg::gemv(1.0, qp2.stages[k].A, linalg::Trans::No, it2.x[k], 0.0, affine);
    linalg::gemv(1.0, qp2.stages[k].B, linalg::Trans::No, it2.u[k], 1.0, affine);
    Vec b1_shifted = qp1.stages[k].b;  // phi(0,0) - 0 = affine constant
    linalg::axpy(1.0, affine, b1_shifted);
    linalg::axpy(-1.0, it2.x[k + 1], b1_shifted);
    CHECK(test_util::max_abs_diff(expect, b1_shifted) <= 1e-10);
  }
}

TEST_CASE("gauss-newton hessian: identity residual with halved weights") {
  // r = [x; u] - ref, W = blkdiag(Q, R)/2 gives H = blkdiag(Q, R) exactly
  std::mt19937_64 rng(53);
  OcpNlp nlp = linear_nlp(rng, 2, 2, 1);
  Vec qd{3.0, 5.0}, rd{2.0};
  auto& ls = std::get<LinearLsCost>(nlp.cost[0].spec);
  ls.w.set_zero();
  ls.w(0, 0) = qd[0] / 2;
  ls.w(1, 1) = qd[1] / 2;
  ls.w(2, 2) = rd[0] / 2;
  SqpSolver solver(nlp, default_opts());
  SqpIterate it = SqpIterate::zeros(nlp);
  qp::OcpQp qp = solver.linearize(it, Vec{0.0, 0.0});
  CHECK(qp.stages[0].Q(0, 0) == doctest::Approx(qd[0]));
  CHECK(qp.stages[0].Q(1, 1) == doctest::Approx(qd[1]));
  CHECK(qp.stages[0].R(0, 0) == doctest::Approx(rd[0]));
  CHECK(std::abs(qp.stages[0].S(0, 0)) <= 1e-14);
}

TEST_CASE("gauss-newton on external cost is rejected") {
  std::mt19937_64 rng(54);
  OcpNlp nlp = linear_nlp(rng, 2, 2, 1);
  GraphBuilder b;
  auto x = b.input(Block::X, 2);
  auto u = b.input(Block::U, 1);
  std::vector<Expr> out = {x[0] * x[0] + u[0] * u[0]};
  b.set_outputs(out);
  nlp.cost[0] = StageCost{ExternalCost{std::make_shared<GraphFunction>(b.release())}, 1.0};
  SqpSolver solver(nlp, default_opts());
  SqpIterate it = SqpIterate::zeros(nlp);
  CHECK_THROWS_AS(solver.linearize(it, Vec{0.0, 0.0}), nmpc::InvalidInputError);
}

TEST_CASE("nonlinear-ls: gauss-newton equals exact hessian at zero residual") {
  bench::PendulumParams pp;
  pp.horizon = 3;
  bench::PendulumOcp ocp = build_pendulum_ocp(pp);
  // nonlinear residual r(x,u) = [sin(x1); x2*x0; u] tracking its own value
  GraphBuilder b;
  auto x = b.input(Block::X, 4);
  auto u = b.input(Block::U, 1);
  std::vector<Expr> r = {sin(x[1]), x[2] * x[0], u[0] + 0.1 * x[3]};
  b.set_outputs(r);
  auto rf = std::make_shared<GraphFunction>(b.release());

  Vec point_x{0.3, 1.2, -0.4, 0.8}, point_u{2.0};
  ad::Bindings in;
  in[Block::X] = point_x;
  in[Block::U] = point_u;
  Vec y0(3);
  rf->eval(in, y0);

  NonlinearLsCost ls;
  ls.r = rf;
  ls.y_ref = y0;  // zero residual at the evaluation point
  ls.w = DenseMatrix::identity(3);
  ocp.nlp.cost[0] = StageCost{ls, 1.0};

  SqpOptions gn = default_opts();
  SqpOptions ex = default_opts();
  ex.hessian = HessianMode::Exact;
  SqpSolver sgn(ocp.nlp, gn), sex(ocp.nlp, ex);
  SqpIterate it = SqpIterate::zeros(ocp.nlp);
  it.x[0] = point_x;
  it.u[0] = point_u;
  qp::OcpQp q1 = sgn.linearize(it, point_x);
  qp::OcpQp q2 = sex.linearize(it, point_x);
  CHECK(test_util::max_abs_diff(q1.stages[0].Q, q2.stages[0].Q) <= 1e-8);
  CHECK(test_util::max_abs_diff(q1.stages[0].R, q2.stages[0].R) <= 1e-8);
}

TEST_CASE("scqp: zero multiplier reduces to gauss-newton; ellipsoid term is PSD") {
  std::mt19937_64 rng(55);
  OcpNlp nlp = linear_nlp(rng, 3, 3, 2);
  // ellipsoidal row || E (x - xc) ||^2 <= 1 via a nonlinear row
  DenseMatrix e_mat = test_util::random_matrix(rng, 3, 3);
  Vec xc = test_util::random_vec(rng, 3);
  GraphBuilder b;
  auto x = b.input(Block::X, 3);
  b.get()->declare_block(Block::U, 2);
  std::vector<Expr> inner_rows;
  for (int i = 0; i < 3; ++i) {
    Expr acc = b.constant(0.0);
    for (int j = 0; j < 3; ++j) acc = acc + e_mat(i, j) * (x[j] - xc[j]);
    inner_rows.push_back(acc);
  }
  Expr phi = inner_rows[0] * inner_rows[0] + inner_rows[1] * inner_rows[1] +
             inner_rows[2] * inner_rows[2];
  std::vector<Expr> outs = {phi};
  b.set_outputs(outs);
  auto g = std::make_shared<GraphFunction>(b.release());

  GraphBuilder bi;
  auto xi = bi.input(Block::X, 3);
  bi.get()->declare_block(Block::U, 2);
  std::vector<Expr> irows;
  for (int i = 0; i < 3; ++i) {
    Expr acc = bi.constant(0.0);
    for (int j = 0; j < 3; ++j) acc = acc + e_mat(i, j) * (xi[j] - xc[j]);
    irows.push_back(acc);
  }
  bi.set_outputs(irows);
  auto inner = std::make_shared<GraphFunction>(bi.release());

  StageConstraints& c = nlp.constraints[1];
  c.g_nonl = g;
  c.gl = {-qp::kInf};
  c.gu = {1.0};
  StageConstraints::ScqpDecl decl;
  decl.row = 0;
  decl.inner = inner;
  decl.outer_hess = DenseMatrix(3, 3);
  for (int i = 0; i < 3; ++i) decl.outer_hess(i, i) = 2.0;  // hess of c'c
  c.scqp = {decl};

  SqpOptions gn = default_opts();
  SqpOptions scqp = default_opts();
  scqp.hessian = HessianMode::Scqp;
  SqpSolver s1(nlp, gn), s2(nlp, scqp);
  SqpIterate it = SqpIterate::zeros(nlp);
  for (int k = 0; k <= 3; ++k) it.x[k] = test_util::random_vec(rng, 3);

  // lambda = 0: identical data
  Vec x0 = it.x[0];
  qp::OcpQp q1 = s1.linearize(it, x0);
  qp::OcpQp q2 = s2.linearize(it, x0);
  CHECK(test_util::max_abs_diff(q1.stages[1].Q, q2.stages[1].Q) == 0.0);

  // lambda > 0: adds lam * Jin' (2 I) Jin and stays PSD
  const int scqp_row = static_cast<int>(it.lam_up[1].size()) - 1;
  it.lam_up[1][scqp_row] = 0.7;
  qp::OcpQp q3 = s2.linearize(it, x0);
  DenseMatrix jin;
  ad::Bindings in;
  in[Block::X] = it.x[1];
  in[Block::U] = it.u[1];
  const Block wrt[] = {Block::X, Block::U};
  inner->jacobian(in, wrt, jin);
  DenseMatrix expected = q1.stages[1].Q;
  DenseMatrix jj(3, 3);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double acc = 0.0;
      for (int r = 0; r < 3; ++r) acc += jin(r, i) * jin(r, j);
      jj(i, j) = acc;
    }
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) expected(i, j) += 0.7 * 2.0 * jj(i, j);
  CHECK(test_util::max_abs_diff(q3.stages[1].Q, expected) <= 1e-12);
  linalg::SymEigResult eig = linalg::syev_jacobi(q3.stages[1].Q);
  CHECK(eig.eigenvalues.front() >= -1e-10);
}

TEST_CASE("exact hessian: linear dynamics reduce to the cost hessian; FD check on the pendulum") {
  std::mt19937_64 rng(56);
  OcpNlp lin = linear_nlp(rng, 3, 2, 1);
  SqpOptions ex = default_opts();
  ex.hessian = HessianMode::Exact;
  SqpSolver solver(lin, ex);
  SqpIterate it = SqpIterate::zeros(lin);
  for (int k = 0; k < 3; ++k) it.pi[k] = test_util::random_vec(rng, 2);
  std::vector<DenseMatrix> blocks = solver.exact_hessian_blocks(it);
  // cost is pure quadratic: H = 2 V' W V regardless of pi
  SqpOptions gn = default_opts();
  SqpSolver sgn(lin, gn);
  qp::OcpQp q = sgn.linearize(SqpIterate::zeros(lin), Vec{0.0, 0.0});
  CHECK(blocks[1](0, 0) == doctest::Approx(q.stages[1].Q(0, 0)));
  CHECK(blocks[1](2, 2) == doctest::Approx(q.stages[1].R(0, 0)));

  // pendulum: FD of the pi-weighted dynamics gradient
  bench::PendulumParams pp;
  pp.horizon = 2;
  bench::PendulumOcp ocp = build_pendulum_ocp(pp);
  SqpSolver psolver(ocp.nlp, ex);
  SqpIterate pit = SqpIterate::zeros(ocp.nlp);
  pit.x[0] = {0.1, 2.9, -0.2, 0.5};
  pit.u[0] = {4.0};
  pit.pi[0] = test_util::random_vec(rng, 4);
  std::vector<DenseMatrix> pb = psolver.exact_hessian_blocks(pit);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j) CHECK(pb[0](i, j) == pb[0](j, i));

  // FD of the Lagrangian gradient at stage 0 (cost + pi' phi)
  sim::ErkIntegrator integ(*ocp.nlp.dynamics[0].explicit_model, sim::erk_rk4());
  auto lagr_grad = [&](const Vec& x, const Vec& u) {
    sim::SimIn in;
    in.x0 = x;
    in.u = u;
    in.t_interval = 0.01;
    in.n_steps = 1;
    in.seed = pit.pi[0];
    in.want_adjoint = true;
    sim::SimOut out = integ.simulate(in);
    Vec g = out.adjoint;  // dynamics part
    const auto& ls = std::get<LinearLsCost>(ocp.nlp.cost[0].spec);
    Vec e(5, 0.0);
    linalg::gemv(1.0, ls.vx, linalg::Trans::No, x, 0.0, e);
    linalg::gemv(1.0, ls.vu, linalg::Trans::No, u, 1.0, e);
    linalg::axpy(-1.0, ls.y_ref, e);
    Vec we(5, 0.0);
    linalg::gemv(1.0, ls.w, linalg::Trans::No, e, 0.0, we);
    DenseMatrix v(5, 5);
    for (int i = 0; i < 4; ++i) v(i, i) = 1.0;
    v(4, 4) = 1.0;
    linalg::gemv(2.0, v, linalg::Trans::Yes, we, 1.0, g);
    return g;
  };
  const double h = 1e-5;
  for (int j = 0; j < 5; ++j) {
    Vec xp = pit.x[0], xm = pit.x[0], up = pit.u[0], um = pit.u[0];
    if (j < 4) {
      xp[j] += h;
      xm[j] -= h;
    } else {
      up[0] += h;
      um[0] -= h;
    }
    Vec gp = lagr_grad(xp, up), gm = lagr_grad(xm, um);
    for (int i = 0; i < 5; ++i) {
      const double fd = (gp[i] - gm[i]) / (2 * h);
      CHECK(std::abs(fd - pb[0](i, j)) <= 1e-5 * std::max(1.0, std::abs(fd)));
    }
  }
}

TEST_CASE("sqp: convex problem solves in exactly one iteration") {
  std::mt19937_64 rng(57);
  for (int trial = 0; trial < 3; ++trial) {
    OcpNlp nlp = linear_nlp(rng, 5, 3, 2, /*u_bound=*/5.0);
    SqpSolver solver(nlp, default_opts());
    Vec x0 = test_util::random_vec(rng, 3);
    auto [sol, stats] = solver.solve(x0, SqpIterate::zeros(nlp));
    CHECK(stats.status == SqpStatus::Converged);
    CHECK(stats.iterations == 1);
  }
}

TEST_CASE("sqp: chain at the steady state needs zero iterations") {
  bench::ChainParams cp;
  cp.masses = 4;
  cp.horizon = 10;
  bench::ChainOcp ocp = bench::build_chain_ocp(cp);
  SqpSolver solver(ocp.nlp, default_opts());
  SqpIterate it = SqpIterate::zeros(ocp.nlp);
  for (auto& x : it.x) x = ocp.x_ref;
  auto [sol, stats] = solver.solve(ocp.x_ref, std::move(it));
  CHECK(stats.status == SqpStatus::Converged);
  CHECK(stats.iterations == 0);
  qp::KktResiduals res = solver.residuals(sol, ocp.x_ref);
  CHECK(res.max() <= 1e-8);
}

TEST_CASE("sqp: pendulum swing-up with gauss-newton converges; residual tail is superlinear") {
  bench::PendulumParams pp;
  bench::PendulumOcp ocp = bench::build_pendulum_ocp(pp);
  SqpOptions opts = default_opts();
  opts.max_iter = 200;
  SqpSolver solver(ocp.nlp, opts);
  Vec x0{0.0, std::numbers::pi, 0.0, 0.0};
  SqpIterate it = interpolated_iterate(ocp.nlp, x0, Vec(4, 0.0));
  auto [sol, stats] = solver.solve(x0, std::move(it));
  REQUIRE(stats.status == SqpStatus::Converged);
  qp::KktResiduals res = solver.residuals(sol, x0);
  CHECK(res.stationarity <= 1e-6);
  CHECK(res.equality <= 1e-6);

  // full-step consistency: the predicted decrease dominates near the end
  const size_t n = stats.history.size();
  REQUIRE(n >= 3);
  const double last = stats.history[n - 2].residuals.stationarity;
  const double prev = stats.history[n - 3].residuals.stationarity;
  CHECK(last <= 0.5 * prev);
}

TEST_CASE("rti: fixed point gives zero step; frozen-x0 iterations reach the sqp solution") {
  std::mt19937_64 rng(58);
  bench::PendulumParams pp;
  pp.horizon = 40;
  bench::PendulumOcp ocp = bench::build_pendulum_ocp(pp);
  SqpOptions opts = default_opts();
  opts.max_iter = 200;
  SqpSolver solver(ocp.nlp, opts);
  Vec x0{0.0, 2.0, 0.0, 0.0};
  SqpIterate it = interpolated_iterate(ocp.nlp, x0, Vec(4, 0.0));
  auto [converged, stats] = solver.solve(x0, std::move(it));
  REQUIRE(stats.status == SqpStatus::Converged);

  SqpSolver rti_solver(ocp.nlp, opts);
  auto [after, rti_stats] = rti_solver.rti_step(x0, converged);
  CHECK(rti_stats.history[0].step_norm <= 1e-8);

  // repeated RTI from scratch converges to the solve() answer; identical
  // linearizations need identically solved QPs, so no warm-start push here
  SqpOptions rti_opts = opts;
  rti_opts.warm_start_qp = false;
  SqpSolver rti2(ocp.nlp, rti_opts);
  SqpIterate cur = interpolated_iterate(ocp.nlp, x0, Vec(4, 0.0));
  double res_max = 1.0;
  for (int i = 0; i < 100 && res_max > 1e-6; ++i) {
    auto [next, st] = rti2.rti_step(x0, std::move(cur));
    cur = std::move(next);
    res_max = rti2.residuals(cur, x0).max();
  }
  CHECK(res_max <= 1e-6);
  for (int k = 0; k <= 40; ++k)
    CHECK(test_util::max_abs_diff(cur.x[k], converged.x[k]) <= 1e-5);
}

TEST_CASE("sqp residuals: zero cost and no constraints vanish at any feasible point") {
  std::mt19937_64 rng(59);
  OcpNlp nlp = linear_nlp(rng, 4, 3, 2);
  for (int k = 0; k <= 4; ++k) {
    auto& ls = std::get<LinearLsCost>(nlp.cost[k].spec);
    ls.w.set_zero();
    std::fill(ls.y_ref.begin(), ls.y_ref.end(), 0.0);
  }
  SqpSolver solver(nlp, default_opts());
  SqpIterate it = SqpIterate::zeros(nlp);
  Vec x0 = test_util::random_vec(rng, 3);
  it.x[0] = x0;
  // propagate a feasible trajectory with the integrator
  sim::ErkIntegrator integ(*nlp.dynamics[0].explicit_model, sim::erk_rk4());
  for (int k = 0; k < 4; ++k) {
    it.u[k] = test_util::random_vec(rng, 2);
    sim::SimIn sin_in;
    sin_in.x0 = it.x[k];
    sin_in.u = it.u[k];
    sin_in.t_interval = 0.1;
    sin_in.n_steps = 1;
    it.x[k + 1] = integ.simulate(sin_in).x_next;
  }
  qp::KktResiduals res = solver.residuals(it, x0);
  CHECK(res.max() <= 1e-12);
}

TEST_CASE("sqp: soft constraint turns an infeasible problem into a solved one") {
  std::mt19937_64 rng(60);
  // force x1 of stage 1 to conflict with reachable set by a tight state bound
  OcpNlp nlp = linear_nlp(rng, 3, 2, 1, /*u_bound=*/0.05);
  StageConstraints& c = nlp.constraints[1];
  c.bx.index = {0};
  c.bx.lb = {5.0};
  c.bx.ub = {qp::kInf};

  SqpOptions opts = default_opts();
  opts.max_iter = 30;
  Vec x0{0.0, 0.0};
  {
    SqpSolver hard(nlp, opts);
    auto [sol, stats] = hard.solve(x0, SqpIterate::zeros(nlp));
    CHECK(stats.status != SqpStatus::Converged);  // infeasible stall or QP trouble
  }
  OcpNlp soft = nlp;
  soft.constraints[1].soft.push_back({0, 0.5, 2.0});
  {
    SqpSolver solver(soft, opts);
    auto [sol, stats] = solver.solve(x0, SqpIterate::zeros(soft));
    REQUIRE(stats.status == SqpStatus::Converged);
    CHECK(sol.s[1][0] > 0.0);
    // hard row holds up to the returned slack
    CHECK(sol.x[1][0] + sol.s[1][0] >= 5.0 - 1e-6);
  }
}

TEST_CASE("sqp stats export to csv") {
  std::mt19937_64 rng(61);
  OcpNlp nlp = linear_nlp(rng, 3, 2, 1);
  SqpSolver solver(nlp, default_opts());
  auto [sol, stats] = solver.solve(Vec{0.1, -0.2}, SqpIterate::zeros(nlp));
  std::ostringstream os;
  write_stats_csv(os, stats);
  const std::string csv = os.str();
  CHECK(csv.find("iter,stat,eq,ineq,comp") == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == static_cast<long>(stats.history.size()) + 1);
}

TEST_CASE("sqp: integrator configuration can vary per shooting interval") {
  bench::PendulumParams pp;
  pp.horizon = 6;
  bench::PendulumOcp ocp = bench::build_pendulum_ocp(pp);
  // coarser scheme on the first half of the horizon
  for (int k = 0; k < 3; ++k) {
    ocp.nlp.dynamics[k].config.tableau = sim::erk_heun();
    ocp.nlp.dynamics[k].config.n_steps = 2;
  }
  SqpOptions opts = default_opts();
  SqpSolver solver(ocp.nlp, opts);
  Vec x0{0.0, 0.6, 0.0, 0.0};
  auto [sol, stats] = solver.solve(x0, interpolated_iterate(ocp.nlp, x0, Vec(4, 0.0)));
  CHECK(stats.status == SqpStatus::Converged);
}

TEST_CASE("rti: shifting warm-start policy works in closed loop") {
  bench::PendulumParams pp;  // full horizon
  bench::PendulumOcp ocp = bench::build_pendulum_ocp(pp);
  SqpOptions opts = default_opts();
  opts.rti_shift = true;
  SqpSolver solver(ocp.nlp, opts);
  sim::ErkIntegrator plant(*ocp.nlp.dynamics[0].explicit_model, sim::erk_rk4(), 10);

  Vec x{0.0, 0.3, 0.0, 0.0};
  SqpIterate it = interpolated_iterate(ocp.nlp, x, Vec(4, 0.0));
  double theta_max = 0.0;
  for (int i = 0; i < 50; ++i) {
    auto [next, st] = solver.rti_step(x, std::move(it));
    it = std::move(next);
    REQUIRE(st.status == SqpStatus::Converged);
    sim::SimIn in;
    in.x0 = x;
    in.u = it.u[0];
    in.t_interval = pp.dt;
    in.n_steps = 10;
    x = plant.simulate(in).x_next;
    theta_max = std::max(theta_max, std::abs(x[1]));
  }
  CHECK(theta_max <= 0.5);              // never diverges from the upright region
  CHECK(std::abs(x[1]) <= 0.05);        // angle regulated down
}

TEST_CASE("chain linearization: condensed dense route agrees with the structured solver") {
  bench::ChainParams cp;
  bench::ChainOcp ocp = bench::build_chain_ocp(cp);
  SqpSolver solver(ocp.nlp, default_opts());
  Vec x0 = bench::chain_horizontal_state(cp);
  SqpIterate it = interpolated_iterate(ocp.nlp, x0, ocp.x_ref);
  qp::OcpQp q = solver.linearize(it, x0);

  qp::IpmOptions opts;
  opts.max_iter = 100;
  auto [structured, s1] = qp::solve_ocp_qp_ipm(q, opts);
  REQUIRE(structured.status == qp::QpStatus::Solved);
  auto [dense, data] = qp::full_condense(q);
  auto [dsol, s2] = qp::solve_dense_qp_ipm(dense, opts);
  REQUIRE(dsol.status == qp::QpStatus::Solved);
  qp::QpSolution expanded = qp::expand(q, data, dsol);
  double diff = 0.0;
  for (int k = 0; k <= q.dims.N; ++k) {
    diff = std::max(diff, test_util::max_abs_diff(structured.x[k], expanded.x[k]));
    if (k < q.dims.N) diff = std::max(diff, test_util::max_abs_diff(structured.u[k], expanded.u[k]));
  }
  CHECK(diff <= 1e-6);
}

TEST_CASE("linearize reports the failing shooting interval") {
  bench::EngineParams ep;
  bench::EngineOcp ocp = bench::build_engine_ocp(ep, 1.4);
  SqpSolver solver(ocp.nlp, default_opts());
  bench::EngineSteadyState ss = bench::engine_steady_state(ep, 50.0, 0.0);
  SqpIterate it = interpolated_iterate(ocp.nlp, ss.x, ss.x);
  // algebraic guesses left at zero put the model outside its domain
  try {
    solver.linearize(it, ss.x);
    FAIL("expected a stage-indexed error");
  } catch (const nmpc::Error& e) {
    CHECK(std::string(e.what()).find("shooting interval 0") != std::string::npos);
  }
}
