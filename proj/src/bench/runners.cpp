#include "nmpc/bench/runners.hpp"

#include <cmath>

#include "nmpc/sim/integrator.hpp"

namespace nmpc::bench {

sqp::SqpOptions chain_oracle_plan() {
  sqp::SqpOptions o;
  o.hessian = sqp::HessianMode::Exact;
  o.reg = sqp::Regularization::Project;
  o.tol_stat = 1e-10;
  o.tol_eq = o.tol_ineq = o.tol_comp = 1e-9;
  o.qp.tol_stat = o.qp.tol_eq = o.qp.tol_ineq = o.qp.tol_comp = 1e-10;
  o.qp.max_iter = 100;
  o.max_iter = 30;
  return o;
}

ChainBenchResult run_chain_benchmark(const ChainBenchConfig& cfg) {
  ChainOcp ocp = build_chain_ocp(cfg.params);
  ChainBenchResult out;
  out.x_ref = ocp.x_ref;

  ClosedLoopConfig loop;
  loop.n_samples = cfg.n_samples;
  loop.dt = cfg.params.dt;
  loop.disturbances = {{cfg.disturbance_start, cfg.disturbance_duration, cfg.disturbance_u}};
  loop.x_ref_init = ocp.x_ref;
  PlantStep plant = make_dopri_plant(ocp.model, cfg.params.dt, cfg.plant_rtol, cfg.plant_atol);
  const Vec x0 = chain_horizontal_state(cfg.params);
  const Vec u_ref(3, 0.0);

  sqp::SqpSolver rti_solver(ocp.nlp, cfg.plan);
  Controller rti = cfg.plan.rti ? make_rti_controller(rti_solver, x0, ocp.x_ref)
                                : make_converged_controller(rti_solver, x0, ocp.x_ref);
  out.rti_run = simulate_closed_loop(rti, x0, loop, plant);
  out.dr_rti = metric_dr(out.rti_run, ocp.q_diag, ocp.r_diag, ocp.x_ref, u_ref);
  out.rti_times = summarize_times(out.rti_run.solve_time);
  for (size_t i = 0; i < ocp.x_ref.size(); ++i)
    out.final_error =
        std::max(out.final_error, std::abs(out.rti_run.x.back()[i] - ocp.x_ref[i]));

  if (cfg.with_oracle) {
    sqp::SqpOptions warm_plan;
    warm_plan.max_iter = 100;
    warm_plan.qp.max_iter = 100;
    sqp::SqpSolver warm(ocp.nlp, warm_plan);
    sqp::SqpSolver oracle(ocp.nlp, chain_oracle_plan());
    Controller ctrl = make_converged_controller(oracle, x0, ocp.x_ref, &warm);
    out.oracle_run = simulate_closed_loop(ctrl, x0, loop, plant);
    out.dr_oracle = metric_dr(out.oracle_run, ocp.q_diag, ocp.r_diag, ocp.x_ref, u_ref);
    out.rcso = metric_rcso(out.dr_rti, out.dr_oracle);
  }
  return out;
}

PendulumBenchResult run_pendulum_benchmark(const PendulumParams& params,
                                           const sqp::SqpOptions& plan) {
  PendulumOcp ocp = build_pendulum_ocp(params);
  sqp::SqpSolver solver(ocp.nlp, plan);
  const Vec x0(params.x0.begin(), params.x0.end());
  sqp::SqpIterate it = sqp::interpolated_iterate(ocp.nlp, x0, Vec(4, 0.0));
  auto [sol, stats] = solver.solve(x0, std::move(it));

  PendulumBenchResult out;
  out.final_residuals = solver.residuals(sol, x0);
  out.converged = stats.status == sqp::SqpStatus::Converged;
  out.stats = std::move(stats);
  return out;
}

EngineBenchResult run_engine_benchmark(const EngineBenchConfig& cfg) {
  const EngineParams& ep = cfg.params;
  EngineOcp ocp = build_engine_ocp(ep, cfg.profile.front().boost);
  EngineSteadyState ss = engine_steady_state(ep, 50.0, 0.0);

  double total = 0.0;
  for (const EngineProfileStep& st : cfg.profile) total += st.duration;
  const int n_samples = static_cast<int>(std::lround(total / ep.ts));
  auto profile_at = [&](double t) {
    double acc = 0.0;
    for (const EngineProfileStep& st : cfg.profile) {
      acc += st.duration;
      if (t < acc) return st.boost;
    }
    return cfg.profile.back().boost;
  };

  sqp::SqpSolver solver(ocp.nlp, cfg.plan);
  PlantStep plant = make_irk_plant(ocp.model, ep.ts, cfg.plant_substeps, ss.z);
  ClosedLoopConfig loop;
  loop.n_samples = n_samples;
  loop.dt = ep.ts;
  loop.x_ref_init = ss.x;

  auto iterate =
      std::make_shared<sqp::SqpIterate>(sqp::interpolated_iterate(ocp.nlp, ss.x, ss.x));
  for (auto& z : iterate->z) z = ss.z;
  EngineBenchResult out;

  Controller ctrl = [&](int n, const Vec& x) {
    ControllerOutput co;
    set_engine_boost_ref(solver.nlp_mutable(), ep, profile_at(n * ep.ts));
    try {
      auto [next, st] = solver.rti_step(x, std::move(*iterate));
      *iterate = std::move(next);
      co.failed = st.status != sqp::SqpStatus::Converged;
      co.kkt_res = st.history.back().residuals.max();
      co.qp_iterations = st.history.back().qp_iterations;
    } catch (const Error&) {
      co.failed = true;
    }
    if (!co.failed) {
      // track the worst box violation over the accepted solution trajectory
      for (int k = 1; k <= ocp.nlp.dims.N; ++k) {
        const Vec& xk = iterate->x[k];
        out.worst_bound_violation = std::max(
            {out.worst_bound_violation, ep.pi_c_lp_bounds[0] - xk[0],
             xk[0] - ep.pi_c_lp_bounds[1], ep.pi_c_hp_bounds[0] - xk[1],
             xk[1] - ep.pi_c_hp_bounds[1], ep.wastegate_bounds[0] - xk[2],
             xk[2] - ep.wastegate_bounds[1], ep.wastegate_bounds[0] - xk[3],
             xk[3] - ep.wastegate_bounds[1]});
      }
    }
    co.u0 = iterate->u[0];
    return co;
  };

  out.run = simulate_closed_loop(ctrl, ss.x, loop, plant);
  out.rti_times = summarize_times(out.run.solve_time);

  double acc = 0.0;
  for (const EngineProfileStep& st : cfg.profile) {
    acc += st.duration;
    const int idx = std::min<int>(static_cast<int>(std::lround(acc / ep.ts)), n_samples);
    const double boost = out.run.x[idx][0] * out.run.x[idx][1];
    out.step_tracking_rel_err.push_back(std::abs(boost - st.boost) / st.boost);
  }
  return out;
}

qp::OcpQp random_benchmark_qp(std::mt19937_64& rng, int n_max, int nx_max, int nu_max) {
  using qp::kInf;
  std::uniform_int_distribution<int> n_dist(2, n_max);
  std::uniform_int_distribution<int> nx_dist(2, nx_max);
  std::uniform_int_distribution<int> nu_dist(1, nu_max);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  qp::OcpQpDims dims;
  dims.N = n_dist(rng);
  dims.nx.resize(dims.N + 1);
  dims.nu.resize(dims.N);
  dims.ng.assign(dims.N + 1, 0);
  dims.ns.assign(dims.N + 1, 0);
  const int nx0 = nx_dist(rng);
  for (int k = 0; k <= dims.N; ++k) dims.nx[k] = k == 0 ? nx0 : nx_dist(rng);
  for (int k = 0; k < dims.N; ++k) dims.nu[k] = nu_dist(rng);

  qp::OcpQp out = qp::OcpQp::zeros(dims);
  auto rand_spd = [&](int n, DenseMatrix& m) {
    DenseMatrix b(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) b(i, j) = gauss(rng) / std::sqrt(double(n));
    m.resize(n, n);
    linalg::gemm(1.0, b, linalg::Trans::No, b, linalg::Trans::Yes, 0.0, m);
    for (int i = 0; i < n; ++i) m(i, i) += 0.3;
  };

  std::vector<Vec> x_ref(dims.N + 1), u_ref(dims.N);
  for (int k = 0; k <= dims.N; ++k) {
    qp::OcpQpStage& st = out.stages[k];
    const int nx = dims.nx[k];
    const int nu = k < dims.N ? dims.nu[k] : 0;
    rand_spd(nx, st.Q);
    if (k == dims.N)
      for (int i = 0; i < nx; ++i) st.Q(i, i) += 0.2;
    for (double& v : st.q) v = gauss(rng);
    if (k < dims.N) {
      rand_spd(nu, st.R);
      for (int i = 0; i < nu; ++i)
        for (int j = 0; j < nx; ++j) st.S(i, j) = 0.1 * gauss(rng);
      // strict convexity with a real margin: lift the full stage Hessian
      // [[Q, S'], [S, R]] so its smallest eigenvalue is at least 0.2
      {
        DenseMatrix full(nx + nu, nx + nu);
        for (int i = 0; i < nx; ++i)
          for (int j = 0; j < nx; ++j) full(i, j) = st.Q(i, j);
        for (int i = 0; i < nu; ++i)
          for (int j = 0; j < nx; ++j) {
            full(nx + i, j) = st.S(i, j);
            full(j, nx + i) = st.S(i, j);
          }
        for (int i = 0; i < nu; ++i)
          for (int j = 0; j < nu; ++j) full(nx + i, nx + j) = st.R(i, j);
        const double dmin = linalg::syev_jacobi(full).eigenvalues.front();
        if (dmin < 0.2) {
          for (int i = 0; i < nx; ++i) st.Q(i, i) += 0.2 - dmin;
          for (int i = 0; i < nu; ++i) st.R(i, i) += 0.2 - dmin;
        }
      }
      for (double& v : st.r) v = gauss(rng);
      // dynamics normalized to roughly unit gain so long-horizon products
      // (and with them the condensed data) stay well scaled
      for (int i = 0; i < dims.nx[k + 1]; ++i)
        for (int j = 0; j < nx; ++j) st.A(i, j) = gauss(rng);
      const double a_scale = (0.5 + 0.55 * unit(rng)) / std::max(1e-8, linalg::norm_fro(st.A) /
                                                                           std::sqrt(double(nx)));
      for (int i = 0; i < dims.nx[k + 1]; ++i)
        for (int j = 0; j < nx; ++j) st.A(i, j) *= a_scale;
      for (int i = 0; i < dims.nx[k + 1]; ++i)
        for (int j = 0; j < nu; ++j) st.B(i, j) = 0.7 * gauss(rng);
      for (double& v : st.b) v = 0.3 * gauss(rng);
    }
    x_ref[k] = Vec(nx, 0.0);
    if (k == 0)
      for (double& v : x_ref[k]) v = 0.5 * gauss(rng);
  }
  for (int k = 0; k < dims.N; ++k) {
    u_ref[k] = Vec(dims.nu[k], 0.0);
    for (double& v : u_ref[k]) v = 0.5 * gauss(rng);
    x_ref[k + 1] = out.stages[k].b;
    linalg::gemv(1.0, out.stages[k].A, linalg::Trans::No, x_ref[k], 1.0, x_ref[k + 1]);
    linalg::gemv(1.0, out.stages[k].B, linalg::Trans::No, u_ref[k], 1.0, x_ref[k + 1]);
  }

  for (int k = 0; k <= dims.N; ++k) {
    qp::OcpQpStage& st = out.stages[k];
    const int nx = dims.nx[k];
    const int nu = k < dims.N ? dims.nu[k] : 0;
    const int n_rows = 1 + int(rng() % 3);
    std::vector<int> soft_rows;
    dims.ng[k] = n_rows;
    st.Gx.resize(n_rows, nx);
    st.Gu.resize(n_rows, nu);
    st.lg.assign(n_rows, -kInf);
    st.ug.assign(n_rows, kInf);
    for (int i = 0; i < n_rows; ++i) {
      const double kind = unit(rng);
      if (kind < 0.6) {
        // simple bound row
        if (nu > 0 && unit(rng) < 0.4)
          st.Gu(i, int(rng() % nu)) = 1.0;
        else
          st.Gx(i, int(rng() % nx)) = 1.0;
      } else {
        for (int j = 0; j < nx; ++j) st.Gx(i, j) = gauss(rng);
        for (int j = 0; j < nu; ++j) st.Gu(i, j) = gauss(rng);
      }
      double v_ref = 0.0;
      for (int j = 0; j < nx; ++j) v_ref += st.Gx(i, j) * x_ref[k][j];
      if (k < dims.N)
        for (int j = 0; j < nu; ++j) v_ref += st.Gu(i, j) * u_ref[k][j];
      const double side = unit(rng);
      const double lo_gap = 0.05 + 0.8 * unit(rng), up_gap = 0.05 + 0.8 * unit(rng);
      if (side < 0.3)
        st.lg[i] = v_ref - lo_gap;
      else if (side < 0.6)
        st.ug[i] = v_ref + up_gap;
      else {
        st.lg[i] = v_ref - lo_gap;
        st.ug[i] = v_ref + up_gap;
      }
      if (unit(rng) < 0.25) soft_rows.push_back(i);
    }
    const int ns = static_cast<int>(soft_rows.size());
    dims.ns[k] = ns;
    st.Js.resize(n_rows, ns);
    st.P_diag.assign(ns, 0.0);
    st.p_slack.assign(ns, 0.0);
    for (int j = 0; j < ns; ++j) {
      st.Js(soft_rows[j], j) = 1.0;
      st.P_diag[j] = 0.5 + 2.0 * unit(rng);
      st.p_slack[j] = 0.1 + unit(rng);
    }
  }
  out.dims = dims;
  out.validate();
  return out;
}

namespace {

double solution_primal_diff(const qp::QpSolution& a, const qp::QpSolution& b) {
  double m = 0.0;
  auto upd = [&](const Vec& x, const Vec& y) {
    for (size_t i = 0; i < x.size(); ++i) m = std::max(m, std::abs(x[i] - y[i]));
  };
  for (size_t k = 0; k < a.x.size(); ++k) upd(a.x[k], b.x[k]);
  for (size_t k = 0; k < a.u.size(); ++k) upd(a.u[k], b.u[k]);
  for (size_t k = 0; k < a.s.size(); ++k) upd(a.s[k], b.s[k]);
  return m;
}

// multipliers compared only where clearly active (magnitude above threshold
// in either run)
double solution_active_dual_diff(const qp::QpSolution& a, const qp::QpSolution& b,
                                 double act_tol = 1e-4) {
  double m = 0.0;
  auto upd = [&](const Vec& x, const Vec& y) {
    for (size_t i = 0; i < x.size(); ++i)
      if (std::abs(x[i]) > act_tol || std::abs(y[i]) > act_tol)
        m = std::max(m, std::abs(x[i] - y[i]));
  };
  for (size_t k = 0; k < a.lam_lo.size(); ++k) {
    upd(a.lam_lo[k], b.lam_lo[k]);
    upd(a.lam_up[k], b.lam_up[k]);
  }
  return m;
}

}  // namespace

namespace {

// Near-degenerate instances (a row active with a vanishing multiplier, or
// inactive with a vanishing margin) leave the primal ill-determined at the
// sqrt(comp) scale, which is not what the transform-equivalence study is
// about. Rows must be clearly decided at the solution.
bool well_separated(const qp::OcpQp& q, const qp::QpSolution& sol, double margin) {
  for (int k = 0; k <= q.dims.N; ++k) {
    const qp::OcpQpStage& st = q.stages[k];
    const int ng = q.dims.ng[k];
    Vec v(ng, 0.0);
    if (ng > 0) {
      linalg::gemv(1.0, st.Gx, linalg::Trans::No, sol.x[k], 0.0, v);
      if (k < q.dims.N && q.dims.nu[k] > 0)
        linalg::gemv(1.0, st.Gu, linalg::Trans::No, sol.u[k], 1.0, v);
    }
    for (int i = 0; i < ng; ++i) {
      double relax = 0.0;
      for (int j = 0; j < q.dims.ns[k]; ++j)
        if (st.Js(i, j) == 1.0) relax = sol.s[k][j];
      if (st.lg[i] > -qp::kInf &&
          std::max(sol.lam_lo[k][i], v[i] + relax - st.lg[i]) < margin)
        return false;
      if (st.ug[i] < qp::kInf &&
          std::max(sol.lam_up[k][i], st.ug[i] - v[i] + relax) < margin)
        return false;
    }
    for (int j = 0; j < q.dims.ns[k]; ++j)
      if (std::max(sol.lam_s[k][j], sol.s[k][j]) < margin) return false;
  }
  return true;
}

}  // namespace

QpEquivalenceResult run_qp_equivalence(int count, uint64_t seed) {
  std::mt19937_64 rng(seed);
  QpEquivalenceResult out;
  qp::IpmOptions opts;
  opts.tol_stat = opts.tol_eq = opts.tol_ineq = 1e-8;
  // weakly active rows get position slop ~ comp/lambda between routes, so
  // the pairwise agreement bound needs complementarity well below 1e-8
  opts.tol_comp = 1e-11;
  opts.max_iter = 100;
  opts.iterative_refinement = true;
  // a solve counts if the independently recomputed residuals meet the bound,
  // whatever the reported status (stalls at the conditioning floor included)
  const double quality_gate = 1e-7;

  for (int trial = 0; trial < count; ++trial) {
    qp::OcpQp ocp_qp = random_benchmark_qp(rng, 20, 8, 4);
    {
      auto [probe, probe_stats] = qp::solve_ocp_qp_ipm(ocp_qp, opts);
      int redraws = 0;
      while (!well_separated(ocp_qp, probe, 1e-3) && redraws++ < 50) {
        ocp_qp = random_benchmark_qp(rng, 20, 8, 4);
        std::tie(probe, probe_stats) = qp::solve_ocp_qp_ipm(ocp_qp, opts);
      }
    }
    ++out.n_instances;

    auto [structured, st1] = qp::solve_ocp_qp_ipm(ocp_qp, opts);
    double kkt = qp::kkt_residuals(ocp_qp, structured).max();
    if (kkt > quality_gate) out.all_solved = false;
    out.max_kkt = std::max(out.max_kkt, kkt);

    auto [dense, fdata] = qp::full_condense(ocp_qp);
    auto [dsol, st2] = qp::solve_dense_qp_ipm(dense, opts);
    qp::QpSolution via_dense = qp::expand(ocp_qp, fdata, dsol);
    if (via_dense.residuals.max() > quality_gate) out.all_solved = false;
    out.max_primal_diff =
        std::max(out.max_primal_diff, solution_primal_diff(structured, via_dense));
    out.max_dual_diff =
        std::max(out.max_dual_diff, solution_active_dual_diff(structured, via_dense));
    out.max_kkt = std::max(out.max_kkt, via_dense.residuals.max());

    for (int n2 : {1, 2, 5, ocp_qp.dims.N}) {
      if (n2 > ocp_qp.dims.N) continue;
      auto [pqp, pdata] = qp::partial_condense(ocp_qp, n2);
      auto [psol, st3] = qp::solve_ocp_qp_ipm(pqp, opts);
      qp::QpSolution via_partial = qp::partial_expand(ocp_qp, pdata, psol);
      if (via_partial.residuals.max() > quality_gate) out.all_solved = false;
      out.max_primal_diff =
          std::max(out.max_primal_diff, solution_primal_diff(structured, via_partial));
      out.max_dual_diff =
          std::max(out.max_dual_diff, solution_active_dual_diff(structured, via_partial));
      out.max_kkt = std::max(out.max_kkt, via_partial.residuals.max());
    }
  }
  return out;
}

IntegratorOrdersResult run_integrator_orders(const PendulumParams& params) {
  ExplicitModel pend = build_pendulum_model(params);
  ImplicitDaeModel pend_dae = ad::make_implicit(pend);
  const Vec x0{0.0, 2.6, 0.3, -0.2};
  const Vec u{2.0};
  const double t_end = 0.4;

  // Dormand-Prince reference at rtol 1e-12
  DopriOptions ref_opts;
  ref_opts.rtol = 1e-12;
  ref_opts.atol = 1e-14;
  OdeRhs rhs = [&pend, &u](double, const Vec& x, Vec& xdot) {
    ad::Bindings in;
    in[ad::Block::X] = x;
    in[ad::Block::U] = u;
    pend.f->eval(in, xdot);
  };
  const Vec x_ref = dopri5_integrate(rhs, x0, 0.0, t_end, ref_opts);

  auto run_erk = [&](double h) {
    sim::ErkIntegrator rk4(pend, sim::erk_rk4());
    sim::SimIn in;
    in.x0 = x0;
    in.u = u;
    in.t_interval = t_end;
    in.n_steps = static_cast<int>(std::lround(t_end / h));
    return rk4.simulate(in).x_next;
  };
  auto run_gl = [&](int stages, double h) {
    sim::IrkOptions o;
    o.stages = stages;
    o.newton_tol = 1e-14;
    o.newton_max_iter = 50;
    sim::IrkIntegrator irk(pend_dae, o);
    sim::SimIn in;
    in.x0 = x0;
    in.u = u;
    in.t_interval = t_end;
    in.n_steps = static_cast<int>(std::lround(t_end / h));
    return irk.simulate(in).x_next;
  };
  auto err_of = [&](const Vec& x) {
    double e = 0.0;
    for (size_t i = 0; i < x.size(); ++i) e = std::max(e, std::abs(x[i] - x_ref[i]));
    return e;
  };

  IntegratorOrdersResult out;
  const std::vector<double> hs{t_end / 4, t_end / 8, t_end / 16, t_end / 32, t_end / 64};
  const std::vector<double> hs3{t_end / 2, t_end / 3, t_end / 4, t_end / 6, t_end / 8};
  for (double h : hs) {
    out.err_rk4.emplace_back(h, err_of(run_erk(h)));
    out.err_gl2.emplace_back(h, err_of(run_gl(2, h)));
  }
  for (double h : hs3) out.err_gl3.emplace_back(h, err_of(run_gl(3, h)));

  out.slope_rk4 = sim::convergence_slope([&](double h) { return run_erk(h); }, x_ref, hs);
  out.slope_gl2 = sim::convergence_slope([&](double h) { return run_gl(2, h); }, x_ref, hs);
  out.slope_gl3 = sim::convergence_slope([&](double h) { return run_gl(3, h); }, x_ref, hs3);
  return out;
}

}  // namespace nmpc::bench
