#include "nmpc/bench/closed_loop.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include "nmpc/common/timing.hpp"
#include "nmpc/sim/integrator.hpp"

namespace nmpc::bench {

PlantStep make_dopri_plant(const ad::ExplicitModel& model, double dt, double rtol, double atol) {
  DopriOptions opts;
  opts.rtol = rtol;
  opts.atol = atol;
  opts.h_init = dt / 16;
  auto model_copy = model;
  return [model_copy, dt, opts](double t, const Vec& x, const Vec& u) {
    OdeRhs rhs = [&model_copy, &u](double, const Vec& xs, Vec& xdot) {
      ad::Bindings in;
      in[ad::Block::X] = xs;
      in[ad::Block::U] = u;
      model_copy.f->eval(in, xdot);
    };
    return dopri5_integrate(rhs, x, t, t + dt, opts);
  };
}

PlantStep make_irk_plant(const ad::ImplicitDaeModel& model, double dt, int substeps, Vec z0) {
  auto integ = std::make_shared<sim::IrkIntegrator>(model, [] {
    sim::IrkOptions o;
    o.stages = 3;
    o.newton_tol = 1e-12;
    o.newton_max_iter = 50;
    return o;
  }());
  auto z_state = std::make_shared<Vec>(std::move(z0));
  return [integ, z_state, dt, substeps](double, const Vec& x, const Vec& u) {
    sim::SimIn in;
    in.x0 = x;
    in.u = u;
    in.t_interval = dt;
    in.n_steps = substeps;
    in.z_init = *z_state;
    sim::SimOut out = integ->simulate(in);
    if (!out.z.empty()) *z_state = out.z;
    return out.x_next;
  };
}

Controller make_rti_controller(sqp::SqpSolver& solver, const Vec& x_init, const Vec& x_ref_init) {
  auto iterate = std::make_shared<sqp::SqpIterate>(
      sqp::interpolated_iterate(solver.nlp(), x_init, x_ref_init.empty() ? x_init : x_ref_init));
  return [&solver, iterate](int, const Vec& x) {
    ControllerOutput out;
    try {
      auto [next, st] = solver.rti_step(x, std::move(*iterate));
      *iterate = std::move(next);
      out.failed = st.status == sqp::SqpStatus::QpFailure;
      out.kkt_res = st.history.back().residuals.max();
      out.qp_iterations = st.history.back().qp_iterations;
    } catch (const Error&) {
      out.failed = true;
    }
    out.u0 = iterate->u[0];
    return out;
  };
}

Controller make_converged_controller(sqp::SqpSolver& solver, const Vec& x_init,
                                     const Vec& x_ref_init, sqp::SqpSolver* warmup) {
  auto iterate = std::make_shared<sqp::SqpIterate>(
      sqp::interpolated_iterate(solver.nlp(), x_init, x_ref_init.empty() ? x_init : x_ref_init));
  return [&solver, warmup, iterate](int, const Vec& x) {
    ControllerOutput out;
    try {
      if (warmup) {
        auto [next, st] = warmup->solve(x, std::move(*iterate));
        *iterate = std::move(next);
      }
      auto [next, st] = solver.solve(x, std::move(*iterate));
      *iterate = std::move(next);
      out.failed = st.status == sqp::SqpStatus::QpFailure;
      out.kkt_res = st.history.back().residuals.max();
      int qp_it = 0;
      for (const auto& rec : st.history) qp_it += rec.qp_iterations;
      out.qp_iterations = qp_it;
    } catch (const Error&) {
      out.failed = true;
    }
    out.u0 = iterate->u[0];
    return out;
  };
}

ClosedLoopResult simulate_closed_loop(const Controller& controller, const Vec& x_init,
                                      const ClosedLoopConfig& cfg, const PlantStep& plant) {
  ClosedLoopResult run;
  run.t.reserve(cfg.n_samples + 1);
  run.x.reserve(cfg.n_samples + 1);
  run.u.reserve(cfg.n_samples);

  Vec x = x_init;
  run.t.push_back(0.0);
  run.x.push_back(x);
  Vec u_prev;

  for (int n = 0; n < cfg.n_samples; ++n) {
    const double t_now = n * cfg.dt;

    const double t0 = now_seconds();
    ControllerOutput ctrl = controller(n, x);
    const double solve_time = now_seconds() - t0;
    if (u_prev.empty()) u_prev.assign(ctrl.u0.size(), 0.0);

    Vec u_apply = ctrl.failed ? u_prev : ctrl.u0;
    bool disturbed = false;
    for (const Disturbance& d : cfg.disturbances) {
      if (t_now >= d.t_start && t_now < d.t_start + d.duration) {
        u_apply = d.u_override;
        disturbed = true;
      }
    }

    x = plant(t_now, x, u_apply);

    run.u.push_back(u_apply);
    run.u_solver.push_back(ctrl.u0);
    run.t.push_back(t_now + cfg.dt);
    run.x.push_back(x);
    run.solve_time.push_back(solve_time);
    run.kkt_res.push_back(ctrl.kkt_res);
    run.qp_iterations.push_back(ctrl.qp_iterations);
    run.disturbed.push_back(disturbed ? 1 : 0);
    run.failed.push_back(ctrl.failed ? 1 : 0);
    if (ctrl.failed)
      ++run.n_failures;
    else
      u_prev = ctrl.u0;
  }
  return run;
}

double metric_dr(const ClosedLoopResult& run, const Vec& q_diag, const Vec& r_diag,
                 const Vec& x_ref, const Vec& u_ref, int n) {
  const int n_max = static_cast<int>(run.x.size()) - 1;
  if (n < 0 || n > n_max) n = n_max;
  double acc = 0.0;
  for (int i = 0; i <= n; ++i) {
    for (size_t j = 0; j < q_diag.size(); ++j) {
      const double e = run.x[i][j] - x_ref[j];
      acc += q_diag[j] * e * e;
    }
    if (i < static_cast<int>(run.u.size())) {
      for (size_t j = 0; j < r_diag.size(); ++j) {
        const double e = run.u[i][j] - u_ref[j];
        acc += r_diag[j] * e * e;
      }
    }
  }
  return acc;
}

double metric_rcso(double dr_candidate, double dr_oracle) {
  if (dr_oracle == 0.0) throw InvalidInputError("rcso: oracle DR is zero");
  return std::abs((dr_candidate - dr_oracle) / dr_oracle);
}

void write_trajectory_csv(std::ostream& os, const ClosedLoopResult& run) {
  const size_t nx = run.x.empty() ? 0 : run.x[0].size();
  const size_t nu = run.u.empty() ? 0 : run.u[0].size();
  os << "t";
  for (size_t i = 0; i < nx; ++i) os << ",x" << i;
  for (size_t i = 0; i < nu; ++i) os << ",u" << i;
  os << ",solve_time_s,kkt_res,disturbed\n";
  char buf[64];
  for (size_t k = 0; k < run.x.size(); ++k) {
    snprintf(buf, sizeof buf, "%.17g", run.t[k]);
    os << buf;
    for (size_t i = 0; i < nx; ++i) {
      snprintf(buf, sizeof buf, ",%.17g", run.x[k][i]);
      os << buf;
    }
    const bool has_u = k < run.u.size();
    for (size_t i = 0; i < nu; ++i) {
      snprintf(buf, sizeof buf, ",%.17g", has_u ? run.u[k][i] : 0.0);
      os << buf;
    }
    if (has_u) {
      snprintf(buf, sizeof buf, ",%.9g,%.9g,%d", run.solve_time[k], run.kkt_res[k],
               int(run.disturbed[k]));
      os << buf;
    } else {
      os << ",0,0,0";
    }
    os << '\n';
  }
}

TimingSummary summarize_times(std::span<const double> times) {
  TimingSummary s;
  if (times.empty()) return s;
  std::vector<double> sorted(times.begin(), times.end());
  std::sort(sorted.begin(), sorted.end());
  s.min = sorted.front();
  s.max = sorted.back();
  const size_t n = sorted.size();
  s.median = n % 2 == 1 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  return s;
}

}  // namespace nmpc::bench
