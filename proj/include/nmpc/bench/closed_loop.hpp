#pragma once

#include <functional>
#include <iosfwd>

#include "nmpc/bench/sim_plant.hpp"
#include "nmpc/sqp/solver.hpp"

namespace nmpc::bench {

struct Disturbance {
  double t_start = 0.0;
  double duration = 0.0;
  Vec u_override;
};

struct ClosedLoopConfig {
  int n_samples = 300;
  double dt = 0.2;                  // sampling period
  double plant_rtol = 1e-8;
  double plant_atol = 1e-10;
  std::vector<Disturbance> disturbances;
  uint64_t seed = 0;
  Vec x_ref_init;                   // initial-iterate interpolation target
};

struct ClosedLoopResult {
  std::vector<double> t;            // n_samples + 1
  std::vector<Vec> x;               // plant states at the sample times
  std::vector<Vec> u;               // applied controls, n_samples
  std::vector<Vec> u_solver;        // controller outputs, unused when overridden
  std::vector<double> solve_time;   // controller wall time per sample
  std::vector<double> kkt_res;      // controller residual per sample
  std::vector<int> qp_iterations;
  std::vector<char> disturbed;
  std::vector<char> failed;         // solver failure; previous control reused
  int n_failures = 0;
};

// One plant propagation over a sampling period: x_next = plant(t, x, u).
using PlantStep = std::function<Vec(double, const Vec&, const Vec&)>;

PlantStep make_dopri_plant(const ad::ExplicitModel& model, double dt, double rtol, double atol);

// DAE plant: Gauss-Legendre s=3 at fine substeps with algebraic warm start.
PlantStep make_irk_plant(const ad::ImplicitDaeModel& model, double dt, int substeps, Vec z0);

// Per-sample controller: maps the measured state to the first control.
struct ControllerOutput {
  Vec u0;
  bool failed = false;
  double kkt_res = 0.0;
  int qp_iterations = 0;
};
using Controller = std::function<ControllerOutput(int sample, const Vec& x)>;

// One RTI per sample, warm-started from the previous solution.
Controller make_rti_controller(sqp::SqpSolver& solver, const Vec& x_init, const Vec& x_ref_init);

// Fully converged SQP per sample; when `warmup` is set, that solver runs
// first from the shared iterate (used to put a plain-Newton polish phase
// inside the exact-Hessian oracle's convergence basin).
Controller make_converged_controller(sqp::SqpSolver& solver, const Vec& x_init,
                                     const Vec& x_ref_init, sqp::SqpSolver* warmup = nullptr);

// Sample-and-hold loop: controller -> apply u_0 (or the scheduled override)
// -> propagate the plant one period -> repeat. On a solver failure the
// previous control is held and the sample is flagged.
ClosedLoopResult simulate_closed_loop(const Controller& controller, const Vec& x_init,
                                      const ClosedLoopConfig& cfg, const PlantStep& plant);

// DR_n = sum_i [x_i - x_ref; u_i - u_ref]' blkdiag(Q, R) [...] over samples.
double metric_dr(const ClosedLoopResult& run, const Vec& q_diag, const Vec& r_diag,
                 const Vec& x_ref, const Vec& u_ref, int n = -1);

// |(DR - DR_oracle) / DR_oracle|
double metric_rcso(double dr_candidate, double dr_oracle);

// CSV: t, x[0..], u[0..], solve_time_s, kkt_res, disturbed
void write_trajectory_csv(std::ostream& os, const ClosedLoopResult& run);

struct TimingSummary {
  double median = 0.0, min = 0.0, max = 0.0;
};
TimingSummary summarize_times(std::span<const double> times);

}  // namespace nmpc::bench
