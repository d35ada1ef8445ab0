#pragma once

#include <random>

#include "nmpc/bench/closed_loop.hpp"
#include "nmpc/bench/ocps.hpp"
#include "nmpc/qp/condensing.hpp"
#include "nmpc/qp/ipm.hpp"

namespace nmpc::bench {

// Case study 1: chain closed loop under the midpoint disturbance, one RTI per
// sample, optionally with the fully converged reference controller for RCSO.
struct ChainBenchConfig {
  ChainParams params;
  sqp::SqpOptions plan;
  int n_samples = 300;
  double disturbance_start = 30.0;
  double disturbance_duration = 1.0;
  Vec disturbance_u{-1.0, 1.0, 1.0};
  double plant_rtol = 1e-8;
  double plant_atol = 1e-10;
  bool with_oracle = false;
};

struct ChainBenchResult {
  ClosedLoopResult rti_run;
  ClosedLoopResult oracle_run;
  Vec x_ref;
  double dr_rti = 0.0;
  double dr_oracle = 0.0;
  double rcso = -1.0;
  double final_error = 0.0;
  TimingSummary rti_times;
};

ChainBenchResult run_chain_benchmark(const ChainBenchConfig& cfg);

// The fully converged reference plan: exact Hessian with projection
// regularization driven to 1e-10 stationarity, entered through a plain
// Gauss-Newton warm-up phase.
sqp::SqpOptions chain_oracle_plan();

// Case study 2: pendulum swing-up solved to convergence.
struct PendulumBenchResult {
  sqp::SqpStats stats;
  qp::KktResiduals final_residuals;
  bool converged = false;
};

PendulumBenchResult run_pendulum_benchmark(const PendulumParams& params,
                                           const sqp::SqpOptions& plan);

// Case study 3: engine boost tracking with per-sample reference updates.
struct EngineProfileStep {
  double boost = 1.4;
  double duration = 10.0;
};

struct EngineBenchConfig {
  EngineParams params;
  sqp::SqpOptions plan;
  std::vector<EngineProfileStep> profile{{1.4, 10.0}, {1.8, 10.0}, {2.05, 10.0}};
  int plant_substeps = 10;
};

struct EngineBenchResult {
  ClosedLoopResult run;
  double worst_bound_violation = 0.0;
  std::vector<double> step_tracking_rel_err;  // at the last sample of each step
  TimingSummary rti_times;
};

EngineBenchResult run_engine_benchmark(const EngineBenchConfig& cfg);

// QP solver equivalence: random strictly convex OCP QPs solved by the
// structured IPM, full condensing + dense IPM, and partial condensing.
struct QpEquivalenceResult {
  double max_primal_diff = 0.0;
  double max_dual_diff = 0.0;   // active-constraint multipliers
  double max_kkt = 0.0;         // independently recomputed residuals
  int n_instances = 0;
  bool all_solved = true;
};

qp::OcpQp random_benchmark_qp(std::mt19937_64& rng, int n_max, int nx_max, int nu_max);
QpEquivalenceResult run_qp_equivalence(int count, uint64_t seed);

// Integrator order study against a Dormand-Prince reference at rtol 1e-12.
struct IntegratorOrdersResult {
  double slope_rk4 = 0.0, slope_gl2 = 0.0, slope_gl3 = 0.0;
  std::vector<std::pair<double, double>> err_rk4, err_gl2, err_gl3;  // (h, error)
};

IntegratorOrdersResult run_integrator_orders(const PendulumParams& params);

}  // namespace nmpc::bench
