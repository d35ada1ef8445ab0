#pragma once

#include <functional>

#include "nmpc/ad/model.hpp"

namespace nmpc::bench {

using linalg::Vec;

using OdeRhs = std::function<void(double t, const Vec& x, Vec& xdot)>;

struct DopriOptions {
  double rtol = 1e-8;
  double atol = 1e-10;
  double h_init = 1e-3;
  double h_min = 1e-14;
  long max_steps = 10'000'000;
};

// Embedded Dormand-Prince RK5(4) with PI step-size control. Integrates the
// right-hand side over [t0, t1] and returns the end state; steps are clipped
// to land exactly on t1.
Vec dopri5_integrate(const OdeRhs& rhs, Vec x0, double t0, double t1, const DopriOptions& opts);

// Trajectory sampled at the requested times (ascending, first >= t0).
std::vector<Vec> dopri5_trajectory(const OdeRhs& rhs, Vec x0, double t0,
                                   std::span<const double> times, const DopriOptions& opts);

// Convenience wrapper for an explicit model with a (possibly time-varying)
// control signal.
std::vector<Vec> dormand_prince_simulate(const ad::ExplicitModel& model, Vec x0,
                                         const std::function<Vec(double)>& control,
                                         std::span<const double> times,
                                         const DopriOptions& opts);

// Reduces a semi-explicit index-1 DAE (rows [xdot - rhs(x,z,u); g(x,z,u)])
// to an ODE by solving the algebraic rows pointwise (Newton on z), for use
// as a high-accuracy reference on DAE plants.
OdeRhs dae_reduced_rhs(const ad::ImplicitDaeModel& model, const std::function<Vec(double)>& control,
                       Vec z_guess);

}  // namespace nmpc::bench
