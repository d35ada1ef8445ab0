#pragma once

#include <functional>
#include <vector>

#include "nmpc/ad/model.hpp"
#include "nmpc/sim/butcher.hpp"

namespace nmpc::sim {

using ad::ExplicitModel;
using ad::ImplicitDaeModel;

struct SimIn {
  Vec x0;
  Vec u;               // piecewise constant over the interval
  double t_interval = 0.0;
  int n_steps = 1;
  Vec seed;            // adjoint/Hessian weight pi, length n_x (optional)
  Vec z_init;          // algebraic warm start (IRK, optional)
  bool want_forward = false;
  bool want_adjoint = false;
  bool want_hessian = false;
};

struct SimTimings {
  double total = 0.0;
  double model = 0.0;          // model evaluations and derivative sweeps
  double linear_algebra = 0.0;
};

struct SimOut {
  Vec x_next;
  Vec z;           // algebraic value at the interval start (DAE only)
  DenseMatrix sx;  // d x_next / d x0
  DenseMatrix su;  // d x_next / d u
  Vec adjoint;     // pi^T [sx su], computed by reverse accumulation
  DenseMatrix hess;  // sum_i pi_i * d2 x_next_i / d (x0,u)^2, symmetric
  SimTimings timings;
};

// Explicit Runge-Kutta integrator for explicit ODE models. Forward
// sensitivities differentiate the scheme itself; the adjoint runs a reverse
// accumulation over the stored stage data; second-order output contracts the
// stage Hessians with the forward sensitivities (forward-over-adjoint).
class ErkIntegrator {
 public:
  ErkIntegrator(ExplicitModel model, ButcherTableau tableau, int default_n_steps = 1);

  SimOut simulate(const SimIn& in) const;

  const ExplicitModel& model() const { return model_; }
  const ButcherTableau& tableau() const { return tableau_; }

 private:
  ExplicitModel model_;
  ButcherTableau tableau_;
  int default_n_steps_;
};

struct IrkOptions {
  int stages = 3;                  // Gauss-Legendre, in {1, 2, 3}
  int newton_max_iter = 20;
  double newton_tol = 1e-12;       // on the stage-residual inf-norm
  bool refactor_every_iter = true; // false: freeze the Jacobian after iteration 1
  bool extrapolate_z_to_start = false;
};

// Gauss-Legendre implicit Runge-Kutta for implicit ODE / index-1 DAE models.
// Stage equations are solved by a damped Newton iteration; sensitivities come
// from the implicit function theorem at the converged stage values.
class IrkIntegrator {
 public:
  IrkIntegrator(ImplicitDaeModel model, IrkOptions opts, int default_n_steps = 1);

  SimOut simulate(const SimIn& in) const;

  const ImplicitDaeModel& model() const { return model_; }
  const IrkOptions& options() const { return opts_; }

 private:
  ImplicitDaeModel model_;
  IrkOptions opts_;
  ButcherTableau tableau_;
  int default_n_steps_;
};

// Least-squares slope of log(error) versus log(h). `end_state` maps a step
// size to the integrator end state; needs at least 4 step sizes.
double convergence_slope(const std::function<Vec(double)>& end_state, const Vec& reference,
                         std::span<const double> h_list);

}  // namespace nmpc::sim
