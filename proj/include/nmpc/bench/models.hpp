#pragma once

#include <array>
#include <numbers>

#include "nmpc/ad/model.hpp"

namespace nmpc::bench {

using ad::ExplicitModel;
using ad::ImplicitDaeModel;
using linalg::DenseMatrix;
using linalg::Vec;

// Chain of point masses connected by springs; first mass fixed at the origin,
// last mass velocity-controlled. State layout
// [p_2 .. p_{M-1}, p_M, v_2 .. v_{M-1}], n_x = 3 (2 (M - 2) + 1).
struct ChainParams {
  int masses = 5;               // M
  double mass = 0.1125;         // kg
  double spring_constant = 0.4; // N/m
  double rest_length = 0.1375;  // m
  std::array<double, 3> gravity{0.0, 0.0, -9.81};
  int horizon = 40;
  double dt = 0.2;
  std::array<double, 3> p_end_ref{7.5, 0.0, 0.0};

  int n_x() const { return 3 * (2 * (masses - 2) + 1); }
  int n_u() const { return 3; }
};

ExplicitModel build_chain_model(const ChainParams& p);

// Rest state with the free end pinned to p_end_ref, from a damped Newton
// solve of the stationarity system; residual of the ODE at the result is
// below 1e-10.
Vec chain_steady_state(const ChainParams& p);

// Equally spaced masses on the x axis between the fixed end and p_end_ref,
// all velocities zero.
Vec chain_horizontal_state(const ChainParams& p);

// Cart with an inverted pendulum; state (p, theta, v, omega), control is the
// horizontal force on the cart. The physical constants are tuning defaults,
// not benchmark-pinned values.
struct PendulumParams {
  double cart_mass = 1.0;   // kg
  double pole_mass = 0.1;   // kg
  double length = 0.8;      // m
  double gravity = 9.81;    // m/s^2
  std::array<double, 4> weight_q{1000.0, 1000.0, 0.01, 0.01};
  double weight_r = 0.01;
  int horizon = 100;
  double dt = 0.01;
  double force_limit = 80.0;
  std::array<double, 4> x0{0.0, std::numbers::pi, 0.0, 0.0};
};

ExplicitModel build_pendulum_model(const PendulumParams& p);

// Two-stage turbocharged gasoline engine, semi-explicit index-1 DAE.
// Differential states (Pi_c_lp, Pi_c_hp, u_wg_lp, u_wg_hp); the wastegate
// signals are states driven by their rates, which are the controls.
// Algebraic states (Pi_t_lp, Pi_t_hp).
struct EngineParams {
  std::array<double, 8> c{25.3, 0.0034, 7700.0, 0.6, 43.6, 0.0092, 3600.0, 0.9};
  // gamma_i(v) = b1 + b2 * (1 + exp((-v + b3)/b4))^-1, one column per i
  std::array<double, 4> gamma1{0.0, 1.0, 1.49, 0.0377};
  std::array<double, 4> gamma2{67.5, 4.712, 1.0, -1.0};
  double engine_speed = 2000.0;  // 1/min
  int horizon = 20;
  double ts = 0.05;
  std::array<double, 2> pi_c_lp_bounds{0.5, 1.757};
  std::array<double, 2> pi_c_hp_bounds{0.5, 2.125};
  std::array<double, 2> wastegate_bounds{0.0, 100.0};
  double rate_bound = 500.0;  // |d| bound on the wastegate rates, %/s
  // Weights for r = [y_p; x; u] and r_N = [y_p; x].
  std::array<double, 7> weight{1e3, 1e-3, 1e-3, 1e-3, 1e-3, 1e-4, 1e-4};
  std::array<double, 5> weight_terminal{1e3, 1e-3, 1e-3, 1e-3, 1e-3};
  std::array<double, 4> x_ref{1.14, 1.54, 50.0, 50.0};

  int n_x() const { return 4; }
  int n_z() const { return 2; }
  int n_u() const { return 2; }
};

ImplicitDaeModel build_engine_model(const EngineParams& p);

// Steady state of the engine at fixed wastegate positions: solves the four
// pressure-ratio equations for (Pi_c, Pi_t). Returns x (with the wastegates
// appended) and z.
struct EngineSteadyState {
  Vec x;
  Vec z;
};
EngineSteadyState engine_steady_state(const EngineParams& p, double u_wg_lp, double u_wg_hp);

// Damped Newton on r(x) = 0 for a graph-backed residual with square Jacobian
// in Block::X. Halves the step on residual increase or domain errors.
double damped_newton(const ad::StageFunction& residual, Vec& x, double tol, int max_iter);

// Solves the algebraic rows of an index-1 DAE for z at fixed (x, u),
// starting from z_guess.
Vec dae_consistent_z(const ImplicitDaeModel& model, const Vec& x, const Vec& u, Vec z_guess,
                     double tol = 1e-12);

}  // namespace nmpc::bench
