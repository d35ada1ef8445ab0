#include "nmpc/bench/sim_plant.hpp"

#include <cmath>

#include "nmpc/bench/models.hpp"
#include "nmpc/linalg/kernels.hpp"

namespace nmpc::bench {

namespace {

// Dormand-Prince RK5(4)7M coefficients
constexpr double kC[7] = {0.0, 1.0 / 5, 3.0 / 10, 4.0 / 5, 8.0 / 9, 1.0, 1.0};
constexpr double kA[7][6] = {
    {},
    {1.0 / 5},
    {3.0 / 40, 9.0 / 40},
    {44.0 / 45, -56.0 / 15, 32.0 / 9},
    {19372.0 / 6561, -25360.0 / 2187, 64448.0 / 6561, -212.0 / 729},
    {9017.0 / 3168, -355.0 / 33, 46732.0 / 5247, 49.0 / 176, -5103.0 / 18656},
    {35.0 / 384, 0.0, 500.0 / 1113, 125.0 / 192, -2187.0 / 6784, 11.0 / 84},
};
constexpr double kB5[7] = {35.0 / 384,      0.0,  500.0 / 1113, 125.0 / 192,
                           -2187.0 / 6784, 11.0 / 84, 0.0};
constexpr double kB4[7] = {5179.0 / 57600,    0.0,         7571.0 / 16695, 393.0 / 640,
                           -92097.0 / 339200, 187.0 / 2100, 1.0 / 40};

}  // namespace

Vec dopri5_integrate(const OdeRhs& rhs, Vec x0, double t0, double t1, const DopriOptions& opts) {
  if (opts.rtol <= 0.0 || opts.atol <= 0.0)
    throw InvalidInputError("dopri: tolerances must be positive");
  const int n = static_cast<int>(x0.size());
  Vec x = std::move(x0);
  double t = t0;
  double h = std::min(opts.h_init, t1 - t0);
  double err_prev = 1.0;
  std::array<Vec, 7> k;
  for (auto& v : k) v.assign(n, 0.0);
  Vec x_stage(n), x5(n), x4(n);

  long steps = 0;
  while (t < t1 - 1e-14 * std::max(1.0, std::abs(t1))) {
    if (++steps > opts.max_steps)
      throw StiffnessSuspectedError("dopri: step budget exhausted");
    h = std::min(h, t1 - t);
    if (h < opts.h_min) throw StiffnessSuspectedError("dopri: step size underflow");

    rhs(t, x, k[0]);
    for (int i = 1; i < 7; ++i) {
      x_stage = x;
      for (int j = 0; j < i; ++j)
        if (kA[i][j] != 0.0) linalg::axpy(h * kA[i][j], k[j], x_stage);
      rhs(t + kC[i] * h, x_stage, k[i]);
    }
    x5 = x;
    x4 = x;
    for (int i = 0; i < 7; ++i) {
      if (kB5[i] != 0.0) linalg::axpy(h * kB5[i], k[i], x5);
      if (kB4[i] != 0.0) linalg::axpy(h * kB4[i], k[i], x4);
    }
    double err = 0.0;
    for (int i = 0; i < n; ++i) {
      const double scale = opts.atol + opts.rtol * std::max(std::abs(x[i]), std::abs(x5[i]));
      const double e = (x5[i] - x4[i]) / scale;
      err += e * e;
    }
    err = std::sqrt(err / n);

    if (err <= 1.0) {
      t += h;
      x = x5;
      // PI controller (orders 5/4)
      const double fac =
          0.9 * std::pow(std::max(err, 1e-10), -0.7 / 5.0) * std::pow(err_prev, 0.4 / 5.0);
      h *= std::min(5.0, std::max(0.2, fac));
      err_prev = std::max(err, 1e-10);
    } else {
      h *= std::max(0.2, 0.9 * std::pow(err, -1.0 / 5.0));
    }
  }
  return x;
}

std::vector<Vec> dopri5_trajectory(const OdeRhs& rhs, Vec x0, double t0,
                                   std::span<const double> times, const DopriOptions& opts) {
  std::vector<Vec> out;
  out.reserve(times.size());
  Vec x = std::move(x0);
  double t = t0;
  for (double target : times) {
    if (target < t - 1e-12) throw InvalidInputError("dopri: sample times must be ascending");
    if (target > t) x = dopri5_integrate(rhs, std::move(x), t, target, opts);
    t = target;
    out.push_back(x);
  }
  return out;
}

std::vector<Vec> dormand_prince_simulate(const ad::ExplicitModel& model, Vec x0,
                                         const std::function<Vec(double)>& control,
                                         std::span<const double> times, const DopriOptions& opts) {
  OdeRhs rhs = [&model, &control](double t, const Vec& x, Vec& xdot) {
    ad::Bindings in;
    const Vec u = control(t);
    in[ad::Block::X] = x;
    in[ad::Block::U] = u;
    model.f->eval(in, xdot);
  };
  return dopri5_trajectory(rhs, std::move(x0), 0.0, times, opts);
}

OdeRhs dae_reduced_rhs(const ad::ImplicitDaeModel& model, const std::function<Vec(double)>& control,
                       Vec z_guess) {
  // shared_ptr state so the lambda can warm-start z across calls
  auto z_state = std::make_shared<Vec>(std::move(z_guess));
  auto model_copy = model;
  return [model_copy, control, z_state](double t, const Vec& x, Vec& xdot) {
    const Vec u = control(t);
    *z_state = dae_consistent_z(model_copy, x, u, *z_state);
    // with z fixed, the differential rows give xdot:
    // f layout [xdot - rhs(x,z,u); alg] means rhs = -f(0, x, z, u) in rows 0..nx
    const int nx = model_copy.n_x;
    Vec zero_xdot(nx, 0.0), res(nx + model_copy.n_z);
    ad::Bindings in;
    in[ad::Block::XDot] = zero_xdot;
    in[ad::Block::X] = x;
    in[ad::Block::Z] = *z_state;
    in[ad::Block::U] = u;
    model_copy.f->eval(in, res);
    xdot.resize(nx);
    for (int i = 0; i < nx; ++i) xdot[i] = -res[i];
  };
}

}  // namespace nmpc::bench
