#include "nmpc/bench/ocps.hpp"

namespace nmpc::bench {

using ad::Block;
using ad::Expr;
using ad::GraphBuilder;
using ad::GraphFunction;
using sqp::IntegratorConfig;
using sqp::LinearLsCost;
using sqp::NonlinearLsCost;
using sqp::OcpNlp;
using sqp::StageConstraints;
using sqp::StageCost;
using sqp::StageDynamics;

namespace {

// || [x; u] - [x_ref; u_ref] ||^2_blkdiag(qd, rd)
StageCost tracking_cost(const Vec& q_diag, const Vec& r_diag, const Vec& x_ref, const Vec& u_ref) {
  const int nx = static_cast<int>(q_diag.size());
  const int nu = static_cast<int>(r_diag.size());
  LinearLsCost ls;
  ls.vx.resize(nx + nu, nx);
  ls.vu.resize(nx + nu, nu);
  for (int i = 0; i < nx; ++i) ls.vx(i, i) = 1.0;
  for (int i = 0; i < nu; ++i) ls.vu(nx + i, i) = 1.0;
  ls.y_ref.assign(nx + nu, 0.0);
  for (int i = 0; i < nx; ++i) ls.y_ref[i] = x_ref[i];
  for (int i = 0; i < nu; ++i) ls.y_ref[nx + i] = u_ref[i];
  ls.w.resize(nx + nu, nx + nu);
  for (int i = 0; i < nx; ++i) ls.w(i, i) = q_diag[i];
  for (int i = 0; i < nu; ++i) ls.w(nx + i, nx + i) = r_diag[i];
  return StageCost{std::move(ls), 1.0};
}

StageCost terminal_cost(const Vec& p_diag, const Vec& x_ref) {
  const int nx = static_cast<int>(p_diag.size());
  LinearLsCost ls;
  ls.vx = linalg::DenseMatrix::identity(nx);
  ls.vu.resize(nx, 0);
  ls.y_ref = x_ref;
  ls.w.resize(nx, nx);
  for (int i = 0; i < nx; ++i) ls.w(i, i) = p_diag[i];
  return StageCost{std::move(ls), 1.0};
}

}  // namespace

ChainOcp build_chain_ocp(const ChainParams& prm) {
  ChainOcp out;
  out.model = build_chain_model(prm);
  out.x_ref = chain_steady_state(prm);
  const int nx = prm.n_x();
  const int m_free = prm.masses - 2;

  out.q_diag.assign(nx, 0.0);
  for (int c = 0; c < 3; ++c) out.q_diag[3 * m_free + c] = 2.5;          // free-end position
  for (int i = 3 * (m_free + 1); i < nx; ++i) out.q_diag[i] = 25.0;      // velocities
  out.r_diag.assign(3, 0.1);
  out.p_diag.assign(nx, 0.0);
  for (int c = 0; c < 3; ++c) out.p_diag[3 * m_free + c] = 10.0;

  OcpNlp nlp;
  nlp.dims.N = prm.horizon;
  nlp.dims.nx.assign(prm.horizon + 1, nx);
  nlp.dims.nu.assign(prm.horizon, 3);
  nlp.dims.nz.assign(prm.horizon, 0);
  nlp.dynamics.resize(prm.horizon);
  for (int k = 0; k < prm.horizon; ++k) {
    StageDynamics& d = nlp.dynamics[k];
    d.explicit_model = out.model;
    d.config.kind = IntegratorConfig::Kind::Erk;
    d.config.tableau = sim::erk_rk4();
    d.config.n_steps = 1;
    d.config.t_interval = prm.dt;
  }
  const Vec u_ref(3, 0.0);
  nlp.cost.resize(prm.horizon + 1);
  for (int k = 0; k < prm.horizon; ++k)
    nlp.cost[k] = tracking_cost(out.q_diag, out.r_diag, out.x_ref, u_ref);
  nlp.cost[prm.horizon] = terminal_cost(out.p_diag, out.x_ref);

  nlp.constraints.resize(prm.horizon + 1);
  for (int k = 0; k < prm.horizon; ++k) {
    StageConstraints& c = nlp.constraints[k];
    c.bu.index = {0, 1, 2};
    c.bu.lb.assign(3, -1.0);
    c.bu.ub.assign(3, 1.0);
  }
  out.nlp = std::move(nlp);
  out.nlp.validate();
  return out;
}

PendulumOcp build_pendulum_ocp(const PendulumParams& prm) {
  PendulumOcp out;
  out.model = build_pendulum_model(prm);
  out.q_diag.assign(prm.weight_q.begin(), prm.weight_q.end());
  out.r_weight = prm.weight_r;

  OcpNlp nlp;
  nlp.dims.N = prm.horizon;
  nlp.dims.nx.assign(prm.horizon + 1, 4);
  nlp.dims.nu.assign(prm.horizon, 1);
  nlp.dims.nz.assign(prm.horizon, 0);
  nlp.dynamics.resize(prm.horizon);
  for (int k = 0; k < prm.horizon; ++k) {
    StageDynamics& d = nlp.dynamics[k];
    d.explicit_model = out.model;
    d.config.kind = IntegratorConfig::Kind::Erk;
    d.config.tableau = sim::erk_rk4();
    d.config.n_steps = 1;
    d.config.t_interval = prm.dt;
  }
  const Vec x_ref(4, 0.0), u_ref(1, 0.0);
  nlp.cost.resize(prm.horizon + 1);
  for (int k = 0; k < prm.horizon; ++k)
    nlp.cost[k] = tracking_cost(out.q_diag, Vec{prm.weight_r}, x_ref, u_ref);
  nlp.cost[prm.horizon] = terminal_cost(out.q_diag, x_ref);

  nlp.constraints.resize(prm.horizon + 1);
  for (int k = 0; k < prm.horizon; ++k) {
    StageConstraints& c = nlp.constraints[k];
    c.bu.index = {0};
    c.bu.lb = {-prm.force_limit};
    c.bu.ub = {prm.force_limit};
  }
  out.nlp = std::move(nlp);
  out.nlp.validate();
  return out;
}

namespace {

// r(x, u) = [Pi_c_lp * Pi_c_hp; x; u]
std::shared_ptr<GraphFunction> engine_residual(bool terminal) {
  GraphBuilder b;
  auto x = b.input(Block::X, 4);
  std::vector<Expr> outs;
  outs.push_back(x[0] * x[1]);
  for (int i = 0; i < 4; ++i) outs.push_back(x[i]);
  if (!terminal) {
    auto u = b.input(Block::U, 2);
    for (int i = 0; i < 2; ++i) outs.push_back(u[i]);
  }
  b.set_outputs(outs);
  return std::make_shared<GraphFunction>(b.release());
}

Vec engine_y_ref(const EngineParams& prm, double boost_ref, bool terminal) {
  Vec y;
  y.push_back(boost_ref);
  for (double v : prm.x_ref) y.push_back(v);
  if (!terminal) {
    y.push_back(0.0);
    y.push_back(0.0);
  }
  return y;
}

}  // namespace

EngineOcp build_engine_ocp(const EngineParams& prm, double boost_ref) {
  EngineOcp out;
  out.model = build_engine_model(prm);
  const int N = prm.horizon;

  OcpNlp nlp;
  nlp.dims.N = N;
  nlp.dims.nx.assign(N + 1, 4);
  nlp.dims.nu.assign(N, 2);
  nlp.dims.nz.assign(N, 2);
  nlp.dynamics.resize(N);
  for (int k = 0; k < N; ++k) {
    StageDynamics& d = nlp.dynamics[k];
    d.implicit_model = out.model;
    d.config.kind = IntegratorConfig::Kind::Irk;
    d.config.irk.stages = 3;
    d.config.irk.newton_tol = 1e-10;
    d.config.irk.newton_max_iter = 30;
    d.config.n_steps = 1;
    d.config.t_interval = prm.ts;
  }

  nlp.cost.resize(N + 1);
  for (int k = 0; k <= N; ++k) {
    const bool terminal = k == N;
    NonlinearLsCost ls;
    ls.r = engine_residual(terminal);
    ls.y_ref = engine_y_ref(prm, boost_ref, terminal);
    const auto& wd = terminal ? std::span<const double>(prm.weight_terminal)
                              : std::span<const double>(prm.weight);
    ls.w.resize(static_cast<int>(wd.size()), static_cast<int>(wd.size()));
    for (size_t i = 0; i < wd.size(); ++i) ls.w(static_cast<int>(i), static_cast<int>(i)) = wd[i];
    nlp.cost[k] = StageCost{std::move(ls), 1.0};
  }

  nlp.constraints.resize(N + 1);
  for (int k = 1; k <= N; ++k) {
    StageConstraints& c = nlp.constraints[k];
    c.bx.index = {0, 1, 2, 3};
    c.bx.lb = {prm.pi_c_lp_bounds[0], prm.pi_c_hp_bounds[0], prm.wastegate_bounds[0],
               prm.wastegate_bounds[0]};
    c.bx.ub = {prm.pi_c_lp_bounds[1], prm.pi_c_hp_bounds[1], prm.wastegate_bounds[1],
               prm.wastegate_bounds[1]};
  }
  for (int k = 0; k < N; ++k) {
    StageConstraints& c = nlp.constraints[k];
    c.bu.index = {0, 1};
    c.bu.lb.assign(2, -prm.rate_bound);
    c.bu.ub.assign(2, prm.rate_bound);
  }
  out.nlp = std::move(nlp);
  out.nlp.validate();
  return out;
}

void set_engine_boost_ref(sqp::OcpNlp& nlp, const EngineParams& prm, double boost_ref) {
  for (int k = 0; k <= nlp.dims.N; ++k) {
    auto& ls = std::get<NonlinearLsCost>(nlp.cost[k].spec);
    ls.y_ref = engine_y_ref(prm, boost_ref, k == nlp.dims.N);
  }
}

}  // namespace nmpc::bench
