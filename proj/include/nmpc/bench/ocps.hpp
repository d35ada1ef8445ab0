#pragma once

#include "nmpc/bench/models.hpp"
#include "nmpc/sqp/ocp_nlp.hpp"

namespace nmpc::bench {

// Chain stabilization problem: RK4-discretized dynamics, quadratic tracking
// cost toward the steady state with the free-end position weighted, |u| <= 1.
struct ChainOcp {
  sqp::OcpNlp nlp;
  Vec x_ref;  // steady state with the free end at its reference
  Vec q_diag, r_diag, p_diag;
  ExplicitModel model;
};
ChainOcp build_chain_ocp(const ChainParams& prm);

// Cart-pole swing-up: track the upright origin under |F| <= force_limit.
struct PendulumOcp {
  sqp::OcpNlp nlp;
  Vec q_diag;
  double r_weight;
  ExplicitModel model;
};
PendulumOcp build_pendulum_ocp(const PendulumParams& prm);

// Engine boost tracking: nonlinear least squares on [y_p; x; u] with the
// pressure-ratio boxes and wastegate bounds for k >= 1 and rate bounds on d.
struct EngineOcp {
  sqp::OcpNlp nlp;
  ImplicitDaeModel model;
};
EngineOcp build_engine_ocp(const EngineParams& prm, double boost_ref);

// Replaces the tracked boost reference in an engine OCP built above.
void set_engine_boost_ref(sqp::OcpNlp& nlp, const EngineParams& prm, double boost_ref);

}  // namespace nmpc::bench
