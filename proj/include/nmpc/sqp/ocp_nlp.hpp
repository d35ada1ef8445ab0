#pragma once

#include <memory>
#include <optional>
#include <variant>

#include "nmpc/ad/model.hpp"
#include "nmpc/qp/data.hpp"
#include "nmpc/sim/integrator.hpp"

namespace nmpc::sqp {

using ad::StageFunction;
using linalg::DenseMatrix;
using linalg::Vec;

struct OcpNlpDims {
  int N = 0;
  std::vector<int> nx;  // N+1
  std::vector<int> nu;  // N
  std::vector<int> nz;  // N
};

struct IntegratorConfig {
  enum class Kind { Erk, Irk } kind = Kind::Erk;
  sim::ButcherTableau tableau;  // ERK
  sim::IrkOptions irk;          // IRK
  int n_steps = 1;
  double t_interval = 0.1;

  IntegratorConfig() : tableau(sim::erk_rk4()) {}
};

// One shooting interval: the model plus its integrator configuration;
// integrators can vary from stage to stage.
struct StageDynamics {
  std::optional<ad::ExplicitModel> explicit_model;
  std::optional<ad::ImplicitDaeModel> implicit_model;
  IntegratorConfig config;
};

// || Vx x + Vu u - y_ref ||^2_W
struct LinearLsCost {
  DenseMatrix vx, vu;
  Vec y_ref;
  DenseMatrix w;
};

// || r(x, u) - y_ref ||^2_W with a graph (or callback) residual
struct NonlinearLsCost {
  std::shared_ptr<const StageFunction> r;
  Vec y_ref;
  DenseMatrix w;
};

// general scalar cost l(x, u)
struct ExternalCost {
  std::shared_ptr<const StageFunction> l;
};

struct StageCost {
  std::variant<LinearLsCost, NonlinearLsCost, ExternalCost> spec;
  // Lagrange-term time scaling (t_{k+1} - t_k); 1 for costs given in
  // already-discretized form.
  double scale = 1.0;
};

struct BoundSpec {
  std::vector<int> index;
  Vec lb, ub;
};

// Stage rows stacked as [state bounds; input bounds; linear rows; nonlinear
// rows]; at stage 0 the solver prepends the initial-state rows.
struct StageConstraints {
  BoundSpec bx, bu;
  DenseMatrix cx, cu;
  Vec cl, cub;
  std::shared_ptr<const StageFunction> g_nonl;  // inputs (x, u); may be null
  Vec gl, gu;

  // Convex-over-nonlinear declaration for the SCQP Hessian: the named row is
  // phi(c(x,u)) with inner c and constant outer Hessian (PSD).
  struct ScqpDecl {
    int row;
    std::shared_ptr<const StageFunction> inner;
    DenseMatrix outer_hess;
  };
  std::vector<ScqpDecl> scqp;

  // Soft rows: the named row is relaxed by one slack with cost
  // alpha s + beta s^2.
  struct SoftSpec {
    int row;
    double alpha = 0.0;
    double beta = 1.0;
  };
  std::vector<SoftSpec> soft;

  int n_rows(bool terminal) const {
    int n = static_cast<int>(bx.index.size()) + static_cast<int>(cl.size()) +
            static_cast<int>(gl.size());
    if (!terminal) n += static_cast<int>(bu.index.size());
    return n;
  }
};

struct OcpNlp {
  OcpNlpDims dims;
  std::vector<StageDynamics> dynamics;      // N
  std::vector<StageCost> cost;              // N+1, terminal depends on x only
  std::vector<StageConstraints> constraints;  // N+1

  void validate() const;
};

// Primal-dual iterate; the dual vectors cover the stacked QP rows (at stage 0
// that includes the injected initial-state rows).
struct SqpIterate {
  std::vector<Vec> x;   // N+1
  std::vector<Vec> u;   // N
  // Algebraic warm starts, used only by the integrators. They start at zero;
  // set them for DAE models whose algebraic equations are undefined there.
  std::vector<Vec> z;   // N
  std::vector<Vec> s;   // N+1
  std::vector<Vec> pi;  // N
  std::vector<Vec> lam_lo, lam_up;  // per stacked row
  std::vector<Vec> lam_s;

  static SqpIterate zeros(const OcpNlp& nlp);
};

// Default initialization: states interpolated linearly from x0 to x_ref,
// controls zero, duals zero.
SqpIterate interpolated_iterate(const OcpNlp& nlp, const Vec& x0, const Vec& x_ref);

}  // namespace nmpc::sqp
