#include "nmpc/sqp/ocp_nlp.hpp"

namespace nmpc::sqp {

void OcpNlp::validate() const {
  const int N = dims.N;
  if (N < 1) throw DimensionError("ocp nlp: horizon must be at least 1");
  if (static_cast<int>(dims.nx.size()) != N + 1 || static_cast<int>(dims.nu.size()) != N ||
      static_cast<int>(dims.nz.size()) != N)
    throw DimensionError("ocp nlp: dimension vectors do not match the horizon");
  if (static_cast<int>(dynamics.size()) != N) throw DimensionError("ocp nlp: dynamics count");
  if (static_cast<int>(cost.size()) != N + 1) throw DimensionError("ocp nlp: cost count");
  if (static_cast<int>(constraints.size()) != N + 1)
    throw DimensionError("ocp nlp: constraint count");

  for (int k = 0; k < N; ++k) {
    const StageDynamics& d = dynamics[k];
    if (d.explicit_model.has_value() == d.implicit_model.has_value())
      throw InvalidInputError("ocp nlp: each stage needs exactly one dynamics model");
    if (d.explicit_model && dims.nz[k] != 0)
      throw InvalidInputError("ocp nlp: explicit dynamics cannot carry algebraic variables");
    if (d.implicit_model && d.implicit_model->n_z != dims.nz[k])
      throw DimensionError("ocp nlp: nz mismatch with the DAE model");
    if (d.config.t_interval <= 0.0)
      throw InvalidInputError("ocp nlp: shooting interval length must be positive");
  }
  for (int k = 0; k <= N; ++k) {
    const StageConstraints& c = constraints[k];
    const bool terminal = k == N;
    if (c.bx.index.size() != c.bx.lb.size() || c.bx.index.size() != c.bx.ub.size())
      throw DimensionError("ocp nlp: state bound spec lengths");
    if (!terminal && (c.bu.index.size() != c.bu.lb.size() || c.bu.index.size() != c.bu.ub.size()))
      throw DimensionError("ocp nlp: input bound spec lengths");
    if (terminal && !c.bu.index.empty())
      throw InvalidInputError("ocp nlp: terminal stage has no input bounds");
    if (c.cl.size() != c.cub.size() || static_cast<int>(c.cl.size()) != c.cx.rows())
      throw DimensionError("ocp nlp: linear row spec lengths");
    if (c.g_nonl && static_cast<int>(c.gl.size()) != c.g_nonl->n_out())
      throw DimensionError("ocp nlp: nonlinear row bound lengths");
    if (!c.g_nonl && !c.gl.empty())
      throw InvalidInputError("ocp nlp: nonlinear bounds without a constraint function");
    const int rows = c.n_rows(terminal);
    for (const auto& soft : c.soft) {
      if (soft.row < 0 || soft.row >= rows) throw DimensionError("ocp nlp: soft row out of range");
      if (!(soft.beta > 0.0)) throw InvalidInputError("ocp nlp: soft beta must be positive");
    }
    for (const auto& decl : c.scqp)
      if (decl.row < 0 || decl.row >= rows) throw DimensionError("ocp nlp: scqp row out of range");
  }
}

SqpIterate SqpIterate::zeros(const OcpNlp& nlp) {
  const int N = nlp.dims.N;
  SqpIterate it;
  it.x.resize(N + 1);
  it.u.resize(N);
  it.z.resize(N);
  it.s.resize(N + 1);
  it.pi.resize(N);
  it.lam_lo.resize(N + 1);
  it.lam_up.resize(N + 1);
  it.lam_s.resize(N + 1);
  for (int k = 0; k <= N; ++k) {
    it.x[k].assign(nlp.dims.nx[k], 0.0);
    const int rows = nlp.constraints[k].n_rows(k == N) + (k == 0 ? nlp.dims.nx[0] : 0);
    it.lam_lo[k].assign(rows, 0.0);
    it.lam_up[k].assign(rows, 0.0);
    const int ns = static_cast<int>(nlp.constraints[k].soft.size());
    it.s[k].assign(ns, 0.0);
    it.lam_s[k].assign(ns, 0.0);
    if (k < N) {
      it.u[k].assign(nlp.dims.nu[k], 0.0);
      it.z[k].assign(nlp.dims.nz[k], 0.0);
      it.pi[k].assign(nlp.dims.nx[k + 1], 0.0);
    }
  }
  return it;
}

SqpIterate interpolated_iterate(const OcpNlp& nlp, const Vec& x0, const Vec& x_ref) {
  SqpIterate it = SqpIterate::zeros(nlp);
  const int N = nlp.dims.N;
  for (int k = 0; k <= N; ++k) {
    const double t = double(k) / N;
    for (size_t i = 0; i < it.x[k].size(); ++i)
      it.x[k][i] = (1.0 - t) * x0[i] + t * x_ref[i];
  }
  return it;
}

}  // namespace nmpc::sqp
