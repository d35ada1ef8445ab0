#include "nmpc/ad/model.hpp"

#include <algorithm>
#include <cmath>

#include "nmpc/linalg/kernels.hpp"

namespace nmpc::ad {

namespace {

// Rebuilds `graph` node by node inside `b`, remapping input nodes through
// `remap` (block, index) -> Expr.
std::vector<Expr> clone_into(GraphBuilder& b, const ExpressionGraph& graph,
                             const std::function<Expr(Block, int)>& remap) {
  std::vector<Expr> by_node(graph.n_nodes());
  for (int i = 0; i < graph.n_nodes(); ++i) {
    const Node& nd = graph.nodes()[i];
    switch (nd.op) {
      case Op::Const:
        by_node[i] = b.constant(nd.value);
        break;
      case Op::Input:
        by_node[i] = remap(nd.block, nd.index);
        break;
      default:
        if (nd.b >= 0)
          by_node[i] = Expr(by_node[nd.a].graph(),
                            by_node[nd.a].graph()->add_binary(nd.op, by_node[nd.a].node(),
                                                              by_node[nd.b].node()));
        else
          by_node[i] = Expr(by_node[nd.a].graph(),
                            by_node[nd.a].graph()->add_unary(nd.op, by_node[nd.a].node()));
    }
  }
  std::vector<Expr> outs;
  outs.reserve(graph.n_outputs());
  for (int o : graph.outputs()) outs.push_back(by_node[o]);
  return outs;
}

}  // namespace

ImplicitDaeModel make_implicit(const ExplicitModel& model) {
  const auto* gf = dynamic_cast<const GraphFunction*>(model.f.get());
  if (!gf) throw InvalidInputError("make_implicit: requires a graph-backed explicit model");
  const ExpressionGraph& src = gf->graph();
  const int nx = model.n_x();
  const int nu = model.n_u();

  GraphBuilder b;
  auto xdot = b.input(Block::XDot, nx);
  auto x = b.input(Block::X, nx);
  auto u = b.input(Block::U, nu);
  b.get()->declare_block(Block::Z, 0);

  auto remap = [&](Block blk, int idx) -> Expr {
    if (blk == Block::X) return x[idx];
    if (blk == Block::U) return u[idx];
    throw InvalidInputError("make_implicit: explicit model uses unexpected block");
  };
  std::vector<Expr> f_outs = clone_into(b, src, remap);
  std::vector<Expr> res;
  res.reserve(nx);
  for (int i = 0; i < nx; ++i) res.push_back(xdot[i] - f_outs[i]);
  b.set_outputs(res);

  ImplicitDaeModel out;
  out.f = std::make_shared<GraphFunction>(b.release());
  out.n_x = nx;
  out.n_z = 0;
  return out;
}

double check_jacobian_fd(const StageFunction& f, const Bindings& in, Block wrt, double h) {
  if (h <= 0.0) throw InvalidInputError("check_jacobian_fd: h must be positive");
  const Block blocks[] = {wrt};
  DenseMatrix jac;
  f.jacobian(in, blocks, jac);

  const int n = static_cast<int>(in[wrt].size());
  const int m = f.n_out();
  Vec perturbed(in[wrt].begin(), in[wrt].end());
  Bindings local = in;
  local[wrt] = {perturbed.data(), perturbed.size()};

  Vec fp(m), fm(m);
  double max_rel = 0.0;
  for (int j = 0; j < n; ++j) {
    const double saved = perturbed[j];
    perturbed[j] = saved + h;
    f.eval(local, fp);
    perturbed[j] = saved - h;
    f.eval(local, fm);
    perturbed[j] = saved;
    for (int i = 0; i < m; ++i) {
      const double fd = (fp[i] - fm[i]) / (2.0 * h);
      const double err = std::abs(fd - jac(i, j)) / std::max(1.0, std::abs(jac(i, j)));
      max_rel = std::max(max_rel, err);
    }
  }
  return max_rel;
}

bool dae_index1_check(const ImplicitDaeModel& model, const Bindings& in) {
  const Block blocks[] = {Block::XDot, Block::Z};
  DenseMatrix jac;
  model.f->jacobian(in, blocks, jac);
  const int n = jac.rows();
  if (jac.cols() != n) throw DimensionError("dae_index1_check: residual not square in (xdot, z)");

  const double scale = linalg::norm_inf(jac);
  DenseMatrix lu;
  std::vector<int> piv;
  try {
    linalg::getrf(jac, lu, piv);
  } catch (const SingularMatrixError&) {
    return false;
  }
  double min_pivot = std::numeric_limits<double>::infinity();
  for (int i = 0; i < n; ++i) min_pivot = std::min(min_pivot, std::abs(lu(i, i)));
  return min_pivot > 1e-10 * std::max(scale, 1e-300);
}

}  // namespace nmpc::ad
