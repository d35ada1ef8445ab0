#include "nmpc/ad/graph.hpp"

#include <cmath>

#include "nmpc/linalg/kernels.hpp"

namespace nmpc::ad {

namespace {

double stable_logistic(double x) {
  // Evaluated through exp(-|x|) so large |x| cannot overflow.
  if (x >= 0.0) {
    const double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

bool is_integer(double v) { return v == std::floor(v) && std::abs(v) < 1e15; }

// Value and partial derivatives of one elementary operation. Second-order
// partials are only filled when `second` is set.
struct Partials {
  double f = 0.0;
  double fa = 0.0, fb = 0.0;
  double faa = 0.0, fab = 0.0, fbb = 0.0;
};

Partials derive(Op op, double a, double b, bool exp_is_const_int, int node, bool second) {
  Partials p;
  switch (op) {
    case Op::Add:
      p.f = a + b;
      p.fa = 1.0;
      p.fb = 1.0;
      break;
    case Op::Sub:
      p.f = a - b;
      p.fa = 1.0;
      p.fb = -1.0;
      break;
    case Op::Mul:
      p.f = a * b;
      p.fa = b;
      p.fb = a;
      if (second) p.fab = 1.0;
      break;
    case Op::Div: {
      if (b == 0.0) throw DomainEvalError(node, "division by zero");
      const double inv = 1.0 / b;
      p.f = a * inv;
      p.fa = inv;
      p.fb = -p.f * inv;
      if (second) {
        p.fab = -inv * inv;
        p.fbb = 2.0 * p.f * inv * inv;
      }
      break;
    }
    case Op::Pow: {
      if (exp_is_const_int) {
        p.f = std::pow(a, b);
        p.fa = b == 0.0 ? 0.0 : b * std::pow(a, b - 1.0);
        if (second) p.faa = (b == 0.0 || b == 1.0) ? 0.0 : b * (b - 1.0) * std::pow(a, b - 2.0);
        if (a == 0.0 && b < 0.0) throw DomainEvalError(node, "pow: zero base, negative exponent");
      } else {
        if (a <= 0.0) throw DomainEvalError(node, "pow: non-positive base");
        const double la = std::log(a);
        p.f = std::pow(a, b);
        p.fa = b * p.f / a;
        p.fb = p.f * la;
        if (second) {
          p.faa = b * (b - 1.0) * p.f / (a * a);
          p.fab = p.f * (1.0 + b * la) / a;
          p.fbb = p.f * la * la;
        }
      }
      break;
    }
    case Op::Sqrt: {
      if (a < 0.0) throw DomainEvalError(node, "sqrt of negative value");
      p.f = std::sqrt(a);
      if (a == 0.0) throw DomainEvalError(node, "sqrt derivative at zero");
      p.fa = 0.5 / p.f;
      if (second) p.faa = -0.25 / (p.f * a);
      break;
    }
    case Op::Sin:
      p.f = std::sin(a);
      p.fa = std::cos(a);
      if (second) p.faa = -p.f;
      break;
    case Op::Cos:
      p.f = std::cos(a);
      p.fa = -std::sin(a);
      if (second) p.faa = -p.f;
      break;
    case Op::Exp:
      p.f = std::exp(a);
      p.fa = p.f;
      if (second) p.faa = p.f;
      break;
    case Op::Log:
      if (a <= 0.0) throw DomainEvalError(node, "log of non-positive value");
      p.f = std::log(a);
      p.fa = 1.0 / a;
      if (second) p.faa = -1.0 / (a * a);
      break;
    case Op::Logistic: {
      const double s = stable_logistic(a);
      p.f = s;
      p.fa = s * (1.0 - s);
      if (second) p.faa = p.fa * (1.0 - 2.0 * s);
      break;
    }
    default:
      break;
  }
  return p;
}

double eval_value_only(Op op, double a, double b, bool exp_is_const_int, int node) {
  switch (op) {
    case Op::Add: return a + b;
    case Op::Sub: return a - b;
    case Op::Mul: return a * b;
    case Op::Div:
      if (b == 0.0) throw DomainEvalError(node, "division by zero");
      return a / b;
    case Op::Pow:
      if (!exp_is_const_int && a <= 0.0) {
        if (a < 0.0) throw DomainEvalError(node, "pow: non-positive base");
        if (b <= 0.0) throw DomainEvalError(node, "pow: zero base, non-positive exponent");
      }
      if (exp_is_const_int && a == 0.0 && b < 0.0)
        throw DomainEvalError(node, "pow: zero base, negative exponent");
      return std::pow(a, b);
    case Op::Sqrt:
      if (a < 0.0) throw DomainEvalError(node, "sqrt of negative value");
      return std::sqrt(a);
    case Op::Sin: return std::sin(a);
    case Op::Cos: return std::cos(a);
    case Op::Exp: return std::exp(a);
    case Op::Log:
      if (a <= 0.0) throw DomainEvalError(node, "log of non-positive value");
      return std::log(a);
    case Op::Logistic: return stable_logistic(a);
    default: return 0.0;
  }
}

}  // namespace

const char* block_name(Block b) {
  switch (b) {
    case Block::XDot: return "xdot";
    case Block::X: return "x";
    case Block::Z: return "z";
    case Block::U: return "u";
    case Block::P: return "p";
  }
  return "?";
}

int ExpressionGraph::add_const(double v) {
  nodes_.push_back({Op::Const, -1, -1, v, Block::X, 0});
  return n_nodes() - 1;
}

int ExpressionGraph::add_input(Block b, int index) {
  Node n;
  n.op = Op::Input;
  n.block = b;
  n.index = index;
  nodes_.push_back(n);
  return n_nodes() - 1;
}

int ExpressionGraph::add_unary(Op op, int a) {
  if (a < 0 || a >= n_nodes()) throw InvalidInputError("graph: child index out of range");
  nodes_.push_back({op, a, -1, 0.0, Block::X, 0});
  return n_nodes() - 1;
}

int ExpressionGraph::add_binary(Op op, int a, int b) {
  if (a < 0 || a >= n_nodes() || b < 0 || b >= n_nodes())
    throw InvalidInputError("graph: child index out of range");
  nodes_.push_back({op, a, b, 0.0, Block::X, 0});
  return n_nodes() - 1;
}

void ExpressionGraph::declare_block(Block b, int size) {
  block_sizes_[static_cast<int>(b)] = size;
}

void ExpressionGraph::set_outputs(std::vector<int> outputs) {
  for (int o : outputs)
    if (o < 0 || o >= n_nodes()) throw InvalidInputError("graph: output index out of range");
  outputs_ = std::move(outputs);
}

int ExpressionGraph::total_size(std::span<const Block> blocks) const {
  int n = 0;
  for (Block b : blocks) {
    if (!block_declared(b))
      throw InvalidInputError(std::string("graph: block not declared: ") + block_name(b));
    n += block_size(b);
  }
  return n;
}

void ExpressionGraph::check_bindings(const Bindings& in) const {
  for (int i = 0; i < kNumBlocks; ++i) {
    if (block_sizes_[i] < 0) continue;
    if (static_cast<int>(in.block[i].size()) != block_sizes_[i])
      throw InvalidInputError(std::string("graph: unbound or mis-sized input block ") +
                              block_name(static_cast<Block>(i)));
  }
}

void ExpressionGraph::eval(const Bindings& in, Workspace& ws, std::span<double> out) const {
  check_bindings(in);
  if (static_cast<int>(out.size()) != n_outputs())
    throw DimensionError("graph eval: output length mismatch");
  ws.val.resize(nodes_.size());
  for (int i = 0; i < n_nodes(); ++i) {
    const Node& nd = nodes_[i];
    switch (nd.op) {
      case Op::Const:
        ws.val[i] = nd.value;
        break;
      case Op::Input:
        ws.val[i] = in[nd.block][nd.index];
        break;
      default: {
        const double a = ws.val[nd.a];
        const double b = nd.b >= 0 ? ws.val[nd.b] : 0.0;
        const bool ci = nd.op == Op::Pow && nodes_[nd.b].op == Op::Const &&
                        is_integer(nodes_[nd.b].value);
        ws.val[i] = eval_value_only(nd.op, a, b, ci, i);
      }
    }
  }
  for (int k = 0; k < n_outputs(); ++k) out[k] = ws.val[outputs_[k]];
}

void ExpressionGraph::jacobian(const Bindings& in, std::span<const Block> wrt, Workspace& ws,
                               DenseMatrix& jac) const {
  check_bindings(in);
  const int n_dir = total_size(wrt);
  jac.resize(n_outputs(), n_dir);
  ws.val.resize(nodes_.size());
  ws.dot.resize(nodes_.size() * n_dir);

  // Seed offsets: identity over the concatenated wrt blocks.
  std::array<int, kNumBlocks> offset;
  offset.fill(-1);
  int pos = 0;
  for (Block b : wrt) {
    offset[static_cast<int>(b)] = pos;
    pos += block_size(b);
  }

  for (int i = 0; i < n_nodes(); ++i) {
    const Node& nd = nodes_[i];
    double* di = ws.dot.data() + size_t(i) * n_dir;
    switch (nd.op) {
      case Op::Const: {
        ws.val[i] = nd.value;
        std::fill(di, di + n_dir, 0.0);
        break;
      }
      case Op::Input: {
        ws.val[i] = in[nd.block][nd.index];
        std::fill(di, di + n_dir, 0.0);
        const int off = offset[static_cast<int>(nd.block)];
        if (off >= 0) di[off + nd.index] = 1.0;
        break;
      }
      default: {
        const double a = ws.val[nd.a];
        const double b = nd.b >= 0 ? ws.val[nd.b] : 0.0;
        const bool ci = nd.op == Op::Pow && nodes_[nd.b].op == Op::Const &&
                        is_integer(nodes_[nd.b].value);
        const Partials p = derive(nd.op, a, b, ci, i, false);
        ws.val[i] = p.f;
        const double* da = ws.dot.data() + size_t(nd.a) * n_dir;
        if (nd.b >= 0) {
          const double* db = ws.dot.data() + size_t(nd.b) * n_dir;
          for (int j = 0; j < n_dir; ++j) di[j] = p.fa * da[j] + p.fb * db[j];
        } else {
          for (int j = 0; j < n_dir; ++j) di[j] = p.fa * da[j];
        }
      }
    }
  }

  for (int k = 0; k < n_outputs(); ++k) {
    const double* drow = ws.dot.data() + size_t(outputs_[k]) * n_dir;
    for (int j = 0; j < n_dir; ++j) jac(k, j) = drow[j];
  }
}

void ExpressionGraph::hvp(const Bindings& in, std::span<const Block> wrt,
                          std::span<const double> weights, std::span<const double> dir,
                          Workspace& ws, std::span<double> out) const {
  check_bindings(in);
  const int n_dir = total_size(wrt);
  if (static_cast<int>(weights.size()) != n_outputs())
    throw DimensionError("hvp: weights length mismatch");
  if (static_cast<int>(dir.size()) != n_dir) throw DimensionError("hvp: direction length mismatch");
  if (static_cast<int>(out.size()) != n_dir) throw DimensionError("hvp: output length mismatch");

  ws.val.resize(nodes_.size());
  ws.dseed.resize(nodes_.size());
  ws.grad.resize(nodes_.size() * n_dir);
  ws.cross.resize(nodes_.size() * n_dir);

  std::array<int, kNumBlocks> offset;
  offset.fill(-1);
  int pos = 0;
  for (Block b : wrt) {
    offset[static_cast<int>(b)] = pos;
    pos += block_size(b);
  }

  for (int i = 0; i < n_nodes(); ++i) {
    const Node& nd = nodes_[i];
    double* gi = ws.grad.data() + size_t(i) * n_dir;
    double* ci = ws.cross.data() + size_t(i) * n_dir;
    switch (nd.op) {
      case Op::Const: {
        ws.val[i] = nd.value;
        ws.dseed[i] = 0.0;
        std::fill(gi, gi + n_dir, 0.0);
        std::fill(ci, ci + n_dir, 0.0);
        break;
      }
      case Op::Input: {
        ws.val[i] = in[nd.block][nd.index];
        std::fill(gi, gi + n_dir, 0.0);
        std::fill(ci, ci + n_dir, 0.0);
        const int off = offset[static_cast<int>(nd.block)];
        if (off >= 0) {
          gi[off + nd.index] = 1.0;
          ws.dseed[i] = dir[off + nd.index];
        } else {
          ws.dseed[i] = 0.0;
        }
        break;
      }
      default: {
        const double a = ws.val[nd.a];
        const double b = nd.b >= 0 ? ws.val[nd.b] : 0.0;
        const bool cint = nd.op == Op::Pow && nodes_[nd.b].op == Op::Const &&
                          is_integer(nodes_[nd.b].value);
        const Partials p = derive(nd.op, a, b, cint, i, true);
        ws.val[i] = p.f;
        const double das = ws.dseed[nd.a];
        const double* ga = ws.grad.data() + size_t(nd.a) * n_dir;
        const double* ca = ws.cross.data() + size_t(nd.a) * n_dir;
        if (nd.b >= 0) {
          const double dbs = ws.dseed[nd.b];
          const double* gb = ws.grad.data() + size_t(nd.b) * n_dir;
          const double* cb = ws.cross.data() + size_t(nd.b) * n_dir;
          ws.dseed[i] = p.fa * das + p.fb * dbs;
          for (int j = 0; j < n_dir; ++j) {
            gi[j] = p.fa * ga[j] + p.fb * gb[j];
            ci[j] = p.fa * ca[j] + p.fb * cb[j] + p.faa * das * ga[j] +
                    p.fab * (das * gb[j] + dbs * ga[j]) + p.fbb * dbs * gb[j];
          }
        } else {
          ws.dseed[i] = p.fa * das;
          for (int j = 0; j < n_dir; ++j) {
            gi[j] = p.fa * ga[j];
            ci[j] = p.fa * ca[j] + p.faa * das * ga[j];
          }
        }
      }
    }
  }

  std::fill(out.begin(), out.end(), 0.0);
  for (int k = 0; k < n_outputs(); ++k) {
    const double w = weights[k];
    if (w == 0.0) continue;
    const double* crow = ws.cross.data() + size_t(outputs_[k]) * n_dir;
    for (int j = 0; j < n_dir; ++j) out[j] += w * crow[j];
  }
}

void ExpressionGraph::seeded_hessian(const Bindings& in, std::span<const Block> wrt,
                                     std::span<const double> weights, Workspace& ws,
                                     DenseMatrix& hess) const {
  const int n = total_size(wrt);
  hess.resize(n, n);
  Vec dir(n, 0.0), col(n, 0.0);
  for (int j = 0; j < n; ++j) {
    dir[j] = 1.0;
    hvp(in, wrt, weights, dir, ws, col);
    dir[j] = 0.0;
    for (int i = 0; i < n; ++i) hess(i, j) = col[i];
  }
  linalg::symmetrize(hess);
}

namespace {

Expr make_binary(Op op, Expr a, Expr b) {
  ExpressionGraph* g = a.graph() ? a.graph() : b.graph();
  if (a.graph() && b.graph() && a.graph() != b.graph())
    throw InvalidInputError("expr: operands from different graphs");
  return {g, g->add_binary(op, a.node(), b.node())};
}

Expr make_unary(Op op, Expr a) { return {a.graph(), a.graph()->add_unary(op, a.node())}; }

Expr lift(ExpressionGraph* g, double v) { return {g, g->add_const(v)}; }

}  // namespace

std::vector<Expr> GraphBuilder::input(Block b, int size) {
  graph_->declare_block(b, size);
  std::vector<Expr> out;
  out.reserve(size);
  for (int i = 0; i < size; ++i) out.emplace_back(graph_.get(), graph_->add_input(b, i));
  return out;
}

Expr GraphBuilder::constant(double v) { return {graph_.get(), graph_->add_const(v)}; }

void GraphBuilder::set_outputs(std::span<const Expr> outs) {
  std::vector<int> idx;
  idx.reserve(outs.size());
  for (const Expr& e : outs) idx.push_back(e.node());
  graph_->set_outputs(std::move(idx));
}

Expr GraphBuilder::output_sum(std::span<const Expr> terms) {
  Expr acc = terms[0];
  for (size_t i = 1; i < terms.size(); ++i) acc = acc + terms[i];
  return acc;
}

Expr operator+(Expr a, Expr b) { return make_binary(Op::Add, a, b); }
Expr operator-(Expr a, Expr b) { return make_binary(Op::Sub, a, b); }
Expr operator*(Expr a, Expr b) { return make_binary(Op::Mul, a, b); }
Expr operator/(Expr a, Expr b) { return make_binary(Op::Div, a, b); }
Expr operator+(Expr a, double b) { return a + lift(a.graph(), b); }
Expr operator-(Expr a, double b) { return a - lift(a.graph(), b); }
Expr operator*(Expr a, double b) { return a * lift(a.graph(), b); }
Expr operator/(Expr a, double b) { return a / lift(a.graph(), b); }
Expr operator+(double a, Expr b) { return lift(b.graph(), a) + b; }
Expr operator-(double a, Expr b) { return lift(b.graph(), a) - b; }
Expr operator*(double a, Expr b) { return lift(b.graph(), a) * b; }
Expr operator/(double a, Expr b) { return lift(b.graph(), a) / b; }
Expr operator-(Expr a) { return lift(a.graph(), 0.0) - a; }
Expr pow(Expr a, double e) { return make_binary(Op::Pow, a, lift(a.graph(), e)); }
Expr pow(Expr a, Expr e) { return make_binary(Op::Pow, a, e); }
Expr sqrt(Expr a) { return make_unary(Op::Sqrt, a); }
Expr sin(Expr a) { return make_unary(Op::Sin, a); }
Expr cos(Expr a) { return make_unary(Op::Cos, a); }
Expr exp(Expr a) { return make_unary(Op::Exp, a); }
Expr log(Expr a) { return make_unary(Op::Log, a); }
Expr logistic(Expr a) { return make_unary(Op::Logistic, a); }

}  // namespace nmpc::ad
