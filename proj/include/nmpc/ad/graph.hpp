#pragma once

#include <array>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "nmpc/common/error.hpp"
#include "nmpc/linalg/dense_matrix.hpp"

namespace nmpc::ad {

using linalg::DenseMatrix;
using linalg::Vec;

// Named input blocks of a model function.
enum class Block : int { XDot = 0, X = 1, Z = 2, U = 3, P = 4 };
constexpr int kNumBlocks = 5;
const char* block_name(Block b);

enum class Op : int {
  Const,
  Input,
  Add,
  Sub,
  Mul,
  Div,
  Pow,
  Sqrt,
  Sin,
  Cos,
  Exp,
  Log,
  Logistic,
};

struct Node {
  Op op;
  int a = -1;          // first child
  int b = -1;          // second child (binary ops)
  double value = 0.0;  // Const payload
  Block block{};       // Input payload
  int index = 0;       // Input payload
};

// Bindings map each declared block to a caller-owned value span.
struct Bindings {
  std::array<std::span<const double>, kNumBlocks> block;
  std::span<const double>& operator[](Block b) { return block[static_cast<int>(b)]; }
  std::span<const double> operator[](Block b) const { return block[static_cast<int>(b)]; }
};

// Immutable differentiable computation graph. Nodes are stored in topological
// order by construction (children always precede parents), so every sweep is
// a single pass over the node list. Evaluation state lives in a caller-owned
// Workspace, which makes concurrent evaluation of one graph safe.
class ExpressionGraph {
 public:
  int add_const(double v);
  int add_input(Block b, int index);
  int add_unary(Op op, int a);
  int add_binary(Op op, int a, int b);

  void declare_block(Block b, int size);
  void set_outputs(std::vector<int> outputs);

  int n_nodes() const { return static_cast<int>(nodes_.size()); }
  int n_outputs() const { return static_cast<int>(outputs_.size()); }
  int block_size(Block b) const { return block_sizes_[static_cast<int>(b)]; }
  bool block_declared(Block b) const { return block_sizes_[static_cast<int>(b)] >= 0; }
  const std::vector<Node>& nodes() const { return nodes_; }
  const std::vector<int>& outputs() const { return outputs_; }

  struct Workspace {
    Vec val;
    // First-order sweep: n_dir directional derivatives per node.
    Vec dot;
    // Second-order sweep: scalar seed direction, gradient block, and the
    // mixed second derivative along (seed, direction_j).
    Vec dseed;
    Vec grad;
    Vec cross;
  };

  // Plain forward evaluation of all outputs.
  void eval(const Bindings& in, Workspace& ws, std::span<double> out) const;

  // Forward-mode Jacobian with one dual sweep carrying n_dir directions.
  // Directions are identity seeds over the listed blocks, concatenated in the
  // order given; the Jacobian is n_outputs x sum(block sizes).
  void jacobian(const Bindings& in, std::span<const Block> wrt, Workspace& ws,
                DenseMatrix& jac) const;

  // (sum_i weights_i * hessian(output_i)) * dir, one forward-over-forward sweep.
  void hvp(const Bindings& in, std::span<const Block> wrt, std::span<const double> weights,
           std::span<const double> dir, Workspace& ws, std::span<double> out) const;

  // Full weighted Hessian over the listed blocks, built column-by-column from
  // the same second-order sweep machinery and symmetrized.
  void seeded_hessian(const Bindings& in, std::span<const Block> wrt,
                      std::span<const double> weights, Workspace& ws, DenseMatrix& hess) const;

  int total_size(std::span<const Block> blocks) const;

 private:
  void check_bindings(const Bindings& in) const;

  std::vector<Node> nodes_;
  std::vector<int> outputs_;
  std::array<int, kNumBlocks> block_sizes_{-1, -1, -1, -1, -1};
};

// Operator-overloaded handle for building graphs.
class Expr {
 public:
  Expr() = default;
  Expr(ExpressionGraph* g, int node) : graph_(g), node_(node) {}
  ExpressionGraph* graph() const { return graph_; }
  int node() const { return node_; }

 private:
  ExpressionGraph* graph_ = nullptr;
  int node_ = -1;
};

class GraphBuilder {
 public:
  GraphBuilder() : graph_(new ExpressionGraph) {}

  std::vector<Expr> input(Block b, int size);
  Expr constant(double v);
  void set_outputs(std::span<const Expr> outs);
  Expr output_sum(std::span<const Expr> terms);

  // Transfers ownership of the finished graph.
  std::unique_ptr<ExpressionGraph> release() { return std::move(graph_); }
  ExpressionGraph* get() { return graph_.get(); }

 private:
  std::unique_ptr<ExpressionGraph> graph_;
};

Expr operator+(Expr a, Expr b);
Expr operator-(Expr a, Expr b);
Expr operator*(Expr a, Expr b);
Expr operator/(Expr a, Expr b);
Expr operator+(Expr a, double b);
Expr operator-(Expr a, double b);
Expr operator*(Expr a, double b);
Expr operator/(Expr a, double b);
Expr operator+(double a, Expr b);
Expr operator-(double a, Expr b);
Expr operator*(double a, Expr b);
Expr operator/(double a, Expr b);
Expr operator-(Expr a);
Expr pow(Expr a, double e);
Expr pow(Expr a, Expr e);
Expr sqrt(Expr a);
Expr sin(Expr a);
Expr cos(Expr a);
Expr exp(Expr a);
Expr log(Expr a);
Expr logistic(Expr a);

}  // namespace nmpc::ad
