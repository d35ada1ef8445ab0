#pragma once

#include <functional>
#include <memory>

#include "nmpc/ad/graph.hpp"
#include "nmpc/linalg/kernels.hpp"

namespace nmpc::ad {

// A differentiable vector function of the named input blocks. Expression
// graphs are the usual backing, but hand-written callbacks satisfy the same
// interface and are accepted everywhere a graph is.
class StageFunction {
 public:
  virtual ~StageFunction() = default;
  virtual int n_out() const = 0;
  virtual int block_size(Block b) const = 0;
  virtual void eval(const Bindings& in, std::span<double> out) const = 0;
  virtual void jacobian(const Bindings& in, std::span<const Block> wrt, DenseMatrix& jac) const = 0;
  // direction == nullptr means: full weighted Hessian into `hess`.
  virtual void hvp(const Bindings& in, std::span<const Block> wrt,
                   std::span<const double> weights, std::span<const double> dir,
                   std::span<double> out) const = 0;
  virtual void seeded_hessian(const Bindings& in, std::span<const Block> wrt,
                              std::span<const double> weights, DenseMatrix& hess) const = 0;
};

class GraphFunction final : public StageFunction {
 public:
  explicit GraphFunction(std::unique_ptr<ExpressionGraph> graph) : graph_(std::move(graph)) {}

  int n_out() const override { return graph_->n_outputs(); }
  int block_size(Block b) const override {
    return graph_->block_declared(b) ? graph_->block_size(b) : 0;
  }
  void eval(const Bindings& in, std::span<double> out) const override {
    graph_->eval(in, ws_, out);
  }
  void jacobian(const Bindings& in, std::span<const Block> wrt, DenseMatrix& jac) const override {
    graph_->jacobian(in, wrt, ws_, jac);
  }
  void hvp(const Bindings& in, std::span<const Block> wrt, std::span<const double> weights,
           std::span<const double> dir, std::span<double> out) const override {
    graph_->hvp(in, wrt, weights, dir, ws_, out);
  }
  void seeded_hessian(const Bindings& in, std::span<const Block> wrt,
                      std::span<const double> weights, DenseMatrix& hess) const override {
    graph_->seeded_hessian(in, wrt, weights, ws_, hess);
  }

  const ExpressionGraph& graph() const { return *graph_; }

 private:
  std::unique_ptr<ExpressionGraph> graph_;
  // Scratch workspace; one per function instance, so instances are movable
  // between threads but not concurrently shareable.
  mutable ExpressionGraph::Workspace ws_;
};

// Hand-written model functions: the caller provides value, Jacobian and
// weighted-Hessian callbacks plus the block sizes.
class CallbackFunction final : public StageFunction {
 public:
  using EvalFn = std::function<void(const Bindings&, std::span<double>)>;
  using JacFn = std::function<void(const Bindings&, std::span<const Block>, DenseMatrix&)>;
  using HessFn =
      std::function<void(const Bindings&, std::span<const Block>, std::span<const double>,
                         DenseMatrix&)>;

  CallbackFunction(int n_out, std::array<int, kNumBlocks> block_sizes, EvalFn eval, JacFn jac,
                   HessFn hess = nullptr)
      : n_out_(n_out),
        block_sizes_(block_sizes),
        eval_(std::move(eval)),
        jac_(std::move(jac)),
        hess_(std::move(hess)) {}

  int n_out() const override { return n_out_; }
  int block_size(Block b) const override { return block_sizes_[static_cast<int>(b)]; }
  void eval(const Bindings& in, std::span<double> out) const override { eval_(in, out); }
  void jacobian(const Bindings& in, std::span<const Block> wrt, DenseMatrix& jac) const override {
    jac_(in, wrt, jac);
  }
  void hvp(const Bindings& in, std::span<const Block> wrt, std::span<const double> weights,
           std::span<const double> dir, std::span<double> out) const override {
    DenseMatrix h;
    seeded_hessian(in, wrt, weights, h);
    linalg::gemv(1.0, h, linalg::Trans::No, dir, 0.0, out);
  }
  void seeded_hessian(const Bindings& in, std::span<const Block> wrt,
                      std::span<const double> weights, DenseMatrix& hess) const override {
    if (!hess_) throw InvalidInputError("callback function: no Hessian callback supplied");
    hess_(in, wrt, weights, hess);
  }

 private:
  int n_out_;
  std::array<int, kNumBlocks> block_sizes_;
  EvalFn eval_;
  JacFn jac_;
  HessFn hess_;
};

// Explicit ODE right-hand side xdot = f(x, u), n_out == n_x.
struct ExplicitModel {
  std::shared_ptr<const StageFunction> f;
  int n_x() const { return f->n_out(); }
  int n_u() const { return f->block_size(Block::U); }
};

// Implicit index-1 DAE residual f(xdot, x, z, u) of length n_x + n_z.
struct ImplicitDaeModel {
  std::shared_ptr<const StageFunction> f;
  int n_x = 0;
  int n_z = 0;
  int n_u() const { return f->block_size(Block::U); }
};

// Wraps an explicit ODE as the implicit residual xdot - f(x, u).
ImplicitDaeModel make_implicit(const ExplicitModel& model);

// Maximum relative error between the forward-mode Jacobian and a central
// finite-difference one; relative with denominator max(1, |entry|).
double check_jacobian_fd(const StageFunction& f, const Bindings& in, Block wrt, double h);

// True iff d f / d (xdot, z) factorizes with min |pivot| > 1e-10 * ||J||_inf.
bool dae_index1_check(const ImplicitDaeModel& model, const Bindings& in);

}  // namespace nmpc::ad
