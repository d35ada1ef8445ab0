#pragma once

#include "nmpc/qp/data.hpp"

namespace nmpc::qp {

// Dense variable layout after full condensing: [x0; u_0..u_{N-1}; s_0..s_N].
// Dense rows: the stage rows in order (a two-sided soft row splits into a
// lower and an upper row because plain variables cannot relax both sides),
// then one s >= 0 row per slack variable.
struct DenseRowRef {
  int stage;
  int index;  // row index within the stage, or slack index for kind Slack
  enum Kind { Hard, SoftLower, SoftUpper, Slack } kind;
};

struct FullCondensingData {
  std::vector<DenseMatrix> lx;  // x_k = lx[k] x0 + lu[k] u_all + c[k]
  std::vector<DenseMatrix> lu;
  std::vector<Vec> c;
  std::vector<int> u_offset;  // column of u_k within the dense variable
  std::vector<int> s_offset;  // column of s_k
  int n_var = 0;
  std::vector<DenseRowRef> row_map;
};

// Eliminates the states through the dynamics; x0 stays a variable. Slacks
// survive as plain dense variables with their diagonal penalties.
std::pair<DenseQp, FullCondensingData> full_condense(const OcpQp& qp);

// Recovers the structured solution: states by forward propagation, dynamics
// multipliers by the backward costate recursion evaluated at the recovered
// primal point.
QpSolution expand(const OcpQp& qp, const FullCondensingData& data, const DenseQpSolution& sol);

struct PartialCondensingData {
  int n2 = 0;
  std::vector<int> block_start;  // N2+1 entries, block k' covers [start, start+len)
  // within-block propagation, indexed [block][j]: x_{m+j} = lx x'_k + lu u' + c
  std::vector<std::vector<DenseMatrix>> lx;
  std::vector<std::vector<DenseMatrix>> lu;
  std::vector<std::vector<Vec>> c;
  std::vector<std::vector<int>> u_offset;  // offset of u_{m+j} within u'
  std::vector<std::vector<int>> s_offset;
  std::vector<std::vector<int>> g_offset;
};

// Groups consecutive stages into N2 blocks (sizes differing by at most one)
// and eliminates the states inside each block; the result is a valid OcpQp
// with horizon N2. N2 == N is the identity transform.
std::pair<OcpQp, PartialCondensingData> partial_condense(const OcpQp& qp, int n2);

QpSolution partial_expand(const OcpQp& qp, const PartialCondensingData& data,
                          const QpSolution& condensed_sol);

}  // namespace nmpc::qp
