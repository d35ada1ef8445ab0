#pragma once

#include "nmpc/linalg/dense_matrix.hpp"

namespace nmpc::sim {

using linalg::DenseMatrix;
using linalg::Vec;

struct ButcherTableau {
  int stages = 0;
  DenseMatrix a;  // stages x stages
  Vec b;          // weights
  Vec c;          // nodes
  int order = 0;

  bool explicit_scheme() const;
  // Checks the shape invariants and sum(b) == 1 up to 1e-14.
  void validate() const;
};

ButcherTableau erk_euler();
ButcherTableau erk_heun();
ButcherTableau erk_rk4();

// Gauss-Legendre collocation tableau, s in {1, 2, 3}, order 2s.
ButcherTableau gl_tableau(int stages);

}  // namespace nmpc::sim
