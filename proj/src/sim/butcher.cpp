#include "nmpc/sim/butcher.hpp"

#include <cmath>

#include "nmpc/common/error.hpp"

namespace nmpc::sim {

bool ButcherTableau::explicit_scheme() const {
  for (int i = 0; i < stages; ++i)
    for (int j = i; j < stages; ++j)
      if (a(i, j) != 0.0) return false;
  return true;
}

void ButcherTableau::validate() const {
  if (a.rows() != stages || a.cols() != stages || static_cast<int>(b.size()) != stages ||
      static_cast<int>(c.size()) != stages)
    throw DimensionError("butcher tableau: inconsistent sizes");
  double sum = 0.0;
  for (double w : b) sum += w;
  if (std::abs(sum - 1.0) > 1e-14) throw InvalidInputError("butcher tableau: sum(b) != 1");
}

ButcherTableau erk_euler() {
  ButcherTableau t;
  t.stages = 1;
  t.a = DenseMatrix(1, 1);
  t.b = {1.0};
  t.c = {0.0};
  t.order = 1;
  return t;
}

ButcherTableau erk_heun() {
  ButcherTableau t;
  t.stages = 2;
  t.a = DenseMatrix(2, 2);
  t.a(1, 0) = 1.0;
  t.b = {0.5, 0.5};
  t.c = {0.0, 1.0};
  t.order = 2;
  return t;
}

ButcherTableau erk_rk4() {
  ButcherTableau t;
  t.stages = 4;
  t.a = DenseMatrix(4, 4);
  t.a(1, 0) = 0.5;
  t.a(2, 1) = 0.5;
  t.a(3, 2) = 1.0;
  t.b = {1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0};
  t.c = {0.0, 0.5, 0.5, 1.0};
  t.order = 4;
  return t;
}

ButcherTableau gl_tableau(int stages) {
  ButcherTableau t;
  t.stages = stages;
  switch (stages) {
    case 1:
      t.a = DenseMatrix(1, 1, {0.5});
      t.b = {1.0};
      t.c = {0.5};
      t.order = 2;
      break;
    case 2: {
      const double r = std::sqrt(3.0) / 6.0;
      t.a = DenseMatrix(2, 2, {0.25, 0.25 - r, 0.25 + r, 0.25});
      t.b = {0.5, 0.5};
      t.c = {0.5 - r, 0.5 + r};
      t.order = 4;
      break;
    }
    case 3: {
      const double r15 = std::sqrt(15.0);
      t.a = DenseMatrix(3, 3,
                        {5.0 / 36.0, 2.0 / 9.0 - r15 / 15.0, 5.0 / 36.0 - r15 / 30.0,
                         5.0 / 36.0 + r15 / 24.0, 2.0 / 9.0, 5.0 / 36.0 - r15 / 24.0,
                         5.0 / 36.0 + r15 / 30.0, 2.0 / 9.0 + r15 / 15.0, 5.0 / 36.0});
      t.b = {5.0 / 18.0, 4.0 / 9.0, 5.0 / 18.0};
      t.c = {0.5 - r15 / 10.0, 0.5, 0.5 + r15 / 10.0};
      t.order = 6;
      break;
    }
    default:
      throw InvalidInputError("gl_tableau: stages must be 1, 2 or 3");
  }
  t.validate();
  return t;
}

}  // namespace nmpc::sim
