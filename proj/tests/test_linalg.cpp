#include <cmath>

#include "doctest.h"
#include "gridveil/error.hpp"
#include "gridveil/linalg.hpp"
#include "gridveil/random.hpp"

using namespace gridveil;

TEST_CASE("matrix products against hand values") {
  const Matrix a{{1, 2}, {3, 4}};
  const Matrix b{{0, 1}, {1, 0}};
  CHECK(a * b == Matrix{{2, 1}, {4, 3}});
  CHECK(a.transpose() == Matrix{{1, 3}, {2, 4}});
  CHECK(a * Vector{1, 1} == Vector{3, 7});
  CHECK(a.trace() == 5.0);
  CHECK(a.symmetrized() == Matrix{{1, 2.5}, {2.5, 4}});
}

TEST_CASE("Cholesky solves and inverts SPD systems") {
  const Matrix a{{4, 2, 0.6}, {2, 5, 1}, {0.6, 1, 3}};
  const Cholesky c(a);
  const Matrix& l = c.factor();
  CHECK(max_abs_diff(l * l.transpose(), a) < 1e-14);
  const Vector x{1, -2, 0.5};
  const Vector sol = c.solve(a * x);
  for (std::size_t i = 0; i < 3; ++i) CHECK(sol[i] == doctest::Approx(x[i]).epsilon(1e-13));
  CHECK(max_abs_diff(a * c.inverse(), Matrix::identity(3)) < 1e-14);
}

TEST_CASE("Cholesky rejects indefinite input") {
  CHECK_THROWS_AS(Cholesky(Matrix{{1, 2}, {2, 1}}), Error);
}

TEST_CASE("symmetric eigenvalues of a known spectrum") {
  // Rotation of diag(1, 2, 5).
  const double c = std::cos(0.3), s = std::sin(0.3);
  const Matrix q{{c, -s, 0}, {s, c, 0}, {0, 0, 1}};
  const Matrix a = q * Matrix::diagonal(Vector{5, 1, 2}) * q.transpose();
  const Vector ev = symmetric_eigenvalues(a);
  CHECK(ev[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(ev[1] == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(ev[2] == doctest::Approx(5.0).epsilon(1e-12));
}

TEST_CASE("random generator is reproducible and roughly standard normal") {
  Rng a(5), b(5);
  double sum = 0.0, sq = 0.0;
  const int n = 200000;
  bool same = true;
  for (int i = 0; i < n; ++i) {
    const double x = a.normal();
    same = same && x == b.normal();
    sum += x;
    sq += x * x;
  }
  CHECK(same);
  CHECK(std::abs(sum / n) < 0.01);
  CHECK(std::abs(sq / n - 1.0) < 0.02);
  CHECK(derive_seed(1, 1) != derive_seed(1, 2));
  CHECK(derive_seed(1, 1) != derive_seed(2, 1));
}
