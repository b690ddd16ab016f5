#include <doctest.h>

#include <cmath>

#include "bmax/matrix.hpp"
#include "support/oracles.hpp"

using namespace bmax;

TEST_CASE("cholesky_logdet on hand-checked matrices") {
  CHECK(cholesky_logdet(Matrix::identity(2)).logdet == doctest::Approx(0.0).epsilon(1e-12));

  Matrix d = Matrix::from_rows({{4.0, 0.0}, {0.0, 9.0}});
  CHECK(cholesky_logdet(d).logdet == doctest::Approx(std::log(36.0)).epsilon(1e-12));

  Matrix a = Matrix::from_rows({{2.0, 1.0}, {1.0, 2.0}});
  CHECK(cholesky_logdet(a).logdet == doctest::Approx(std::log(3.0)).epsilon(1e-12));
}

TEST_CASE("cholesky reconstructs A + jitter I") {
  RngStream rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    RngStream t = rng.child(trial);
    const Matrix a = oracle::random_spd(5, t);
    const CholeskyResult ch = cholesky_logdet(a, 0.0);
    const Matrix rebuilt = matmul_nt(ch.lower, ch.lower);
    CHECK(norm_inf(sub(rebuilt, a)) < 1e-8);
  }
}

TEST_CASE("cholesky matches brute-force determinants on random PSD matrices") {
  RngStream rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    RngStream t2 = rng.child(trial);
    const Matrix a2 = oracle::random_spd(2, t2);
    CHECK(cholesky_logdet(a2).logdet ==
          doctest::Approx(std::log(oracle::det2(a2))).epsilon(1e-8));
    RngStream t3 = rng.child(1000 + trial);
    const Matrix a3 = oracle::random_spd(3, t3);
    CHECK(cholesky_logdet(a3).logdet ==
          doctest::Approx(std::log(oracle::det3(a3))).epsilon(1e-8));
  }
}

TEST_CASE("cholesky input validation") {
  CHECK_THROWS_AS(cholesky_logdet(Matrix(2, 3)), ShapeError);
  Matrix asym = Matrix::from_rows({{1.0, 0.5}, {0.2, 1.0}});
  CHECK_THROWS_AS(cholesky_logdet(asym), ShapeError);
  // indefinite matrix cannot be rescued by the capped jitter
  Matrix neg = Matrix::from_rows({{-1.0, 0.0}, {0.0, -1.0}});
  CHECK_THROWS_AS(cholesky_logdet(neg), NumericError);
}

TEST_CASE("jitter escalation factors a singular PSD matrix") {
  // rank-1 outer product
  Matrix a = outer({1.0, 2.0}, {1.0, 2.0});
  const CholeskyResult ch = cholesky_logdet(a, 0.0);
  CHECK(ch.jitter_used > 0.0);
  CHECK(ch.jitter_used <= 1e-3);
  Matrix target = a;
  target(0, 0) += ch.jitter_used;
  target(1, 1) += ch.jitter_used;
  CHECK(norm_inf(sub(matmul_nt(ch.lower, ch.lower), target)) < 1e-8);
}

TEST_CASE("solve_psd on hand cases and residual check") {
  const Matrix b1 = Matrix::column_vector({3.0, -2.0});
  CHECK(norm_inf(sub(solve_psd(Matrix::identity(2), b1), b1)) < 1e-12);

  Matrix two_i = scale(Matrix::identity(2), 2.0);
  const Matrix x = solve_psd(two_i, Matrix::column_vector({2.0, 4.0}));
  CHECK(x(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(x(1, 0) == doctest::Approx(2.0).epsilon(1e-12));

  RngStream rng(23);
  const Matrix a = oracle::random_spd(8, rng, 1.0);
  Matrix b(8, 3);
  for (double& v : b.data()) v = rng.normal();
  const Matrix sol = solve_psd(a, b);
  CHECK(norm_inf(sub(matmul(a, sol), b)) <= 1e-8 * (1.0 + norm_inf(b)));
}

TEST_CASE("shape checks reject mismatched operands") {
  CHECK_THROWS_AS(add(Matrix(2, 2), Matrix(2, 3)), ShapeError);
  CHECK_THROWS_AS(matmul(Matrix(2, 3), Matrix(2, 3)), ShapeError);
  CHECK_THROWS_AS(matvec(Matrix(2, 3), Vector{1.0}), ShapeError);
}

TEST_CASE("symmetric eigenvalues and PSD clipping") {
  Matrix d = Matrix::from_rows({{3.0, 0.0}, {0.0, -1.0}});
  const Vector eig = symmetric_eigenvalues(d);
  CHECK(eig[0] == doctest::Approx(-1.0));
  CHECK(eig[1] == doctest::Approx(3.0));

  const Matrix clipped = clip_psd(d, 0.0);
  CHECK(symmetric_eigenvalues(clipped)[0] >= -1e-12);
}
