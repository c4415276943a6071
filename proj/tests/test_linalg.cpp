#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include <Eigen/Dense>

#include "perffl/linalg.hpp"
#include "perffl/rng.hpp"

using namespace perffl;

namespace {

DenseMatrix random_matrix(Rng& rng, std::size_t m, std::size_t n) {
  DenseMatrix a(m, n);
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) a(r, c) = rng.normal();
  return a;
}

Eigen::MatrixXd to_eigen(const DenseMatrix& a) {
  Eigen::MatrixXd e(a.rows(), a.cols());
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t c = 0; c < a.cols(); ++c) e(r, c) = a(r, c);
  return e;
}

double max_diff(const DenseMatrix& a, const Eigen::MatrixXd& b) {
  double m = 0.0;
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t c = 0; c < a.cols(); ++c) m = std::max(m, std::abs(a(r, c) - b(r, c)));
  return m;
}

double rel_err(const DenseMatrix& a, const DenseMatrix& b) {
  return (a - b).frobenius_norm() / std::max(1.0, b.frobenius_norm());
}

}  // namespace

TEST_CASE("pseudo_inverse small cases") {
  const DenseMatrix d = DenseMatrix::from_rows({{2.0, 0.0}, {0.0, 0.0}});
  const DenseMatrix pd = pseudo_inverse(d);
  CHECK(pd(0, 0) == doctest::Approx(0.5));
  CHECK(pd(0, 1) == doctest::Approx(0.0));
  CHECK(pd(1, 0) == doctest::Approx(0.0));
  CHECK(pd(1, 1) == doctest::Approx(0.0));

  const DenseMatrix row = DenseMatrix::from_rows({{-0.2, -0.1}});
  const DenseMatrix pr = pseudo_inverse(row);
  REQUIRE(pr.rows() == 2);
  REQUIRE(pr.cols() == 1);
  CHECK(pr(0, 0) == doctest::Approx(-4.0));
  CHECK(pr(1, 0) == doctest::Approx(-2.0));
}

TEST_CASE("singular values match Eigen") {
  Rng rng(11, 0, "svd");
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t m = 1 + rng.below(8), n = 1 + rng.below(8);
    const DenseMatrix a = random_matrix(rng, m, n);
    const Svd s = svd(a);
    const Eigen::JacobiSVD<Eigen::MatrixXd> e(to_eigen(a));
    REQUIRE(s.S.size() == static_cast<std::size_t>(e.singularValues().size()));
    for (std::size_t k = 0; k < s.S.size(); ++k)
      CHECK(s.S[k] == doctest::Approx(e.singularValues()(k)).epsilon(1e-10));
    // reconstruction
    DenseMatrix us = s.U;
    for (std::size_t r = 0; r < us.rows(); ++r)
      for (std::size_t k = 0; k < us.cols(); ++k) us(r, k) *= s.S[k];
    CHECK(rel_err(us * s.V.transpose(), a) < 1e-12);
  }
}

TEST_CASE("pseudo_inverse matches Eigen's complete orthogonal decomposition") {
  Rng rng(12, 0, "pinv");
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t m = 1 + rng.below(6), n = 1 + rng.below(6);
    const DenseMatrix a = random_matrix(rng, m, n);
    const Eigen::MatrixXd oracle = to_eigen(a).completeOrthogonalDecomposition().pseudoInverse();
    CHECK(max_diff(pseudo_inverse(a), oracle) < 1e-9);
  }
}

TEST_CASE("Penrose identities") {
  Rng rng(13, 0, "penrose");
  for (int trial = 0; trial < 600; ++trial) {
    const std::size_t m = 1 + rng.below(6), n = 1 + rng.below(6);
    DenseMatrix a = random_matrix(rng, m, n);
    // force rank deficiency by copying a row or a column
    if (trial % 3 == 0 && m > 1)
      for (std::size_t c = 0; c < n; ++c) a(m - 1, c) = a(0, c);
    if (trial % 3 == 1 && n > 1)
      for (std::size_t r = 0; r < m; ++r) a(r, n - 1) = -2.0 * a(r, 0);
    const DenseMatrix p = pseudo_inverse(a);
    CHECK(rel_err(a * p * a, a) < 1e-8);
    CHECK(rel_err(p * a * p, p) < 1e-8);
    CHECK(rel_err((a * p).transpose(), a * p) < 1e-8);
    CHECK(rel_err((p * a).transpose(), p * a) < 1e-8);
  }
}

TEST_CASE("pseudo_inverse is an involution on full-rank matrices") {
  Rng rng(14, 0, "inv");
  for (int trial = 0; trial < 30; ++trial) {
    const DenseMatrix a = random_matrix(rng, 4, 3);
    CHECK(rel_err(pseudo_inverse(pseudo_inverse(a)), a) < 1e-6);
  }
}

TEST_CASE("top_right_singular_vector") {
  auto v = top_right_singular_vector(DenseMatrix::from_rows({{1, 0}, {-1, 0}, {2, 0}}));
  REQUIRE(v);
  CHECK((*v)[0] == doctest::Approx(1.0));
  CHECK((*v)[1] == doctest::Approx(0.0));

  v = top_right_singular_vector(DenseMatrix::identity(2));
  REQUIRE(v);
  CHECK((*v)[0] == doctest::Approx(1.0));
  CHECK((*v)[1] == doctest::Approx(0.0));

  v = top_right_singular_vector(DenseMatrix::from_rows({{3, 4}}));
  REQUIRE(v);
  CHECK((*v)[0] == doctest::Approx(0.6));
  CHECK((*v)[1] == doctest::Approx(0.8));

  CHECK_FALSE(top_right_singular_vector(DenseMatrix(3, 2)).has_value());
}

TEST_CASE("top singular direction is maximal") {
  Rng rng(15, 0, "top");
  for (int trial = 0; trial < 20; ++trial) {
    const DenseMatrix a = random_matrix(rng, 6, 4);
    const auto v = top_right_singular_vector(a);
    REQUIRE(v);
    CHECK(norm(*v) == doctest::Approx(1.0));
    const double best = norm(a.apply(*v));
    for (int k = 0; k < 100; ++k) {
      Vector u(4);
      for (double& x : u) x = rng.normal();
      const double nu = norm(u);
      for (double& x : u) x /= nu;
      CHECK(best >= norm(a.apply(u)) - 1e-12);
    }
    // sign canonicalization: first nonzero entry positive
    for (double x : *v)
      if (x != 0.0) {
        CHECK(x > 0.0);
        break;
      }
  }
}

TEST_CASE("matrix helpers") {
  const DenseMatrix a = DenseMatrix::from_rows({{1, 2, 3}, {4, 5, 6}});
  CHECK(a.transpose()(2, 1) == 6.0);
  CHECK(a.apply(Vector{1, 0, -1}) == Vector{-2.0, -2.0});
  CHECK(a.apply_transpose(Vector{1, 1}) == Vector{5.0, 7.0, 9.0});
  CHECK(a.frobenius_norm() == doctest::Approx(std::sqrt(91.0)));
  CHECK_THROWS(a * a);
}
