#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "mgcd/linalg.hpp"
#include "test_util.hpp"

using mgcd::DenseMatrix;

namespace {

DenseMatrix gram_identity_gap(const DenseMatrix& q) {
  // q^T q - I, for orthonormality checks
  DenseMatrix g = mgcd::matmul(mgcd::transpose(q), q);
  return mgcd::subtract(g, DenseMatrix::identity(g.rows()));
}

DenseMatrix reconstruct(const mgcd::SvdResult& f) {
  DenseMatrix us(f.u.rows(), f.u.cols());
  for (std::size_t i = 0; i < f.u.rows(); ++i)
    for (std::size_t j = 0; j < f.u.cols(); ++j) us(i, j) = f.u(i, j) * f.s[j];
  return mgcd::matmul(us, f.vt);
}

}  // namespace

TEST_CASE("dense matrix construction and validation") {
  DenseMatrix z(2, 3);
  CHECK(z.rows() == 2);
  CHECK(z.cols() == 3);
  for (double v : z.values()) CHECK(v == 0.0);

  DenseMatrix a{{1.0, 2.0}, {3.0, 4.0}};
  CHECK(a(1, 0) == 3.0);

  CHECK_THROWS_AS(DenseMatrix(2, 2, {1.0, 2.0, 3.0}), std::invalid_argument);
  CHECK_THROWS_AS(DenseMatrix(1, 2, {1.0, std::nan("")}), std::invalid_argument);
  CHECK_THROWS_AS(DenseMatrix(1, 1, {INFINITY}), std::invalid_argument);
  CHECK_THROWS_AS((DenseMatrix{{1.0, 2.0}, {3.0}}), std::invalid_argument);
}

TEST_CASE("dense kernels match naive references") {
  auto gen = testutil::rng(11);
  for (int rep = 0; rep < 20; ++rep) {
    const std::size_t m = 1 + gen() % 8, k = 1 + gen() % 8, n = 1 + gen() % 8;
    DenseMatrix a = testutil::random_matrix(m, k, gen);
    DenseMatrix b = testutil::random_matrix(k, n, gen);
    CHECK(testutil::max_abs_diff(mgcd::matmul(a, b), testutil::naive_matmul(a, b)) <=
          1e-12);
  }

  DenseMatrix a = testutil::random_matrix(5, 7, gen);
  CHECK(testutil::max_abs_diff(mgcd::matmul(DenseMatrix::identity(5), a), a) == 0.0);
  CHECK(testutil::max_abs_diff(mgcd::transpose(mgcd::transpose(a)), a) == 0.0);

  DenseMatrix twice = mgcd::add(a, a);
  CHECK(testutil::max_abs_diff(twice, mgcd::scale(a, 2.0)) <= 1e-15);
  CHECK(mgcd::frobenius_norm(mgcd::subtract(a, a)) == 0.0);

  DenseMatrix mid = mgcd::row_slice(a, 1, 4);
  CHECK(mid.rows() == 3);
  CHECK(mid(0, 0) == a(1, 0));
  CHECK(mid(2, 6) == a(3, 6));

  CHECK_THROWS_AS(mgcd::matmul(a, a), std::invalid_argument);
  CHECK_THROWS_AS(mgcd::add(a, mgcd::transpose(a)), std::invalid_argument);
  CHECK_THROWS_AS(mgcd::row_slice(a, 3, 2), std::invalid_argument);
  CHECK_THROWS_AS(mgcd::row_slice(a, 0, 6), std::invalid_argument);
}

TEST_CASE("svd on fixed matrices") {
  mgcd::SvdResult d = mgcd::svd(DenseMatrix{{3.0, 0.0}, {0.0, 1.0}});
  CHECK(d.s[0] == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(d.s[1] == doctest::Approx(1.0).epsilon(1e-12));

  mgcd::SvdResult p = mgcd::svd(DenseMatrix{{0.0, 1.0}, {1.0, 0.0}});
  CHECK(p.s[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(p.s[1] == doctest::Approx(1.0).epsilon(1e-12));

  CHECK_THROWS_AS(mgcd::svd(DenseMatrix()), std::invalid_argument);
}

TEST_CASE("svd invariants on random matrices") {
  auto gen = testutil::rng(23);
  for (int rep = 0; rep < 40; ++rep) {
    const std::size_t m = 1 + gen() % 10, n = 1 + gen() % 10;
    DenseMatrix a = testutil::random_matrix(m, n, gen, -2.0, 2.0);
    mgcd::SvdResult f = mgcd::svd(a);

    REQUIRE(f.s.size() == std::min(m, n));
    for (std::size_t i = 0; i < f.s.size(); ++i) {
      CHECK(f.s[i] >= 0.0);
      if (i) CHECK(f.s[i] <= f.s[i - 1]);
    }
    CHECK(testutil::rel_frobenius_diff(a, reconstruct(f)) <= 1e-10);
    CHECK(mgcd::frobenius_norm(gram_identity_gap(f.u)) <= 1e-10);
    CHECK(mgcd::frobenius_norm(gram_identity_gap(mgcd::transpose(f.vt))) <= 1e-10);

    // sign convention: first nonzero entry of each left singular vector
    for (std::size_t j = 0; j < f.u.cols(); ++j) {
      for (std::size_t i = 0; i < f.u.rows(); ++i) {
        if (f.u(i, j) != 0.0) {
          CHECK(f.u(i, j) > 0.0);
          break;
        }
      }
    }
  }
}

TEST_CASE("svd is deterministic") {
  auto gen = testutil::rng(31);
  DenseMatrix a = testutil::random_matrix(9, 6, gen);
  mgcd::SvdResult f1 = mgcd::svd(a);
  mgcd::SvdResult f2 = mgcd::svd(a);
  CHECK(f1.s == f2.s);
  CHECK(f1.u.values() == f2.u.values());
  CHECK(f1.vt.values() == f2.vt.values());
}

TEST_CASE("svd singular values agree with eigenvalues of the gram matrix") {
  auto gen = testutil::rng(37);
  for (int rep = 0; rep < 25; ++rep) {
    const std::size_t m = 2 + gen() % 8, n = 2 + gen() % 8;
    DenseMatrix a = testutil::random_matrix(m, n, gen);
    mgcd::SvdResult f = mgcd::svd(a);
    mgcd::SymEigResult e = mgcd::sym_eig(mgcd::matmul(mgcd::transpose(a), a));
    for (std::size_t i = 0; i < f.s.size(); ++i) {
      const double lam = std::max(0.0, e.eigenvalues[i]);
      CHECK(std::abs(f.s[i] - std::sqrt(lam)) <= 1e-8);
    }
  }
}

TEST_CASE("sym_eig on fixed matrices") {
  mgcd::SymEigResult id3 = mgcd::sym_eig(DenseMatrix::identity(3));
  for (double lam : id3.eigenvalues) CHECK(lam == doctest::Approx(1.0).epsilon(1e-14));

  mgcd::SymEigResult d = mgcd::sym_eig(
      DenseMatrix{{0.5, 0.0, 0.0}, {0.0, 0.01, 0.0}, {0.0, 0.0, 0.49}});
  CHECK(d.eigenvalues[0] == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(d.eigenvalues[1] == doctest::Approx(0.49).epsilon(1e-14));
  CHECK(d.eigenvalues[2] == doctest::Approx(0.01).epsilon(1e-14));

  CHECK_THROWS_AS(mgcd::sym_eig(DenseMatrix{{1.0, 2.0}}), std::invalid_argument);
  CHECK_THROWS_AS(mgcd::sym_eig(DenseMatrix{{1.0, 2.0}, {1.0, 3.0}}),
                  std::invalid_argument);
}

TEST_CASE("sym_eig invariants on autocorrelation-style inputs") {
  auto gen = testutil::rng(41);
  for (int rep = 0; rep < 20; ++rep) {
    const std::size_t n = 4 + gen() % 12, d = 3 + gen() % 9;
    DenseMatrix z = testutil::random_unit_rows(n, d, gen);
    DenseMatrix a = mgcd::scale(mgcd::matmul(mgcd::transpose(z), z), 1.0 / double(n));
    mgcd::SymEigResult e = mgcd::sym_eig(a);

    double trace = 0.0, lamsum = 0.0;
    for (std::size_t i = 0; i < d; ++i) trace += a(i, i);
    for (std::size_t i = 0; i + 1 < e.eigenvalues.size(); ++i)
      CHECK(e.eigenvalues[i] >= e.eigenvalues[i + 1]);
    for (double lam : e.eigenvalues) {
      CHECK(lam >= -1e-12);
      lamsum += lam;
    }
    CHECK(std::abs(lamsum - trace) <= 1e-10);
    CHECK(mgcd::frobenius_norm(gram_identity_gap(e.eigenvectors)) <= 1e-10);

    // residual of a*v = lambda*v per eigenpair
    DenseMatrix av = mgcd::matmul(a, e.eigenvectors);
    for (std::size_t j = 0; j < d; ++j)
      for (std::size_t i = 0; i < d; ++i)
        CHECK(std::abs(av(i, j) - e.eigenvalues[j] * e.eigenvectors(i, j)) <= 1e-9);
  }
}

TEST_CASE("nuclear norm on fixed matrices") {
  CHECK(mgcd::nuclear_norm(DenseMatrix::identity(3)) ==
        doctest::Approx(3.0).epsilon(1e-12));
  CHECK(mgcd::nuclear_norm(DenseMatrix{{1.0, 1.0}, {1.0, 1.0}}) ==
        doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("nuclear norm bounds over random unit-row matrices") {
  auto gen = testutil::rng(43);
  for (int rep = 0; rep < 1000; ++rep) {
    const std::size_t p = 1 + gen() % 32, d = 1 + gen() % 32;
    DenseMatrix z = testutil::random_unit_rows(p, d, gen);
    const double nn = mgcd::nuclear_norm(z);
    CHECK(nn >= 0.0);
    CHECK(nn <= std::sqrt(double(p) * double(std::min(p, d))) + 1e-9);
  }
}

TEST_CASE("nuclear norm is invariant under orthogonal transforms") {
  auto gen = testutil::rng(47);
  for (int rep = 0; rep < 15; ++rep) {
    const std::size_t m = 3 + gen() % 6, n = 3 + gen() % 6;
    DenseMatrix a = testutil::random_matrix(m, n, gen);
    const double base = mgcd::nuclear_norm(a);

    DenseMatrix ql = testutil::random_orthogonal(m, gen);
    DenseMatrix qr = testutil::random_orthogonal(n, gen);
    CHECK(std::abs(mgcd::nuclear_norm(mgcd::matmul(ql, a)) - base) <= 1e-9);
    CHECK(std::abs(mgcd::nuclear_norm(mgcd::matmul(a, qr)) - base) <= 1e-9);

    // row permutation is a special orthogonal transform; do one explicitly
    DenseMatrix perm(m, m);
    for (std::size_t i = 0; i < m; ++i) perm(i, (i + 1) % m) = 1.0;
    CHECK(std::abs(mgcd::nuclear_norm(mgcd::matmul(perm, a)) - base) <= 1e-9);
  }
}

TEST_CASE("frobenius norm identities") {
  CHECK(mgcd::frobenius_norm(DenseMatrix(4, 5)) == 0.0);
  CHECK(mgcd::frobenius_norm(DenseMatrix::identity(9)) ==
        doctest::Approx(3.0).epsilon(1e-14));

  auto gen = testutil::rng(53);
  DenseMatrix a = testutil::random_matrix(7, 4, gen);
  mgcd::SvdResult f = mgcd::svd(a);
  double ssq = 0.0;
  for (double s : f.s) ssq += s * s;
  CHECK(std::abs(mgcd::frobenius_norm(a) - std::sqrt(ssq)) <= 1e-10);
}
