#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <numeric>
#include <random>
#include <vector>

#include "brute_assignment.hpp"
#include "mgcd/cluster.hpp"
#include "mgcd/linalg.hpp"
#include "test_util.hpp"

using mgcd::Assignment;
using mgcd::ClusterAccuracy;
using mgcd::ClusterResult;
using mgcd::DenseMatrix;

namespace {

double assignment_cost(const DenseMatrix& cost, const std::vector<int>& row_to_col) {
  double total = 0.0;
  for (std::size_t i = 0; i < row_to_col.size(); ++i) {
    if (row_to_col[i] >= 0) total += cost(i, static_cast<std::size_t>(row_to_col[i]));
  }
  return total;
}

// unit rows scattered around unit-norm anchors, one anchor per class.
DenseMatrix blob_data(const DenseMatrix& anchors, std::size_t per_class, double noise,
                      std::uint64_t seed, std::vector<int>* truth) {
  std::mt19937_64 rng = testutil::rng(seed);
  std::normal_distribution<double> gauss(0.0, noise);
  const std::size_t k = anchors.rows();
  const std::size_t d = anchors.cols();
  DenseMatrix z(k * per_class, d);
  truth->assign(k * per_class, 0);
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t s = 0; s < per_class; ++s) {
      const std::size_t row = c * per_class + s;
      double norm2 = 0.0;
      for (std::size_t col = 0; col < d; ++col) {
        z(row, col) = anchors(c, col) + gauss(rng);
        norm2 += z(row, col) * z(row, col);
      }
      const double norm = std::sqrt(norm2);
      for (std::size_t col = 0; col < d; ++col) z(row, col) /= norm;
      (*truth)[row] = static_cast<int>(c);
    }
  }
  return z;
}

}  // namespace

TEST_CASE("hungarian fixed examples") {
  Assignment a = mgcd::hungarian(DenseMatrix{{1, 2}, {2, 1}});
  CHECK(a.row_to_col == std::vector<int>{0, 1});
  CHECK(a.total_cost == doctest::Approx(2.0));

  Assignment b = mgcd::hungarian(DenseMatrix{{4, 1}, {1, 4}});
  CHECK(b.row_to_col == std::vector<int>{1, 0});
  CHECK(b.total_cost == doctest::Approx(2.0));
}

TEST_CASE("hungarian rectangular shapes") {
  // wide: every row is matched.
  Assignment wide = mgcd::hungarian(DenseMatrix{{1, 0, 2}, {2, 3, 0}});
  CHECK(wide.row_to_col == std::vector<int>{1, 2});
  CHECK(wide.total_cost == doctest::Approx(0.0));

  // tall: one row stays unmatched; -1 sorts before any column.
  Assignment tall = mgcd::hungarian(DenseMatrix{{1, 0}, {2, 3}, {0, 2}});
  CHECK(tall.row_to_col == std::vector<int>{1, -1, 0});
  CHECK(tall.total_cost == doctest::Approx(0.0));
}

TEST_CASE("hungarian recovers planted permutations") {
  std::mt19937_64 rng = testutil::rng(11);
  for (int rep = 0; rep < 100; ++rep) {
    const std::size_t n = 2 + static_cast<std::size_t>(rng() % 7);
    std::vector<int> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    DenseMatrix cost(n, n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        cost(i, j) = (static_cast<int>(j) == perm[i]) ? 0.0 : 1.0;
      }
    }
    Assignment a = mgcd::hungarian(cost);
    CHECK(a.total_cost == doctest::Approx(0.0));
    for (std::size_t i = 0; i < n; ++i) CHECK(a.row_to_col[i] == perm[i]);
  }
}

TEST_CASE("hungarian matches the brute-force oracle") {
  std::mt19937_64 rng = testutil::rng(12);
  for (int rep = 0; rep < 200; ++rep) {
    const std::size_t n = 1 + static_cast<std::size_t>(rng() % 7);
    const std::size_t m = 1 + static_cast<std::size_t>(rng() % 7);
    DenseMatrix cost(n, m);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < m; ++j) {
        // small integer range so exact ties occur routinely
        cost(i, j) = static_cast<double>(rng() % 6);
      }
    }
    const Assignment got = mgcd::hungarian(cost);
    const testutil::BruteResult want = testutil::brute_assignment(cost);
    CHECK(got.total_cost == doctest::Approx(want.total_cost).epsilon(1e-12));
    CHECK(got.row_to_col == want.row_to_col);
  }
}

TEST_CASE("hungarian tie-break picks the lexicographically smallest optimum") {
  Assignment zeros = mgcd::hungarian(DenseMatrix(3, 3));
  CHECK(zeros.row_to_col == std::vector<int>{0, 1, 2});

  DenseMatrix constant(4, 4);
  for (std::size_t i = 0; i < constant.size(); ++i) constant.data()[i] = 2.5;
  Assignment c = mgcd::hungarian(constant);
  CHECK(c.row_to_col == std::vector<int>{0, 1, 2, 3});
}

TEST_CASE("hungarian beats identity and random permutations") {
  std::mt19937_64 rng = testutil::rng(13);
  const std::size_t n = 8;
  DenseMatrix cost = testutil::random_matrix(n, n, rng, -5.0, 5.0);
  const Assignment a = mgcd::hungarian(cost);

  std::vector<int> identity(n);
  std::iota(identity.begin(), identity.end(), 0);
  CHECK(a.total_cost <= assignment_cost(cost, identity) + 1e-9);
  for (int rep = 0; rep < 100; ++rep) {
    std::vector<int> perm = identity;
    std::shuffle(perm.begin(), perm.end(), rng);
    CHECK(a.total_cost <= assignment_cost(cost, perm) + 1e-9);
  }
}

TEST_CASE("hungarian input validation") {
  CHECK_THROWS_AS(mgcd::hungarian(DenseMatrix()), std::invalid_argument);
  DenseMatrix bad(2, 2);
  bad(0, 0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(mgcd::hungarian(bad), std::invalid_argument);
}

TEST_CASE("cluster_accuracy exact and relabeled predictions") {
  const std::vector<int> truth{0, 0, 1, 1, 2, 2};
  const std::vector<std::uint8_t> mask{1, 1, 1, 1, 0, 0};

  ClusterAccuracy same = mgcd::cluster_accuracy(truth, truth, mask);
  CHECK(same.all == doctest::Approx(1.0));
  CHECK(same.old_classes == doctest::Approx(1.0));
  CHECK(same.new_classes == doctest::Approx(1.0));

  // permuted cluster ids, same partition
  const std::vector<int> relabeled{7, 7, 3, 3, 5, 5};
  ClusterAccuracy perm = mgcd::cluster_accuracy(relabeled, truth, mask);
  CHECK(perm.all == doctest::Approx(1.0));
  CHECK(perm.old_classes == doctest::Approx(1.0));
  CHECK(perm.new_classes == doctest::Approx(1.0));
}

TEST_CASE("cluster_accuracy hand-enumerated contingency") {
  // one sample of class 0 strays into the cluster matched to class 1
  const std::vector<int> truth{0, 0, 0, 1, 1, 1};
  const std::vector<int> pred{4, 4, 9, 9, 9, 9};
  const std::vector<std::uint8_t> mask{1, 1, 1, 0, 0, 0};
  ClusterAccuracy acc = mgcd::cluster_accuracy(pred, truth, mask);
  CHECK(acc.all == doctest::Approx(5.0 / 6.0));
  CHECK(acc.old_classes == doctest::Approx(2.0 / 3.0));
  CHECK(acc.new_classes == doctest::Approx(1.0));

  // more clusters than classes: the unmatched cluster scores zero
  const std::vector<int> pred3{5, 5, 7, 7, 9, 9};
  const std::vector<int> truth2{0, 0, 0, 1, 1, 1};
  ClusterAccuracy over = mgcd::cluster_accuracy(pred3, truth2, mask);
  CHECK(over.all == doctest::Approx(4.0 / 6.0));
}

TEST_CASE("cluster_accuracy is invariant to prediction relabeling") {
  std::mt19937_64 rng = testutil::rng(21);
  for (int rep = 0; rep < 30; ++rep) {
    const std::size_t n = 40;
    std::vector<int> truth(n), pred(n);
    std::vector<std::uint8_t> mask(n);
    for (std::size_t i = 0; i < n; ++i) {
      truth[i] = static_cast<int>(rng() % 5);
      pred[i] = static_cast<int>(rng() % 6);
      mask[i] = truth[i] < 3 ? 1 : 0;
    }
    ClusterAccuracy base = mgcd::cluster_accuracy(pred, truth, mask);

    std::vector<int> ids(6);
    std::iota(ids.begin(), ids.end(), 0);
    std::shuffle(ids.begin(), ids.end(), rng);
    std::vector<int> shuffled(n);
    for (std::size_t i = 0; i < n; ++i) shuffled[i] = 100 + ids[static_cast<std::size_t>(pred[i])];
    ClusterAccuracy moved = mgcd::cluster_accuracy(shuffled, truth, mask);
    // total accuracy is relabeling-invariant; the old/new split can shift
    // between equally optimal matchings, so only its mixture is pinned.
    CHECK(moved.all == doctest::Approx(base.all).epsilon(1e-12));
    std::size_t n_old = 0;
    for (std::uint8_t m : mask) n_old += m;
    const double n_new = static_cast<double>(n - n_old);
    const double mix = (static_cast<double>(n_old) * moved.old_classes + n_new * moved.new_classes) /
                       static_cast<double>(n);
    CHECK(moved.all == doctest::Approx(mix).epsilon(1e-12));
  }
}

TEST_CASE("cluster_accuracy mixture identity") {
  std::mt19937_64 rng = testutil::rng(22);
  for (int rep = 0; rep < 30; ++rep) {
    const std::size_t n = 50;
    std::vector<int> truth(n), pred(n);
    std::vector<std::uint8_t> mask(n);
    std::size_t n_old = 0;
    for (std::size_t i = 0; i < n; ++i) {
      truth[i] = static_cast<int>(rng() % 4);
      pred[i] = static_cast<int>(rng() % 4);
      mask[i] = (rng() % 2) ? 1 : 0;
      n_old += mask[i];
    }
    ClusterAccuracy acc = mgcd::cluster_accuracy(pred, truth, mask);
    const double n_new = static_cast<double>(n - n_old);
    const double mixed = (static_cast<double>(n_old) * acc.old_classes + n_new * acc.new_classes) /
                         static_cast<double>(n);
    CHECK(acc.all == doctest::Approx(mixed).epsilon(1e-12));
    CHECK(acc.all >= 0.0);
    CHECK(acc.all <= 1.0);
  }
}

TEST_CASE("cluster_accuracy input validation") {
  CHECK_THROWS_AS(mgcd::cluster_accuracy({}, {}, {}), std::invalid_argument);
  CHECK_THROWS_AS(mgcd::cluster_accuracy({0, 1}, {0}, {1, 1}), std::invalid_argument);
  CHECK_THROWS_AS(mgcd::cluster_accuracy({0, 1}, {0, 1}, {1}), std::invalid_argument);
}

TEST_CASE("ss_kmeans recovers well-separated orthogonal blobs") {
  const DenseMatrix anchors = DenseMatrix::identity(2);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::vector<int> truth;
    DenseMatrix z = blob_data(anchors, 20, 0.05, 100 + seed, &truth);
    // label a few samples of class 0 only; class 1 must be discovered
    const std::vector<std::size_t> labeled_idx{0, 1, 2};
    const std::vector<int> labels{0, 0, 0};
    ClusterResult res = mgcd::ss_kmeans(z, labeled_idx, labels, 2, 300, seed);

    std::vector<std::uint8_t> mask(truth.size(), 0);
    for (std::size_t i = 0; i < truth.size(); ++i) mask[i] = truth[i] == 0 ? 1 : 0;
    ClusterAccuracy acc = mgcd::cluster_accuracy(res.assignments, truth, mask);
    CHECK(acc.all == doctest::Approx(1.0));
  }
}

TEST_CASE("ss_kmeans pins every labeled sample to its class cluster") {
  std::mt19937_64 rng = testutil::rng(31);
  DenseMatrix z = testutil::random_unit_rows(60, 8, rng);
  std::vector<std::size_t> labeled_idx;
  std::vector<int> labels;
  for (std::size_t i = 0; i < 60; i += 4) {
    labeled_idx.push_back(i);
    labels.push_back(static_cast<int>(i / 20));  // three classes
  }
  ClusterResult res = mgcd::ss_kmeans(z, labeled_idx, labels, 5, 300, 7);
  for (std::size_t i = 0; i < labeled_idx.size(); ++i) {
    CHECK(res.assignments[labeled_idx[i]] == labels[i]);
  }
}

TEST_CASE("ss_kmeans with everything labeled reproduces the labels") {
  const DenseMatrix anchors = DenseMatrix::identity(3);
  std::vector<int> truth;
  DenseMatrix z = blob_data(anchors, 10, 0.1, 41, &truth);
  std::vector<std::size_t> labeled_idx(z.rows());
  std::iota(labeled_idx.begin(), labeled_idx.end(), 0);
  ClusterResult res = mgcd::ss_kmeans(z, labeled_idx, truth, 3, 300, 0);
  CHECK(res.assignments == truth);
}

TEST_CASE("ss_kmeans objective is non-increasing and centroids stay unit") {
  std::mt19937_64 rng = testutil::rng(32);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    DenseMatrix z = testutil::random_unit_rows(80, 6, rng);
    std::vector<std::size_t> labeled_idx{0, 1, 2, 3};
    std::vector<int> labels{0, 0, 1, 1};
    ClusterResult res = mgcd::ss_kmeans(z, labeled_idx, labels, 6, 300, seed);

    REQUIRE(!res.objective_trace.empty());
    for (std::size_t t = 1; t < res.objective_trace.size(); ++t) {
      CHECK(res.objective_trace[t] <= res.objective_trace[t - 1] + 1e-9);
    }
    CHECK(res.iterations <= 300);
    REQUIRE(res.centroids.rows() == 6);
    for (std::size_t c = 0; c < res.centroids.rows(); ++c) {
      double norm2 = 0.0;
      for (std::size_t col = 0; col < res.centroids.cols(); ++col)
        norm2 += res.centroids(c, col) * res.centroids(c, col);
      CHECK(std::sqrt(norm2) == doctest::Approx(1.0).epsilon(1e-10));
    }
    for (int a : res.assignments) {
      CHECK(a >= 0);
      CHECK(a < 6);
    }
  }
}

TEST_CASE("ss_kmeans survives forced empty clusters") {
  // two tight blobs but K = 4: two clusters must be re-seeded at least once
  const DenseMatrix anchors = DenseMatrix::identity(2);
  std::vector<int> truth;
  DenseMatrix z = blob_data(anchors, 12, 0.02, 55, &truth);
  ClusterResult res = mgcd::ss_kmeans(z, {0, 12}, {0, 1}, 4, 300, 3);
  REQUIRE(res.centroids.rows() == 4);
  for (std::size_t c = 0; c < 4; ++c) {
    double norm2 = 0.0;
    for (std::size_t col = 0; col < res.centroids.cols(); ++col)
      norm2 += res.centroids(c, col) * res.centroids(c, col);
    CHECK(std::sqrt(norm2) == doctest::Approx(1.0).epsilon(1e-10));
  }
  for (std::size_t t = 1; t < res.objective_trace.size(); ++t) {
    CHECK(res.objective_trace[t] <= res.objective_trace[t - 1] + 1e-9);
  }
}

TEST_CASE("ss_kmeans deterministic for a fixed seed") {
  std::mt19937_64 rng = testutil::rng(33);
  DenseMatrix z = testutil::random_unit_rows(50, 5, rng);
  ClusterResult a = mgcd::ss_kmeans(z, {0, 1}, {0, 1}, 4, 300, 99);
  ClusterResult b = mgcd::ss_kmeans(z, {0, 1}, {0, 1}, 4, 300, 99);
  CHECK(a.assignments == b.assignments);
  CHECK(a.objective_trace == b.objective_trace);
  CHECK(a.centroids.values() == b.centroids.values());
}

TEST_CASE("ss_kmeans input validation") {
  DenseMatrix z = DenseMatrix::identity(4);
  CHECK_THROWS_AS(mgcd::ss_kmeans(DenseMatrix(), {}, {}, 1, 10, 0), std::invalid_argument);
  CHECK_THROWS_AS(mgcd::ss_kmeans(z, {}, {}, 5, 10, 0), std::invalid_argument);  // k > n
  CHECK_THROWS_AS(mgcd::ss_kmeans(z, {0}, {}, 2, 10, 0), std::invalid_argument);
  CHECK_THROWS_AS(mgcd::ss_kmeans(z, {9}, {0}, 2, 10, 0), std::invalid_argument);
  CHECK_THROWS_AS(mgcd::ss_kmeans(z, {0}, {3}, 2, 10, 0), std::invalid_argument);  // label >= k
}

TEST_CASE("estimate_k finds the planted class count") {
  // five orthogonal classes, two of them partially labeled
  const DenseMatrix anchors = DenseMatrix::identity(5);
  int exact_hits = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    std::vector<int> truth;
    DenseMatrix z = blob_data(anchors, 16, 0.05, 200 + seed, &truth);
    std::vector<std::size_t> labeled_idx;
    std::vector<int> labels;
    for (std::size_t i = 0; i < z.rows(); ++i) {
      if (truth[i] < 2 && i % 2 == 0) {
        labeled_idx.push_back(i);
        labels.push_back(truth[i]);
      }
    }
    const std::size_t k_hat = mgcd::estimate_k(z, labeled_idx, labels, 2, 10, seed);
    CHECK(k_hat >= 4);
    CHECK(k_hat <= 6);
    if (k_hat == 5) ++exact_hits;
  }
  CHECK(exact_hits >= 4);
}

TEST_CASE("estimate_k ties break to the smallest candidate") {
  // identical points: every K scores the same, so k_min must win
  DenseMatrix z(12, 3);
  for (std::size_t i = 0; i < 12; ++i) z(i, 0) = 1.0;
  std::vector<std::size_t> labeled_idx{0, 1, 2, 3};
  std::vector<int> labels{0, 0, 1, 1};
  CHECK(mgcd::estimate_k(z, labeled_idx, labels, 2, 6, 17) == 2);
}

TEST_CASE("estimate_k respects the thread cap and stays deterministic") {
  const DenseMatrix anchors = DenseMatrix::identity(4);
  std::vector<int> truth;
  DenseMatrix z = blob_data(anchors, 10, 0.05, 77, &truth);
  std::vector<std::size_t> labeled_idx;
  std::vector<int> labels;
  for (std::size_t i = 0; i < z.rows(); ++i) {
    if (truth[i] < 2) {
      labeled_idx.push_back(i);
      labels.push_back(truth[i]);
    }
  }
  setenv("MANIFOLD_GCD_THREADS", "1", 1);
  const std::size_t serial = mgcd::estimate_k(z, labeled_idx, labels, 2, 8, 5);
  setenv("MANIFOLD_GCD_THREADS", "3", 1);
  const std::size_t wide = mgcd::estimate_k(z, labeled_idx, labels, 2, 8, 5);
  unsetenv("MANIFOLD_GCD_THREADS");
  CHECK(serial == wide);
}

TEST_CASE("estimate_k input validation") {
  DenseMatrix z = DenseMatrix::identity(4);
  CHECK_THROWS_AS(mgcd::estimate_k(z, {0}, {0}, 3, 2, 0), std::invalid_argument);
  CHECK_THROWS_AS(mgcd::estimate_k(z, {0}, {0}, 1, 9, 0), std::invalid_argument);
  CHECK_THROWS_AS(mgcd::estimate_k(z, {0, 1}, {0, 1}, 1, 4, 0), std::invalid_argument);
}
