#pragma once

// shared helpers for the test suites: seeded random matrices and the naive
// reference kernels the library implementations are checked against.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "mgcd/linalg.hpp"

namespace testutil {

inline std::mt19937_64 rng(std::uint64_t seed) { return std::mt19937_64(seed); }

inline mgcd::DenseMatrix random_matrix(std::size_t rows, std::size_t cols,
                                       std::mt19937_64& gen, double lo = -1.0,
                                       double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  mgcd::DenseMatrix m(rows, cols);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) m(i, j) = dist(gen);
  return m;
}

inline mgcd::DenseMatrix random_gaussian(std::size_t rows, std::size_t cols,
                                         std::mt19937_64& gen, double sigma = 1.0) {
  std::normal_distribution<double> dist(0.0, sigma);
  mgcd::DenseMatrix m(rows, cols);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) m(i, j) = dist(gen);
  return m;
}

// rows drawn uniformly on the unit sphere
inline mgcd::DenseMatrix random_unit_rows(std::size_t rows, std::size_t cols,
                                          std::mt19937_64& gen) {
  mgcd::DenseMatrix m = random_gaussian(rows, cols, gen);
  for (std::size_t i = 0; i < rows; ++i) {
    double norm = 0.0;
    for (std::size_t j = 0; j < cols; ++j) norm += m(i, j) * m(i, j);
    norm = std::sqrt(norm);
    if (norm < 1e-12) {
      m(i, 0) = 1.0;
      norm = 1.0;
    }
    for (std::size_t j = 0; j < cols; ++j) m(i, j) /= norm;
  }
  return m;
}

// random orthogonal matrix via Gram-Schmidt on a Gaussian draw
inline mgcd::DenseMatrix random_orthogonal(std::size_t n, std::mt19937_64& gen) {
  mgcd::DenseMatrix g = random_gaussian(n, n, gen);
  mgcd::DenseMatrix q(n, n);
  for (std::size_t c = 0; c < n; ++c) {
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = g(i, c);
    for (std::size_t prev = 0; prev < c; ++prev) {
      double dot = 0.0;
      for (std::size_t i = 0; i < n; ++i) dot += v[i] * q(i, prev);
      for (std::size_t i = 0; i < n; ++i) v[i] -= dot * q(i, prev);
    }
    double norm = 0.0;
    for (std::size_t i = 0; i < n; ++i) norm += v[i] * v[i];
    norm = std::sqrt(norm);
    for (std::size_t i = 0; i < n; ++i) q(i, c) = v[i] / norm;
  }
  return q;
}

// reference kernel: plain triple loop, no blocking, no library
inline mgcd::DenseMatrix naive_matmul(const mgcd::DenseMatrix& a,
                                      const mgcd::DenseMatrix& b) {
  mgcd::DenseMatrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += aik * b(k, j);
    }
  return out;
}

inline double max_abs_diff(const mgcd::DenseMatrix& a, const mgcd::DenseMatrix& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    worst = std::max(worst, std::abs(a.data()[i] - b.data()[i]));
  return worst;
}

inline double rel_frobenius_diff(const mgcd::DenseMatrix& a, const mgcd::DenseMatrix& b) {
  const double denom = std::max(1e-300, mgcd::frobenius_norm(a));
  return mgcd::frobenius_norm(mgcd::subtract(a, b)) / denom;
}

}  // namespace testutil
