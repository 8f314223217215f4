#pragma once

#include <cstddef>
#include <initializer_list>
#include <vector>

// dense double-precision matrices plus the handful of spectral kernels the
// rest of the library is built on. row-major storage, desk scale only.

namespace mgcd {

class DenseMatrix {
 public:
  DenseMatrix() = default;
  DenseMatrix(std::size_t rows, std::size_t cols);  // zero-filled
  DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  DenseMatrix(std::initializer_list<std::initializer_list<double>> rows);

  static DenseMatrix identity(std::size_t n);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }
  bool same_shape(const DenseMatrix& other) const noexcept {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }

  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }

  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }
  const std::vector<double>& values() const noexcept { return data_; }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

struct SvdResult {
  DenseMatrix u;          // m x k, orthonormal columns
  std::vector<double> s;  // k = min(m, n), non-increasing, >= 0
  DenseMatrix vt;         // k x n, orthonormal rows
};

struct SymEigResult {
  std::vector<double> eigenvalues;  // descending
  DenseMatrix eigenvectors;         // orthonormal columns, column j pairs with eigenvalues[j]
};

DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b);
DenseMatrix transpose(const DenseMatrix& a);
DenseMatrix add(const DenseMatrix& a, const DenseMatrix& b);
DenseMatrix subtract(const DenseMatrix& a, const DenseMatrix& b);
DenseMatrix scale(const DenseMatrix& a, double factor);
DenseMatrix row_slice(const DenseMatrix& a, std::size_t begin, std::size_t end);

// thin SVD. singular values descend; the first nonzero entry of every left
// singular vector is non-negative so repeated runs factor identically.
SvdResult svd(const DenseMatrix& a);

// input must be symmetric to 1e-12 (max abs asymmetry), else rejected.
SymEigResult sym_eig(const DenseMatrix& a);

double nuclear_norm(const DenseMatrix& a);
double frobenius_norm(const DenseMatrix& a);

}  // namespace mgcd
