#include "mgcd/linalg.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <cmath>
#include <stdexcept>
#include <string>

namespace mgcd {

namespace {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const EMat>;
using MutMap = Eigen::Map<EMat>;

ConstMap map_of(const DenseMatrix& a) {
  return ConstMap(a.data(), static_cast<Eigen::Index>(a.rows()),
                  static_cast<Eigen::Index>(a.cols()));
}

void require_finite(const DenseMatrix& a, const char* who) {
  for (double v : a.values()) {
    if (!std::isfinite(v)) {
      throw std::invalid_argument(std::string(who) + ": non-finite entry");
    }
  }
}

void require_nonempty(const DenseMatrix& a, const char* who) {
  if (a.rows() == 0 || a.cols() == 0) {
    throw std::invalid_argument(std::string(who) + ": empty matrix");
  }
}

// canonical sign: first nonzero entry of each left singular vector >= 0
void fix_signs(DenseMatrix& u, DenseMatrix& vt) {
  for (std::size_t j = 0; j < u.cols(); ++j) {
    double lead = 0.0;
    for (std::size_t i = 0; i < u.rows(); ++i) {
      if (u(i, j) != 0.0) {
        lead = u(i, j);
        break;
      }
    }
    if (lead < 0.0) {
      for (std::size_t i = 0; i < u.rows(); ++i) u(i, j) = -u(i, j);
      for (std::size_t c = 0; c < vt.cols(); ++c) vt(j, c) = -vt(j, c);
    }
  }
}

}  // namespace

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols)
    : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw std::invalid_argument("DenseMatrix: data length does not match shape");
  }
  for (double v : data_) {
    if (!std::isfinite(v)) throw std::invalid_argument("DenseMatrix: non-finite entry");
  }
}

DenseMatrix::DenseMatrix(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  cols_ = rows_ ? rows.begin()->size() : 0;
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw std::invalid_argument("DenseMatrix: ragged initializer");
    for (double v : r) {
      if (!std::isfinite(v)) throw std::invalid_argument("DenseMatrix: non-finite entry");
      data_.push_back(v);
    }
  }
}

DenseMatrix DenseMatrix::identity(std::size_t n) {
  DenseMatrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.cols() != b.rows()) throw std::invalid_argument("matmul: inner dimensions differ");
  DenseMatrix out(a.rows(), b.cols());
  MutMap(out.data(), out.rows(), out.cols()).noalias() = map_of(a) * map_of(b);
  return out;
}

DenseMatrix transpose(const DenseMatrix& a) {
  DenseMatrix out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

DenseMatrix add(const DenseMatrix& a, const DenseMatrix& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("add: shape mismatch");
  DenseMatrix out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] + b.data()[i];
  return out;
}

DenseMatrix subtract(const DenseMatrix& a, const DenseMatrix& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("subtract: shape mismatch");
  DenseMatrix out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] - b.data()[i];
  return out;
}

DenseMatrix scale(const DenseMatrix& a, double factor) {
  DenseMatrix out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * factor;
  return out;
}

DenseMatrix row_slice(const DenseMatrix& a, std::size_t begin, std::size_t end) {
  if (begin > end || end > a.rows()) throw std::invalid_argument("row_slice: bad range");
  DenseMatrix out(end - begin, a.cols());
  for (std::size_t i = begin; i < end; ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(i - begin, j) = a(i, j);
  return out;
}

SvdResult svd(const DenseMatrix& a) {
  require_nonempty(a, "svd");
  require_finite(a, "svd");

  const Eigen::Index m = static_cast<Eigen::Index>(a.rows());
  const Eigen::Index n = static_cast<Eigen::Index>(a.cols());
  const Eigen::Index k = std::min(m, n);

  Eigen::MatrixXd eu;
  Eigen::MatrixXd evt;
  Eigen::VectorXd es;
  // Jacobi is the accurate choice for small blocks; divide-and-conquer keeps
  // the larger spectra (256x256 diagnostics) fast.
  if (k < 32) {
    Eigen::JacobiSVD<Eigen::MatrixXd> dec(map_of(a),
                                          Eigen::ComputeThinU | Eigen::ComputeThinV);
    if (dec.info() != Eigen::Success) throw std::runtime_error("svd: did not converge");
    eu = dec.matrixU();
    evt = dec.matrixV().transpose();
    es = dec.singularValues();
  } else {
    Eigen::BDCSVD<Eigen::MatrixXd> dec(map_of(a),
                                       Eigen::ComputeThinU | Eigen::ComputeThinV);
    if (dec.info() != Eigen::Success) throw std::runtime_error("svd: did not converge");
    eu = dec.matrixU();
    evt = dec.matrixV().transpose();
    es = dec.singularValues();
  }

  SvdResult out;
  out.u = DenseMatrix(static_cast<std::size_t>(m), static_cast<std::size_t>(k));
  out.vt = DenseMatrix(static_cast<std::size_t>(k), static_cast<std::size_t>(n));
  out.s.assign(es.data(), es.data() + k);
  MutMap(out.u.data(), m, k) = eu;
  MutMap(out.vt.data(), k, n) = evt;
  fix_signs(out.u, out.vt);
  return out;
}

SymEigResult sym_eig(const DenseMatrix& a) {
  require_nonempty(a, "sym_eig");
  require_finite(a, "sym_eig");
  if (a.rows() != a.cols()) throw std::invalid_argument("sym_eig: matrix not square");
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = i + 1; j < a.cols(); ++j)
      if (std::abs(a(i, j) - a(j, i)) > 1e-12)
        throw std::invalid_argument("sym_eig: matrix not symmetric within 1e-12");

  const Eigen::Index n = static_cast<Eigen::Index>(a.rows());
  Eigen::MatrixXd sym = map_of(a);
  sym = 0.5 * (sym + sym.transpose().eval());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> dec(sym);
  if (dec.info() != Eigen::Success) throw std::runtime_error("sym_eig: did not converge");

  // Eigen sorts ascending; flip to descending and canonicalize vector signs
  SymEigResult out;
  out.eigenvalues.resize(static_cast<std::size_t>(n));
  out.eigenvectors = DenseMatrix(a.rows(), a.cols());
  for (Eigen::Index j = 0; j < n; ++j) {
    const Eigen::Index src = n - 1 - j;
    out.eigenvalues[static_cast<std::size_t>(j)] = dec.eigenvalues()(src);
    double lead = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (dec.eigenvectors()(i, src) != 0.0) {
        lead = dec.eigenvectors()(i, src);
        break;
      }
    }
    const double sign = lead < 0.0 ? -1.0 : 1.0;
    for (Eigen::Index i = 0; i < n; ++i)
      out.eigenvectors(static_cast<std::size_t>(i), static_cast<std::size_t>(j)) =
          sign * dec.eigenvectors()(i, src);
  }
  return out;
}

double nuclear_norm(const DenseMatrix& a) {
  const SvdResult dec = svd(a);
  double total = 0.0;
  for (double v : dec.s) total += v;
  return total;
}

double frobenius_norm(const DenseMatrix& a) {
  double total = 0.0;
  for (double v : a.values()) total += v * v;
  return std::sqrt(total);
}

}  // namespace mgcd
