#include "dcgp/matrix.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <utility>

#include "dcgp/errors.hpp"

namespace dcgp {

namespace {

using EigenRowMat =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Map = Eigen::Map<EigenRowMat>;
using ConstMap = Eigen::Map<const EigenRowMat>;

ConstMap as_eigen(const DenseMatrix &m) {
  return ConstMap(m.data(), static_cast<Eigen::Index>(m.rows()),
                  static_cast<Eigen::Index>(m.cols()));
}

Map as_eigen(DenseMatrix &m) {
  return Map(m.data(), static_cast<Eigen::Index>(m.rows()),
             static_cast<Eigen::Index>(m.cols()));
}

void require_same_shape(const DenseMatrix &a, const DenseMatrix &b, const char *op) {
  if (!a.same_shape(b)) {
    throw DimensionMismatch(std::string(op) + ": shapes differ");
  }
}

}  // namespace

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw DimensionMismatch("DenseMatrix: data length does not match rows*cols");
  }
}

DenseMatrix DenseMatrix::identity(std::size_t n) {
  DenseMatrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

DenseMatrix DenseMatrix::column_vector(std::vector<double> v) {
  const std::size_t n = v.size();
  return DenseMatrix(n, 1, std::move(v));
}

DenseMatrix DenseMatrix::row_vector(std::vector<double> v) {
  const std::size_t n = v.size();
  return DenseMatrix(1, n, std::move(v));
}

bool DenseMatrix::all_finite() const {
  for (double x : data_) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

DenseMatrix matmul(const DenseMatrix &a, const DenseMatrix &b) {
  if (a.cols() != b.rows()) {
    throw DimensionMismatch("matmul: inner dimensions differ");
  }
  DenseMatrix out(a.rows(), b.cols());
  as_eigen(out).noalias() = as_eigen(a) * as_eigen(b);
  return out;
}

DenseMatrix transpose(const DenseMatrix &a) {
  DenseMatrix out(a.cols(), a.rows());
  as_eigen(out) = as_eigen(a).transpose();
  return out;
}

DenseMatrix add(const DenseMatrix &a, const DenseMatrix &b) {
  require_same_shape(a, b, "add");
  DenseMatrix out(a.rows(), a.cols());
  as_eigen(out) = as_eigen(a) + as_eigen(b);
  return out;
}

DenseMatrix sub(const DenseMatrix &a, const DenseMatrix &b) {
  require_same_shape(a, b, "sub");
  DenseMatrix out(a.rows(), a.cols());
  as_eigen(out) = as_eigen(a) - as_eigen(b);
  return out;
}

DenseMatrix hadamard(const DenseMatrix &a, const DenseMatrix &b) {
  require_same_shape(a, b, "hadamard");
  DenseMatrix out(a.rows(), a.cols());
  for (std::size_t k = 0; k < a.size(); ++k) out.flat(k) = a.flat(k) * b.flat(k);
  return out;
}

DenseMatrix scale(const DenseMatrix &a, double s) {
  DenseMatrix out(a.rows(), a.cols());
  for (std::size_t k = 0; k < a.size(); ++k) out.flat(k) = a.flat(k) * s;
  return out;
}

double dot_flat(const DenseMatrix &a, const DenseMatrix &b) {
  require_same_shape(a, b, "dot_flat");
  double acc = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) acc += a.flat(k) * b.flat(k);
  return acc;
}

double max_abs_diff(const DenseMatrix &a, const DenseMatrix &b) {
  require_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    m = std::max(m, std::abs(a.flat(k) - b.flat(k)));
  }
  return m;
}

double frobenius_norm(const DenseMatrix &a) {
  double acc = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) acc += a.flat(k) * a.flat(k);
  return std::sqrt(acc);
}

double default_base_jitter(const DenseMatrix &a) {
  if (a.rows() == 0) return 0.0;
  double mean_diag = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i) mean_diag += a(i, i);
  mean_diag /= static_cast<double>(a.rows());
  return 1e-6 * std::abs(mean_diag);
}

CholeskyFactor cholesky(const DenseMatrix &a, double base_jitter) {
  if (a.rows() != a.cols()) {
    throw DimensionMismatch("cholesky: matrix not square");
  }
  if (base_jitter < 0.0) {
    throw NotPositiveDefinite("cholesky: negative base_jitter");
  }
  const std::size_t n = a.rows();
  double scale = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) scale = std::max(scale, std::abs(a.flat(k)));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (std::abs(a(i, j) - a(j, i)) > 1e-10 * std::max(1.0, scale)) {
        throw DimensionMismatch("cholesky: matrix not symmetric");
      }
    }
  }

  // Jitter ladder: 0, then base_jitter * 10^k for k = 0..6.
  for (int attempt = 0; attempt < 8; ++attempt) {
    double j = 0.0;
    if (attempt > 0) {
      if (base_jitter == 0.0) break;
      j = base_jitter * std::pow(10.0, attempt - 1);
    }
    EigenRowMat work = as_eigen(a);
    for (std::size_t i = 0; i < n; ++i) work(i, i) += j;
    Eigen::LLT<EigenRowMat> llt(work);
    if (llt.info() == Eigen::Success) {
      DenseMatrix l(n, n);
      as_eigen(l) = EigenRowMat(llt.matrixL());
      bool ok = true;
      for (std::size_t i = 0; i < n; ++i) {
        if (!(l(i, i) > 0.0) || !std::isfinite(l(i, i))) ok = false;
      }
      if (ok) return CholeskyFactor{std::move(l), j};
    }
  }
  throw NotPositiveDefinite("cholesky: matrix not positive definite after jitter escalation");
}

CholeskyFactor cholesky(const DenseMatrix &a) {
  return cholesky(a, default_base_jitter(a));
}

CholeskyFactor cholesky_floored(const DenseMatrix &a, double floor) {
  if (floor <= 0.0) return cholesky(a, 0.0);
  DenseMatrix b = a;
  for (std::size_t i = 0; i < b.rows(); ++i) b(i, i) += floor;
  CholeskyFactor f = cholesky(b, floor);
  f.jitter += floor;
  return f;
}

DenseMatrix tri_solve(const CholeskyFactor &f, const DenseMatrix &b, bool transpose) {
  if (f.L.rows() != b.rows()) {
    throw DimensionMismatch("tri_solve: dimensions do not conform");
  }
  DenseMatrix x(b.rows(), b.cols());
  as_eigen(x) = as_eigen(b);
  auto lmap = as_eigen(f.L);
  if (transpose) {
    lmap.transpose().triangularView<Eigen::Upper>().solveInPlace(as_eigen(x));
  } else {
    lmap.triangularView<Eigen::Lower>().solveInPlace(as_eigen(x));
  }
  return x;
}

double logdet_from_chol(const CholeskyFactor &f) {
  double acc = 0.0;
  for (std::size_t i = 0; i < f.L.rows(); ++i) acc += std::log(f.L(i, i));
  return 2.0 * acc;
}

}  // namespace dcgp
