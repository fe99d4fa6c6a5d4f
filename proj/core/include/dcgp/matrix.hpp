#pragma once

#include <cstddef>
#include <vector>

namespace dcgp {

// Row-major dense matrix of 64-bit floats. Column vectors are n x 1.
class DenseMatrix {
public:
  DenseMatrix() = default;
  DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static DenseMatrix identity(std::size_t n);
  static DenseMatrix column_vector(std::vector<double> v);
  static DenseMatrix row_vector(std::vector<double> v);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double &operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }
  double &flat(std::size_t k) { return data_[k]; }
  double flat(std::size_t k) const { return data_[k]; }

  double *data() { return data_.data(); }
  const double *data() const { return data_.data(); }
  const std::vector<double> &storage() const { return data_; }

  bool all_finite() const;
  bool same_shape(const DenseMatrix &other) const {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }

private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

DenseMatrix matmul(const DenseMatrix &a, const DenseMatrix &b);
DenseMatrix transpose(const DenseMatrix &a);
DenseMatrix add(const DenseMatrix &a, const DenseMatrix &b);
DenseMatrix sub(const DenseMatrix &a, const DenseMatrix &b);
DenseMatrix hadamard(const DenseMatrix &a, const DenseMatrix &b);
DenseMatrix scale(const DenseMatrix &a, double s);
double dot_flat(const DenseMatrix &a, const DenseMatrix &b);
double max_abs_diff(const DenseMatrix &a, const DenseMatrix &b);
double frobenius_norm(const DenseMatrix &a);

// Lower-triangular factor of a (possibly jittered) SPD matrix.
// `jitter` is the amount actually added to the diagonal before factoring.
struct CholeskyFactor {
  DenseMatrix L;
  double jitter = 0.0;

  std::size_t dim() const { return L.rows(); }
};

// Factors A + jI = L L^T where j is the smallest value in
// {0, base_jitter, base_jitter*10, ..., base_jitter*10^6} that succeeds.
// Throws NotPositiveDefinite if every escalation fails.
CholeskyFactor cholesky(const DenseMatrix &a, double base_jitter);

// Default jitter: 1e-6 relative to the mean diagonal of A.
CholeskyFactor cholesky(const DenseMatrix &a);

// Factors A + jI with j >= floor always applied (escalating above the floor
// on failure). Optimization paths use this so the objective stays smooth in
// the parameters: attempting j=0 first makes the factorization — and hence
// gradients — jump discontinuously when A drifts near singularity.
CholeskyFactor cholesky_floored(const DenseMatrix &a, double floor);

double default_base_jitter(const DenseMatrix &a);

// Solves L X = B, or L^T X = B when transpose is set.
DenseMatrix tri_solve(const CholeskyFactor &f, const DenseMatrix &b, bool transpose = false);

// log det(A + jI) = 2 sum_i log L_ii
double logdet_from_chol(const CholeskyFactor &f);

}  // namespace dcgp
