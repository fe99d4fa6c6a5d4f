#include "dcgp/kernels.hpp"

#include <Eigen/Dense>
#include <cmath>

#include "dcgp/errors.hpp"

namespace dcgp {

namespace {

using EigenRowMat =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Eigen::Map<const EigenRowMat> as_eigen(const DenseMatrix &m) {
  return {m.data(), static_cast<Eigen::Index>(m.rows()),
          static_cast<Eigen::Index>(m.cols())};
}

}  // namespace

double RBFHyper::lengthscale() const { return std::exp(log_lengthscale); }
double RBFHyper::variance() const { return std::exp(log_variance); }

double rbf(std::span<const double> a, std::span<const double> b, const RBFHyper &h) {
  if (a.size() != b.size()) {
    throw DimensionMismatch("rbf: input dimensions differ");
  }
  double d2 = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double diff = a[k] - b[k];
    d2 += diff * diff;
  }
  const double ls = h.lengthscale();
  return h.variance() * std::exp(-d2 / (2.0 * ls * ls));
}

DenseMatrix squared_distances(const PatchMatrix &a, const PatchMatrix &b) {
  if (a.cols() != b.cols()) {
    throw DimensionMismatch("squared_distances: patch dimensions differ");
  }
  DenseMatrix out(a.rows(), b.rows());
  auto am = as_eigen(a);
  auto bm = as_eigen(b);
  Eigen::VectorXd an = am.rowwise().squaredNorm();
  Eigen::VectorXd bn = bm.rowwise().squaredNorm();
  Eigen::Map<EigenRowMat> om(out.data(), am.rows(), bm.rows());
  om.noalias() = -2.0 * am * bm.transpose();
  om.colwise() += an;
  om.rowwise() += bn.transpose();
  om = om.cwiseMax(0.0);
  return out;
}

DenseMatrix kernel_matrix(const PatchMatrix &a, const PatchMatrix &b, const RBFHyper &h) {
  DenseMatrix k = squared_distances(a, b);
  const double ls = h.lengthscale();
  const double inv2l2 = 1.0 / (2.0 * ls * ls);
  const double var = h.variance();
  for (std::size_t i = 0; i < k.size(); ++i) {
    k.flat(i) = var * std::exp(-k.flat(i) * inv2l2);
  }
  return k;
}

DenseMatrix inducing_gram(const PatchMatrix &z, const RBFHyper &h) {
  const std::size_t m = z.rows();
  DenseMatrix k(m, m);
  const double var = h.variance();
  const double ls = h.lengthscale();
  const double inv2l2 = 1.0 / (2.0 * ls * ls);
  for (std::size_t i = 0; i < m; ++i) {
    k(i, i) = var;
    for (std::size_t j = i + 1; j < m; ++j) {
      double d2 = 0.0;
      for (std::size_t d = 0; d < z.cols(); ++d) {
        const double diff = z(i, d) - z(j, d);
        d2 += diff * diff;
      }
      const double v = var * std::exp(-d2 * inv2l2);
      k(i, j) = v;
      k(j, i) = v;
    }
  }
  return k;
}

double weighted_conv_kernel(const PatchMatrix &f, const PatchMatrix &f2,
                            const PatchWeights &w, const RBFHyper &h) {
  if (f.rows() != w.w.size() || f2.rows() != w.w.size()) {
    throw DimensionMismatch("weighted_conv_kernel: patch count does not match weights");
  }
  const DenseMatrix k = kernel_matrix(f, f2, h);
  double acc = 0.0;
  for (std::size_t p = 0; p < k.rows(); ++p) {
    double row = 0.0;
    for (std::size_t q = 0; q < k.cols(); ++q) row += k(p, q) * w.w[q];
    acc += w.w[p] * row;
  }
  return acc;
}

std::vector<double> interdomain_cross(const PatchMatrix &f, const PatchMatrix &z,
                                      const PatchWeights &w, const RBFHyper &h) {
  if (f.rows() != w.w.size()) {
    throw DimensionMismatch("interdomain_cross: patch count does not match weights");
  }
  const DenseMatrix k = kernel_matrix(f, z, h);
  std::vector<double> out(z.rows(), 0.0);
  for (std::size_t p = 0; p < k.rows(); ++p) {
    for (std::size_t m = 0; m < k.cols(); ++m) out[m] += w.w[p] * k(p, m);
  }
  return out;
}

}  // namespace dcgp
