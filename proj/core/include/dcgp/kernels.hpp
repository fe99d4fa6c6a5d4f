#pragma once

#include <span>
#include <vector>

#include "dcgp/matrix.hpp"
#include "dcgp/patches.hpp"

namespace dcgp {

// Isotropic RBF hyperparameters, stored in log space so optimization is
// unconstrained: k(a, b) = variance * exp(-||a - b||^2 / (2 lengthscale^2)).
struct RBFHyper {
  double log_lengthscale = 0.0;
  double log_variance = 0.0;

  double lengthscale() const;
  double variance() const;
};

struct PatchWeights {
  std::vector<double> w;

  static PatchWeights ones(std::size_t p) { return PatchWeights{std::vector<double>(p, 1.0)}; }
};

double rbf(std::span<const double> a, std::span<const double> b, const RBFHyper &h);

// Entry (i, j) = rbf(row i of A, row j of B).
DenseMatrix kernel_matrix(const PatchMatrix &a, const PatchMatrix &b, const RBFHyper &h);

// Exactly symmetric M x M Gram matrix of the rows of Z.
DenseMatrix inducing_gram(const PatchMatrix &z, const RBFHyper &h);

// w^T K w where K_{p,p'} = rbf(f[p], f2[p']).
double weighted_conv_kernel(const PatchMatrix &f, const PatchMatrix &f2,
                            const PatchWeights &w, const RBFHyper &h);

// Entry m = sum_p w_p rbf(f[p], Z_m).
std::vector<double> interdomain_cross(const PatchMatrix &f, const PatchMatrix &z,
                                      const PatchWeights &w, const RBFHyper &h);

// Pairwise squared distances via the norm expansion, clamped at zero.
DenseMatrix squared_distances(const PatchMatrix &a, const PatchMatrix &b);

}  // namespace dcgp
