#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dcgp/kernels.hpp"
#include "dcgp/matrix.hpp"
#include "dcgp/params.hpp"
#include "dcgp/patches.hpp"
#include "dcgp/rng.hpp"

namespace dcgp {

// q(u) = N(m, S) with S = L L^T. The factor is stored through an
// unconstrained raw matrix: L = tril(raw) with softplus applied to the
// diagonal, so optimization never leaves the PSD cone.
struct VariationalGaussian {
  DenseMatrix mean;       // M x 1
  DenseMatrix scale_raw;  // M x M, only the lower triangle is used

  std::size_t dim() const { return mean.rows(); }
};

// Materialize L from the raw parameterization, and its inverse (used when
// initializing from a target covariance factor).
DenseMatrix scale_tril(const DenseMatrix &raw);
DenseMatrix scale_raw_from_tril(const DenseMatrix &l);

// One convolutional GP layer: inducing patches shared across channels,
// separate variational posterior per channel, one shared RBF kernel.
struct SVGPLayerParams {
  PatchMatrix z;  // M x D
  std::vector<VariationalGaussian> channels;
  RBFHyper hyper;
  PatchConfig cfg;

  std::size_t num_inducing() const { return z.rows(); }
  std::size_t num_channels() const { return channels.size(); }
};

// Weighted convolutional classifier: one response GP per class over the
// patch-weighted additive kernel.
struct ClassifierParams {
  PatchMatrix z;  // M x D in last-layer patch space
  std::vector<VariationalGaussian> classes;
  PatchWeights weights;
  RBFHyper hyper;
  PatchConfig cfg;

  std::size_t num_inducing() const { return z.rows(); }
  std::size_t num_classes() const { return classes.size(); }
};

enum class Likelihood { kSoftmax, kGaussian };

struct DeepModel {
  Shape3 input_shape;
  std::vector<SVGPLayerParams> layers;
  ClassifierParams classifier;
  Likelihood likelihood = Likelihood::kSoftmax;
  double gaussian_noise_variance = 0.01;  // diagnostic Gaussian mode only
  std::size_t num_classes = 0;
  std::vector<double> norm_mean;  // per-channel normalization, from training data
  std::vector<double> norm_std;

  // Shape of the representation feeding the classifier.
  Shape3 classifier_input_shape() const;
};

using ImageBatch = std::vector<ImageTensor>;

struct ConditionalMoments {
  DenseMatrix mean;               // P x C
  DenseMatrix var;                // P x C, diagonal mode
  std::vector<DenseMatrix> cov;   // C of P x P, full mode only
};

// Sparse conditional q(g_c | patches): mean = A m_c, cov = Kff - A Kzf +
// A S_c A^T with A = Kfz Kzz^{-1}. Diagonal variances are clamped at zero.
ConditionalMoments conditional_moments(const PatchMatrix &patches,
                                       const SVGPLayerParams &params,
                                       bool full_cov = false);

// mean + sqrt(var) .* eps, elementwise. Throws NegativeVariance below -1e-10.
DenseMatrix sample_layer(const DenseMatrix &mean, const DenseMatrix &var,
                         const DenseMatrix &eps);

// KL[N(m, S) || N(0, Kzz)] in closed form.
double kl_to_prior(const VariationalGaussian &q, const CholeskyFactor &kzz_chol);

// Sum of channel KLs for one layer (classifier included via its own call).
double layer_kl(const PatchMatrix &z, const RBFHyper &hyper,
                const std::vector<VariationalGaussian> &qs);

// extract -> conditional (diagonal) -> sample -> fold.
ImageTensor layer_forward(const ImageTensor &input, const SVGPLayerParams &params,
                          Rng &rng);

// Per-class scalar conditional moments of the weighted convolutional GP.
struct ClassifierMoments {
  std::vector<double> mean;
  std::vector<double> var;
};
ClassifierMoments classifier_moments(const ImageTensor &rep,
                                     const ClassifierParams &params);

std::vector<double> classifier_forward(const ImageTensor &rep,
                                       const ClassifierParams &params, Rng &rng);

// S sampled logit paths per image, deterministic given seed. Result is S
// matrices of N x C_y.
std::vector<DenseMatrix> forward_sample(const ImageBatch &batch,
                                        const DeepModel &model, std::size_t samples,
                                        std::uint64_t seed);

// (1/S) sum_s log softmax(logits_s)[y] over the rows of an S x C_y matrix.
double expected_loglik(const DenseMatrix &logit_samples, std::size_t label);

// Mean over samples of softmax(logits); rows sum to one.
DenseMatrix predict(const ImageBatch &batch, const DeepModel &model,
                    std::size_t samples, std::uint64_t seed);

// Canonical parameter layout shared by gradients, Adam and checkpoints.
ParamSet pack_params(const DeepModel &model);
void unpack_params(const ParamSet &params, DeepModel &model);

}  // namespace dcgp
