#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "dcgp/grad.hpp"
#include "dcgp/model.hpp"
#include "dcgp/tape.hpp"

namespace dcgp {

// Diagonal jitter added to every inducing Gram matrix inside the training
// objective, i.e. the optimized bound uses the prior N(0, Kzz + jI). A fixed
// white-noise floor keeps the bound's curvature bounded when Kzz drifts near
// singularity (deep hidden layers with low-dimensional patch spaces are prone
// to this). It must be a constant: the tape treats the jitter as data, so a
// parameter-dependent floor would bias gradients. Evaluation-path code
// (conditional_moments, kl_to_prior callers) is unaffected.
inline constexpr double kTrainingJitter = 1e-4;

struct ELBOEstimate {
  double value = 0.0;
  double expected_loglik = 0.0;  // scaled by total_n / batch size
  double kl_total = 0.0;
  std::vector<double> per_layer_kl;  // conv layers first, classifier last
};

// Doubly stochastic minibatch ELBO as a seeded tape objective. The model
// argument fixes the architecture; parameter values are read from the tape
// vars (pack_params order), so the same objective serves gradient, fd_check
// and plain evaluation.
class ElboObjective {
public:
  ElboObjective(const DeepModel &model, ImageBatch batch,
                std::vector<std::size_t> labels, std::size_t samples,
                std::size_t total_n);

  // Gaussian diagnostic mode: real-valued targets, one output GP.
  void set_gaussian_targets(std::vector<double> targets);

  struct Parts {
    Var value;
    Var expected_loglik;
    std::vector<Var> layer_kls;
  };
  Parts build(Tape &tape, const std::vector<Var> &vars, std::uint64_t seed) const;

  Var operator()(Tape &tape, const std::vector<Var> &vars, std::uint64_t seed) const {
    return build(tape, vars, seed).value;
  }

  ELBOEstimate estimate(const ParamSet &params, std::uint64_t seed) const;

private:
  DeepModel model_;
  ImageBatch batch_;
  std::vector<std::size_t> labels_;
  std::vector<double> gaussian_targets_;
  std::size_t samples_;
  std::size_t total_n_;
  std::vector<std::string> param_names_;
  std::vector<std::vector<std::uint32_t>> layer_index_maps_;
  std::vector<Shape3> layer_out_shapes_;  // per conv layer
  std::vector<std::uint32_t> classifier_index_map_;
  std::size_t classifier_patch_count_ = 0;
  std::size_t classifier_patch_dim_ = 0;
};

// One-call estimate with freshly packed parameters.
ELBOEstimate elbo(const ImageBatch &batch, const std::vector<std::size_t> &labels,
                  const DeepModel &model, std::size_t samples, std::size_t total_n,
                  std::uint64_t seed);

GradientResult elbo_gradient(const ImageBatch &batch,
                             const std::vector<std::size_t> &labels,
                             const DeepModel &model, std::size_t samples,
                             std::size_t total_n, std::uint64_t seed);

}  // namespace dcgp
