#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dcgp/checkpoint.hpp"
#include "dcgp/matrix.hpp"
#include "dcgp/model.hpp"
#include "dcgp/params.hpp"

namespace dcgp {

struct TrainConfig {
  std::size_t minibatch = 32;
  double lr0 = 0.01;
  double lr_decay = 0.1;
  std::uint64_t decay_every = 100000;
  double lr_floor = 1e-5;
  std::size_t num_inducing = 384;
  std::size_t samples = 1;  // MC samples per training step
  std::uint64_t seed = 0;
  std::uint64_t log_every = 50;
  std::uint64_t ckpt_every = 1000;
  std::size_t kmeans_sample = 10000;  // patches per layer for Z init
};

// max(lr_floor, lr0 * lr_decay^floor(step / decay_every))
double lr_schedule(std::uint64_t step, const TrainConfig &cfg);

struct AdamState {
  std::uint64_t step = 0;
  ParamSet first_moment;
  ParamSet second_moment;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState init_like(const ParamSet &params);
  static AdamState from_trainer(const TrainerState &trainer);
  TrainerState to_trainer() const;
};

// Bias-corrected ascent step: p += lr * m_hat / (sqrt(v_hat) + eps).
// A zero gradient leaves parameters with zero moments unchanged.
void adam_step(ParamSet &params, const GradSet &grads, double lr, AdamState &state);

// m = 0; S = 1e-5 * Kzz for hidden layers (l < depth), S = Kzz at the output
// layer (l == depth), stored through the raw Cholesky parameterization.
VariationalGaussian init_variational(std::size_t l, std::size_t depth,
                                     const DenseMatrix &kzz);

// Uniform sample of vectorized patches across a set of images.
PatchMatrix sample_patches(const ImageBatch &images, const PatchConfig &cfg,
                           std::size_t count, std::uint64_t seed);

// Builds a fresh model: per layer, Z from k-means on sampled patches of the
// (forward-sampled) input representation, lengthscale from the mean pairwise
// center distance, variance 1, variational init per init_variational.
DeepModel build_model(const ModelConfig &config, const ImageBatch &train_images,
                      const TrainConfig &cfg);

// Inserts a fresh shape-preserving layer before the classifier; all donor
// layers and the classifier are copied bit-for-bit. Throws ShapeMismatch when
// the inserted layer changes the representation shape.
DeepModel deepen(const DeepModel &donor, const LayerSpec &new_layer,
                 const ImageBatch &train_images, const TrainConfig &cfg);

struct MetricsRow {
  std::uint64_t step = 0;
  double elbo = 0.0;
  double ell = 0.0;
  double kl = 0.0;
  double lr = 0.0;
  double seconds = 0.0;
};

std::string metrics_csv_header();
std::string metrics_csv_row(const MetricsRow &row);

struct TrainResult {
  std::uint64_t steps_done = 0;
  std::vector<MetricsRow> metrics;
};

// Seeded minibatch loop: per-epoch reshuffle, per-step seeded ELBO gradient,
// Adam with lr_schedule. Appends rows to `metrics_path` (header written when
// the file is new) and checkpoints to `checkpoint_path` every ckpt_every
// steps plus at the end; empty paths disable either output. When `resume` is
// given the loop continues from resume->step with the stored moments.
TrainResult train_loop(DeepModel &model, const ImageBatch &images,
                       const std::vector<std::size_t> &labels,
                       const TrainConfig &cfg, std::uint64_t max_steps,
                       const std::string &checkpoint_path = "",
                       const std::string &metrics_path = "",
                       const AdamState *resume = nullptr);

}  // namespace dcgp
