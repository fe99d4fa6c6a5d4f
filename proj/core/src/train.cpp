#include "dcgp/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "dcgp/elbo.hpp"
#include "dcgp/errors.hpp"
#include "dcgp/grad.hpp"
#include "dcgp/kernels.hpp"
#include "dcgp/kmeans.hpp"
#include "dcgp/rng.hpp"

namespace dcgp {

namespace {

constexpr std::uint64_t kShuffleSalt = 0x5AFF;
constexpr std::uint64_t kStepSalt = 0x57E9;
constexpr std::uint64_t kInitPoolSalt = 0x9001;
constexpr std::uint64_t kInitPatchSalt = 0x9002;
constexpr std::uint64_t kInitForwardSalt = 0x9003;

// Deterministic Fisher-Yates; avoids the implementation-defined std::shuffle.
std::vector<std::size_t> permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng.integer(i));
    std::swap(perm[i - 1], perm[j]);
  }
  return perm;
}

// Mean pairwise distance over (at most 100) center rows; the usual median-ish
// heuristic for picking an initial lengthscale.
double lengthscale_heuristic(const DenseMatrix &centers) {
  const std::size_t n = std::min<std::size_t>(centers.rows(), 100);
  double total = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double d2 = 0.0;
      for (std::size_t k = 0; k < centers.cols(); ++k) {
        const double d = centers(i, k) - centers(j, k);
        d2 += d * d;
      }
      total += std::sqrt(d2);
      ++pairs;
    }
  }
  const double mean = pairs > 0 ? total / static_cast<double>(pairs) : 1.0;
  return std::max(mean, 1e-3);
}

RBFHyper hyper_from_centers(const DenseMatrix &centers) {
  RBFHyper h;
  h.log_lengthscale = std::log(lengthscale_heuristic(centers));
  h.log_variance = 0.0;
  return h;
}

// Pool of representations used for k-means init; forwarded layer by layer.
ImageBatch sample_pool(const ImageBatch &images, std::size_t count,
                       std::uint64_t seed) {
  const auto perm = permutation(images.size(), seed);
  ImageBatch pool;
  pool.reserve(std::min(count, images.size()));
  for (std::size_t i = 0; i < perm.size() && pool.size() < count; ++i) {
    pool.push_back(images[perm[i]]);
  }
  return pool;
}

void forward_pool(ImageBatch &pool, const SVGPLayerParams &layer,
                  std::uint64_t seed, std::size_t layer_index) {
  for (std::size_t i = 0; i < pool.size(); ++i) {
    Rng rng(mix_seed(mix_seed(seed, kInitForwardSalt),
                     layer_index * 1000003 + i));
    pool[i] = layer_forward(pool[i], layer, rng);
  }
}

SVGPLayerParams init_conv_layer(const ImageBatch &pool, const PatchConfig &patch_cfg,
                                std::size_t channels, std::size_t num_inducing,
                                std::size_t depth_l, std::size_t depth_total,
                                const TrainConfig &cfg, std::uint64_t layer_salt) {
  const std::size_t count = std::max(cfg.kmeans_sample, num_inducing);
  const PatchMatrix sample =
      sample_patches(pool, patch_cfg, count, mix_seed(mix_seed(cfg.seed, kInitPatchSalt), layer_salt));
  SVGPLayerParams layer;
  layer.cfg = patch_cfg;
  layer.z = kmeans_init(sample, num_inducing, mix_seed(cfg.seed, layer_salt));
  layer.hyper = hyper_from_centers(layer.z);
  const DenseMatrix kzz = inducing_gram(layer.z, layer.hyper);
  for (std::size_t c = 0; c < channels; ++c) {
    layer.channels.push_back(init_variational(depth_l, depth_total, kzz));
  }
  return layer;
}

void append_metrics(const std::string &path, const MetricsRow &row) {
  if (path.empty()) return;
  bool need_header = true;
  {
    std::ifstream probe(path, std::ios::binary | std::ios::ate);
    if (probe && probe.tellg() > 0) need_header = false;
  }
  std::ofstream out(path, std::ios::app);
  if (!out) throw ConfigError("train: cannot open metrics file: " + path);
  if (need_header) out << metrics_csv_header() << '\n';
  out << metrics_csv_row(row) << '\n';
}

}  // namespace

double lr_schedule(std::uint64_t step, const TrainConfig &cfg) {
  const double decayed =
      cfg.lr0 * std::pow(cfg.lr_decay, static_cast<double>(step / cfg.decay_every));
  return std::max(cfg.lr_floor, decayed);
}

AdamState AdamState::init_like(const ParamSet &params) {
  AdamState state;
  state.first_moment = params.zeros_like();
  state.second_moment = params.zeros_like();
  return state;
}

AdamState AdamState::from_trainer(const TrainerState &trainer) {
  AdamState state;
  state.step = trainer.step;
  state.first_moment = trainer.first_moment;
  state.second_moment = trainer.second_moment;
  return state;
}

TrainerState AdamState::to_trainer() const {
  return TrainerState{step, first_moment, second_moment};
}

void adam_step(ParamSet &params, const GradSet &grads, double lr, AdamState &state) {
  if (params.size() != grads.size()) {
    throw DimensionMismatch("adam_step: parameter/gradient count mismatch");
  }
  const double t = static_cast<double>(state.step + 1);
  const double bc1 = 1.0 - std::pow(state.beta1, t);
  const double bc2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    DenseMatrix &p = params[i].value;
    const DenseMatrix &g = grads[i].value;
    if (!p.same_shape(g)) {
      throw DimensionMismatch("adam_step: shape mismatch for " + params[i].name);
    }
    DenseMatrix &m = state.first_moment.at(params[i].name);
    DenseMatrix &v = state.second_moment.at(params[i].name);
    for (std::size_t k = 0; k < p.size(); ++k) {
      m.flat(k) = state.beta1 * m.flat(k) + (1.0 - state.beta1) * g.flat(k);
      v.flat(k) = state.beta2 * v.flat(k) + (1.0 - state.beta2) * g.flat(k) * g.flat(k);
      const double m_hat = m.flat(k) / bc1;
      const double v_hat = v.flat(k) / bc2;
      p.flat(k) += lr * m_hat / (std::sqrt(v_hat) + state.eps);
    }
  }
  ++state.step;
}

VariationalGaussian init_variational(std::size_t l, std::size_t depth,
                                     const DenseMatrix &kzz) {
  const CholeskyFactor f = cholesky(kzz);
  const double factor = l < depth ? std::sqrt(1e-5) : 1.0;
  const DenseMatrix l_s = scale(f.L, factor);
  VariationalGaussian q;
  q.mean = DenseMatrix(kzz.rows(), 1);
  q.scale_raw = scale_raw_from_tril(l_s);
  return q;
}

PatchMatrix sample_patches(const ImageBatch &images, const PatchConfig &cfg,
                           std::size_t count, std::uint64_t seed) {
  if (images.empty()) throw InsufficientPatches("sample_patches: no images");
  const Shape3 in = images[0].shape;
  for (const auto &img : images) {
    if (!(img.shape == in)) {
      throw ShapeMismatch("sample_patches: non-uniform image shapes");
    }
  }
  const auto map = patch_index_map(in, cfg);
  const Shape3 grid = output_shape(in, cfg, 1);
  const std::size_t p = grid.pixel_count();
  const std::size_t d = map.size() / p;
  PatchMatrix out(count, d);
  Rng rng(seed);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t img = static_cast<std::size_t>(rng.integer(images.size()));
    const std::size_t patch = static_cast<std::size_t>(rng.integer(p));
    for (std::size_t k = 0; k < d; ++k) {
      out(i, k) = images[img].data[map[patch * d + k]];
    }
  }
  return out;
}

DeepModel build_model(const ModelConfig &config, const ImageBatch &train_images,
                      const TrainConfig &cfg) {
  if (train_images.empty()) throw ConfigError("build_model: no training images");
  DeepModel model = model_skeleton(config);

  // Depth counts the classifier, which alone uses the full-variance init.
  const std::size_t depth = config.layers.size() + 1;
  ImageBatch pool =
      sample_pool(train_images, std::min<std::size_t>(train_images.size(), 256),
                  mix_seed(cfg.seed, kInitPoolSalt));

  for (std::size_t l = 0; l < config.layers.size(); ++l) {
    const LayerSpec &spec = config.layers[l];
    const PatchConfig patch_cfg{spec.patch_h, spec.patch_w, spec.stride};
    model.layers[l] = init_conv_layer(pool, patch_cfg, spec.channels,
                                      spec.num_inducing, l + 1, depth, cfg, l + 1);
    forward_pool(pool, model.layers[l], cfg.seed, l);
  }

  const LayerSpec &cls = config.classifier;
  const PatchConfig patch_cfg{cls.patch_h, cls.patch_w, cls.stride};
  const std::size_t count = std::max(cfg.kmeans_sample, cls.num_inducing);
  const PatchMatrix sample = sample_patches(
      pool, patch_cfg, count, mix_seed(mix_seed(cfg.seed, kInitPatchSalt), depth));
  model.classifier.z =
      kmeans_init(sample, cls.num_inducing, mix_seed(cfg.seed, depth));
  model.classifier.hyper = hyper_from_centers(model.classifier.z);
  const DenseMatrix kzz = inducing_gram(model.classifier.z, model.classifier.hyper);
  for (auto &q : model.classifier.classes) {
    q = init_variational(depth, depth, kzz);
  }
  return model;
}

DeepModel deepen(const DeepModel &donor, const LayerSpec &new_layer,
                 const ImageBatch &train_images, const TrainConfig &cfg) {
  const Shape3 in = donor.classifier_input_shape();
  const PatchConfig patch_cfg{new_layer.patch_h, new_layer.patch_w, new_layer.stride};
  const Shape3 out = output_shape(in, patch_cfg, new_layer.channels);
  if (!(out == in)) {
    throw ShapeMismatch(
        "deepen: inserted layer must preserve the classifier input shape");
  }

  if (train_images.empty()) throw ConfigError("deepen: no training images");
  ImageBatch pool =
      sample_pool(train_images, std::min<std::size_t>(train_images.size(), 256),
                  mix_seed(cfg.seed, kInitPoolSalt));
  for (std::size_t l = 0; l < donor.layers.size(); ++l) {
    forward_pool(pool, donor.layers[l], cfg.seed, l);
  }

  DeepModel model = donor;
  const std::size_t depth = donor.layers.size() + 2;  // after insertion
  model.layers.push_back(init_conv_layer(pool, patch_cfg, new_layer.channels,
                                         new_layer.num_inducing, depth - 1, depth,
                                         cfg, depth - 1));
  return model;
}

std::string metrics_csv_header() { return "step,elbo,ell,kl,lr,seconds"; }

std::string metrics_csv_row(const MetricsRow &row) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%llu,%.17g,%.17g,%.17g,%.17g,%.3f",
                static_cast<unsigned long long>(row.step), row.elbo, row.ell,
                row.kl, row.lr, row.seconds);
  return std::string(buf);
}

TrainResult train_loop(DeepModel &model, const ImageBatch &images,
                       const std::vector<std::size_t> &labels,
                       const TrainConfig &cfg, std::uint64_t max_steps,
                       const std::string &checkpoint_path,
                       const std::string &metrics_path, const AdamState *resume) {
  const std::size_t n = images.size();
  if (n == 0) throw ConfigError("train_loop: empty dataset");
  if (labels.size() != n) {
    throw DimensionMismatch("train_loop: image/label count mismatch");
  }
  if (model.likelihood != Likelihood::kSoftmax) {
    throw ConfigError("train_loop: only the softmax likelihood is trainable here");
  }

  ParamSet params = pack_params(model);
  AdamState state = resume != nullptr ? *resume : AdamState::init_like(params);

  const std::size_t batch_size = std::min(cfg.minibatch, n);
  const std::size_t steps_per_epoch = n / batch_size;

  TrainResult result;
  const auto t0 = std::chrono::steady_clock::now();
  auto elapsed = [&t0]() {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
        .count();
  };

  auto save = [&](bool force) {
    if (checkpoint_path.empty()) return;
    if (!force && cfg.ckpt_every > 0 && state.step % cfg.ckpt_every != 0) return;
    const TrainerState trainer = state.to_trainer();
    save_checkpoint(checkpoint_path, model, &trainer);
  };

  for (std::uint64_t step = state.step; step < max_steps; ++step) {
    const std::uint64_t epoch = step / steps_per_epoch;
    const std::size_t offset = (step % steps_per_epoch) * batch_size;
    const auto perm =
        permutation(n, mix_seed(mix_seed(cfg.seed, kShuffleSalt), epoch));

    ImageBatch batch;
    std::vector<std::size_t> batch_labels;
    batch.reserve(batch_size);
    batch_labels.reserve(batch_size);
    for (std::size_t i = 0; i < batch_size; ++i) {
      batch.push_back(images[perm[offset + i]]);
      batch_labels.push_back(labels[perm[offset + i]]);
    }

    const ElboObjective objective(model, std::move(batch), std::move(batch_labels),
                                  cfg.samples, n);
    double ell = 0.0;
    double kl = 0.0;
    const TapeObjective wrapped = [&](Tape &tape, const std::vector<Var> &vars,
                                      std::uint64_t s) {
      const auto parts = objective.build(tape, vars, s);
      ell = tape.value(parts.expected_loglik).flat(0);
      kl = 0.0;
      for (const Var v : parts.layer_kls) kl += tape.value(v).flat(0);
      return parts.value;
    };

    const std::uint64_t step_seed = mix_seed(mix_seed(cfg.seed, kStepSalt), step);
    const GradientResult g = gradient(wrapped, params, step_seed);

    const double lr = lr_schedule(step, cfg);
    adam_step(params, g.grads, lr, state);
    unpack_params(params, model);

    if (cfg.log_every > 0 && (step % cfg.log_every == 0 || step + 1 == max_steps)) {
      const MetricsRow row{step, g.value, ell, kl, lr, elapsed()};
      result.metrics.push_back(row);
      append_metrics(metrics_path, row);
    }
    save(false);
  }

  save(true);
  result.steps_done = state.step;
  return result;
}

}  // namespace dcgp
