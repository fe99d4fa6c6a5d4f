#include "dcgp/elbo.hpp"

#include <cmath>
#include <numbers>
#include <utility>

#include "dcgp/errors.hpp"
#include "dcgp/rng.hpp"

namespace dcgp {

namespace {

constexpr std::uint64_t kElboNoiseSalt = 0xE1B0;

// KL[N(m, LL^T) || N(0, Kzz)] from tape nodes; lzz is the prior factor.
Var kl_on_tape(Tape &tape, Var lzz, Var m, Var l_s) {
  const std::size_t dim = tape.value(m).rows();
  Var w = tape.tri_solve_with(lzz, l_s, false);
  Var trace_term = tape.sum(tape.hadamard(w, w));
  Var lm = tape.tri_solve_with(lzz, m, false);
  Var quad_term = tape.sum(tape.hadamard(lm, lm));
  Var logdet_k = tape.scale(tape.sum_log_diag(lzz), 2.0);
  Var logdet_s = tape.scale(tape.sum_log_diag(l_s), 2.0);
  Var acc = tape.add(trace_term, quad_term);
  acc = tape.add(acc, tape.scalar_constant(-static_cast<double>(dim)));
  acc = tape.add(acc, tape.sub(logdet_k, logdet_s));
  return tape.scale(acc, 0.5);
}

struct LayerVars {
  Var z;
  Var log_lengthscale;
  Var log_variance;
  Var lzz;       // Cholesky of the inducing Gram
  Var variance;  // exp(log_variance), 1x1
  std::vector<Var> means;
  std::vector<Var> scales;  // materialized L_S per channel / class
};

}  // namespace

ElboObjective::ElboObjective(const DeepModel &model, ImageBatch batch,
                             std::vector<std::size_t> labels, std::size_t samples,
                             std::size_t total_n)
    : model_(model),
      batch_(std::move(batch)),
      labels_(std::move(labels)),
      samples_(samples),
      total_n_(total_n) {
  if (batch_.empty()) throw ConfigError("elbo: batch is empty");
  if (labels_.size() != batch_.size()) {
    throw CountMismatch("elbo: label count does not match batch");
  }
  if (samples_ == 0) throw ConfigError("elbo: samples must be >= 1");
  if (total_n_ < batch_.size()) {
    throw ConfigError("elbo: total_n must be >= batch size");
  }
  if (model_.likelihood == Likelihood::kSoftmax) {
    for (std::size_t y : labels_) {
      if (y >= model_.classifier.num_classes()) {
        throw LabelOutOfRange("elbo: label out of range");
      }
    }
  }

  const ParamSet packed = pack_params(model_);
  for (const auto &t : packed) param_names_.push_back(t.name);

  Shape3 shape = model_.input_shape;
  for (const auto &layer : model_.layers) {
    layer_index_maps_.push_back(patch_index_map(shape, layer.cfg));
    shape = output_shape(shape, layer.cfg, layer.num_channels());
    layer_out_shapes_.push_back(shape);
  }
  classifier_index_map_ = patch_index_map(shape, model_.classifier.cfg);
  const Shape3 cls_grid = output_shape(shape, model_.classifier.cfg, 1);
  classifier_patch_count_ = cls_grid.pixel_count();
  classifier_patch_dim_ =
      model_.classifier.cfg.patch_h * model_.classifier.cfg.patch_w * shape.channels;
  if (classifier_patch_count_ != model_.classifier.weights.w.size()) {
    throw ShapeMismatch("elbo: classifier patch count does not match weights");
  }
  if (classifier_patch_dim_ != model_.classifier.z.cols()) {
    throw ShapeMismatch("elbo: classifier patch dim does not match Z");
  }
}

void ElboObjective::set_gaussian_targets(std::vector<double> targets) {
  if (targets.size() != batch_.size()) {
    throw CountMismatch("elbo: gaussian target count does not match batch");
  }
  gaussian_targets_ = std::move(targets);
}

ElboObjective::Parts ElboObjective::build(Tape &tape, const std::vector<Var> &vars,
                                          std::uint64_t seed) const {
  if (vars.size() != param_names_.size()) {
    throw DimensionMismatch("elbo: var count does not match parameter layout");
  }
  std::unordered_map<std::string, Var> by_name;
  for (std::size_t i = 0; i < vars.size(); ++i) by_name.emplace(param_names_[i], vars[i]);
  auto v = [&by_name](const std::string &name) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw ConfigError("elbo: missing tape var " + name);
    return it->second;
  };

  // Per-layer structures shared across images and samples.
  std::vector<LayerVars> layers;
  std::vector<Var> layer_kls;
  for (std::size_t l = 0; l < model_.layers.size(); ++l) {
    const std::string prefix = "layer" + std::to_string(l) + ".";
    LayerVars lv;
    lv.z = v(prefix + "Z");
    lv.log_lengthscale = v(prefix + "log_lengthscale");
    lv.log_variance = v(prefix + "log_variance");
    Var kzz = tape.rbf_kernel(lv.z, lv.z, lv.log_lengthscale, lv.log_variance);
    lv.lzz = tape.cholesky_of(kzz, kTrainingJitter);
    lv.variance = tape.exp_of(lv.log_variance);
    Var kl;
    for (std::size_t c = 0; c < model_.layers[l].num_channels(); ++c) {
      const std::string ch = prefix + "ch" + std::to_string(c) + ".";
      lv.means.push_back(v(ch + "m"));
      lv.scales.push_back(tape.tril_softplus_diag(v(ch + "Ls_raw")));
      Var kl_c = kl_on_tape(tape, lv.lzz, lv.means.back(), lv.scales.back());
      kl = kl.valid() ? tape.add(kl, kl_c) : kl_c;
    }
    layer_kls.push_back(kl);
    layers.push_back(std::move(lv));
  }

  LayerVars cls;
  cls.z = v("classifier.Z");
  cls.log_lengthscale = v("classifier.log_lengthscale");
  cls.log_variance = v("classifier.log_variance");
  Var kzz_c = tape.rbf_kernel(cls.z, cls.z, cls.log_lengthscale, cls.log_variance);
  cls.lzz = tape.cholesky_of(kzz_c, kTrainingJitter);
  Var w_var = v("classifier.w");
  Var cls_kl;
  std::vector<Var> class_mean_solves;  // L^{-1} m_c, image independent
  for (std::size_t c = 0; c < model_.classifier.num_classes(); ++c) {
    const std::string ch = "classifier.class" + std::to_string(c) + ".";
    cls.means.push_back(v(ch + "m"));
    cls.scales.push_back(tape.tril_softplus_diag(v(ch + "Ls_raw")));
    Var kl_c = kl_on_tape(tape, cls.lzz, cls.means.back(), cls.scales.back());
    cls_kl = cls_kl.valid() ? tape.add(cls_kl, kl_c) : kl_c;
    class_mean_solves.push_back(tape.tri_solve_with(cls.lzz, cls.means.back(), false));
  }
  layer_kls.push_back(cls_kl);

  Var kl_total;
  for (Var kl : layer_kls) kl_total = kl_total.valid() ? tape.add(kl_total, kl) : kl;

  // Reparameterized noise, drawn in a fixed order from the seed.
  Rng noise(mix_seed(seed, kElboNoiseSalt));

  Var ell_sum;
  for (std::size_t i = 0; i < batch_.size(); ++i) {
    Var ell_i;
    for (std::size_t s = 0; s < samples_; ++s) {
      const ImageTensor &img = batch_[i];
      Var rep = tape.constant(
          DenseMatrix(img.shape.pixel_count(), img.shape.channels, img.data));

      for (std::size_t l = 0; l < layers.size(); ++l) {
        const LayerVars &lv = layers[l];
        const Shape3 out = layer_out_shapes_[l];
        const std::size_t p = out.pixel_count();
        const std::size_t d = model_.layers[l].z.cols();
        Var patches = tape.gather_flat(rep, layer_index_maps_[l], p, d);
        Var kfz = tape.rbf_kernel(patches, lv.z, lv.log_lengthscale, lv.log_variance);
        Var w1 = tape.tri_solve_with(lv.lzz, tape.transpose_of(kfz), false);
        Var nystrom = tape.row_sum(tape.transpose_of(tape.hadamard(w1, w1)));
        Var a = tape.transpose_of(tape.tri_solve_with(lv.lzz, w1, true));
        Var prior_diag = tape.fill(lv.variance, p, 1);
        Var base = tape.sub(prior_diag, nystrom);

        std::vector<Var> channels;
        for (std::size_t c = 0; c < lv.means.size(); ++c) {
          Var mean_c = tape.matmul(a, lv.means[c]);
          Var b = tape.matmul(a, lv.scales[c]);
          Var s_var = tape.row_sum(tape.hadamard(b, b));
          Var var_c = tape.add(base, s_var);
          Var sd = tape.sqrt_clamped(var_c);
          DenseMatrix eps(p, 1);
          for (std::size_t k = 0; k < p; ++k) eps(k, 0) = noise.normal();
          channels.push_back(tape.add(mean_c, tape.hadamard(sd, tape.constant(eps))));
        }
        rep = tape.concat_cols(channels);
      }

      // Classifier: scalar conditional per class through the weighted kernel.
      Var xp = tape.gather_flat(rep, classifier_index_map_, classifier_patch_count_,
                                classifier_patch_dim_);
      Var kpz = tape.rbf_kernel(xp, cls.z, cls.log_lengthscale, cls.log_variance);
      Var kvec = tape.matmul(tape.transpose_of(kpz), w_var);
      Var kpp = tape.rbf_kernel(xp, xp, cls.log_lengthscale, cls.log_variance);
      Var kff = tape.matmul(tape.transpose_of(w_var), tape.matmul(kpp, w_var));
      Var avec = tape.tri_solve_with(cls.lzz, kvec, false);
      Var nystrom = tape.sum(tape.hadamard(avec, avec));
      Var cvec = tape.tri_solve_with(cls.lzz, avec, true);
      Var base = tape.sub(kff, nystrom);

      std::vector<Var> logit_scalars;
      for (std::size_t c = 0; c < cls.means.size(); ++c) {
        Var mean_c = tape.matmul(tape.transpose_of(avec), class_mean_solves[c]);
        Var t = tape.matmul(tape.transpose_of(cls.scales[c]), cvec);
        Var s_var = tape.sum(tape.hadamard(t, t));
        Var sd = tape.sqrt_clamped(tape.add(base, s_var));
        Var eps = tape.constant(DenseMatrix(1, 1, noise.normal()));
        logit_scalars.push_back(tape.add(mean_c, tape.hadamard(sd, eps)));
      }

      Var ll;
      if (model_.likelihood == Likelihood::kSoftmax) {
        Var logits = tape.concat_cols(logit_scalars);
        ll = tape.log_softmax_pick(logits, labels_[i]);
      } else {
        if (logit_scalars.size() != 1) {
          throw ConfigError("elbo: gaussian mode requires a single output GP");
        }
        const double target = gaussian_targets_.empty()
                                  ? static_cast<double>(labels_[i])
                                  : gaussian_targets_[i];
        const double noise_var = model_.gaussian_noise_variance;
        Var diff = tape.sub(logit_scalars[0], tape.scalar_constant(target));
        Var quad = tape.scale(tape.hadamard(diff, diff), -0.5 / noise_var);
        ll = tape.add(quad, tape.scalar_constant(
                                -0.5 * std::log(2.0 * std::numbers::pi * noise_var)));
      }
      ell_i = ell_i.valid() ? tape.add(ell_i, ll) : ll;
    }
    ell_i = tape.scale(ell_i, 1.0 / static_cast<double>(samples_));
    ell_sum = ell_sum.valid() ? tape.add(ell_sum, ell_i) : ell_i;
  }

  const double ratio =
      static_cast<double>(total_n_) / static_cast<double>(batch_.size());
  Parts parts;
  parts.expected_loglik = tape.scale(ell_sum, ratio);
  parts.layer_kls = std::move(layer_kls);
  parts.value = tape.sub(parts.expected_loglik, kl_total);
  return parts;
}

ELBOEstimate ElboObjective::estimate(const ParamSet &params, std::uint64_t seed) const {
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(params.size());
  for (const auto &t : params) vars.push_back(tape.constant(t.value));
  const Parts parts = build(tape, vars, seed);

  ELBOEstimate est;
  est.value = tape.value(parts.value).flat(0);
  est.expected_loglik = tape.value(parts.expected_loglik).flat(0);
  for (Var kl : parts.layer_kls) {
    est.per_layer_kl.push_back(tape.value(kl).flat(0));
    est.kl_total += est.per_layer_kl.back();
  }
  return est;
}

ELBOEstimate elbo(const ImageBatch &batch, const std::vector<std::size_t> &labels,
                  const DeepModel &model, std::size_t samples, std::size_t total_n,
                  std::uint64_t seed) {
  ElboObjective objective(model, batch, labels, samples, total_n);
  return objective.estimate(pack_params(model), seed);
}

GradientResult elbo_gradient(const ImageBatch &batch,
                             const std::vector<std::size_t> &labels,
                             const DeepModel &model, std::size_t samples,
                             std::size_t total_n, std::uint64_t seed) {
  ElboObjective objective(model, batch, labels, samples, total_n);
  return gradient(objective, pack_params(model), seed);
}

}  // namespace dcgp
