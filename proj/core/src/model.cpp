#include "dcgp/model.hpp"

#include <cmath>
#include <utility>

#include "dcgp/errors.hpp"

namespace dcgp {

namespace {

double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double softplus_inverse(double y) {
  if (y > 30.0) return y;
  return std::log(std::expm1(y));
}

}  // namespace

DenseMatrix scale_tril(const DenseMatrix &raw) {
  if (raw.rows() != raw.cols()) {
    throw DimensionMismatch("scale_tril: raw matrix not square");
  }
  DenseMatrix l(raw.rows(), raw.cols());
  for (std::size_t i = 0; i < raw.rows(); ++i) {
    for (std::size_t j = 0; j < i; ++j) l(i, j) = raw(i, j);
    l(i, i) = softplus(raw(i, i));
  }
  return l;
}

DenseMatrix scale_raw_from_tril(const DenseMatrix &l) {
  if (l.rows() != l.cols()) {
    throw DimensionMismatch("scale_raw_from_tril: matrix not square");
  }
  DenseMatrix raw(l.rows(), l.cols());
  for (std::size_t i = 0; i < l.rows(); ++i) {
    for (std::size_t j = 0; j < i; ++j) raw(i, j) = l(i, j);
    if (!(l(i, i) > 0.0)) {
      throw NotPositiveDefinite("scale_raw_from_tril: non-positive diagonal");
    }
    raw(i, i) = softplus_inverse(l(i, i));
  }
  return raw;
}

Shape3 DeepModel::classifier_input_shape() const {
  Shape3 shape = input_shape;
  for (const auto &layer : layers) {
    shape = output_shape(shape, layer.cfg, layer.num_channels());
  }
  return shape;
}

ConditionalMoments conditional_moments(const PatchMatrix &patches,
                                       const SVGPLayerParams &params,
                                       bool full_cov) {
  if (patches.cols() != params.z.cols()) {
    throw DimensionMismatch("conditional_moments: patch dimension does not match Z");
  }
  const std::size_t p = patches.rows();
  const std::size_t c_out = params.num_channels();

  const DenseMatrix kzz = inducing_gram(params.z, params.hyper);
  const CholeskyFactor chol = cholesky(kzz);
  const DenseMatrix kfz = kernel_matrix(patches, params.z, params.hyper);
  const DenseMatrix w1 = tri_solve(chol, transpose(kfz));             // L^{-1} Kzf
  const DenseMatrix a = transpose(tri_solve(chol, w1, true));         // Kfz Kzz^{-1}

  // Prior diagonal minus the Nystrom term, shared across channels.
  std::vector<double> base(p, params.hyper.variance());
  for (std::size_t m = 0; m < w1.rows(); ++m) {
    for (std::size_t j = 0; j < p; ++j) base[j] -= w1(m, j) * w1(m, j);
  }

  ConditionalMoments out;
  out.mean = DenseMatrix(p, c_out);
  if (!full_cov) out.var = DenseMatrix(p, c_out);

  DenseMatrix kff;
  DenseMatrix nystrom;
  if (full_cov) {
    kff = kernel_matrix(patches, patches, params.hyper);
    nystrom = matmul(transpose(w1), w1);
  }

  for (std::size_t c = 0; c < c_out; ++c) {
    const VariationalGaussian &q = params.channels[c];
    const DenseMatrix mean_c = matmul(a, q.mean);
    for (std::size_t i = 0; i < p; ++i) out.mean(i, c) = mean_c(i, 0);

    const DenseMatrix l_s = scale_tril(q.scale_raw);
    const DenseMatrix b = matmul(a, l_s);
    if (full_cov) {
      DenseMatrix cov = sub(kff, nystrom);
      cov = add(cov, matmul(b, transpose(b)));
      out.cov.push_back(std::move(cov));
    } else {
      for (std::size_t i = 0; i < p; ++i) {
        double s_var = 0.0;
        for (std::size_t m = 0; m < b.cols(); ++m) s_var += b(i, m) * b(i, m);
        out.var(i, c) = std::max(0.0, base[i] + s_var);
      }
    }
  }
  return out;
}

DenseMatrix sample_layer(const DenseMatrix &mean, const DenseMatrix &var,
                         const DenseMatrix &eps) {
  if (!mean.same_shape(var) || !mean.same_shape(eps)) {
    throw DimensionMismatch("sample_layer: shapes differ");
  }
  DenseMatrix out(mean.rows(), mean.cols());
  for (std::size_t k = 0; k < mean.size(); ++k) {
    const double v = var.flat(k);
    if (v < -1e-10) throw NegativeVariance("sample_layer: variance below -1e-10");
    out.flat(k) = mean.flat(k) + std::sqrt(std::max(0.0, v)) * eps.flat(k);
  }
  return out;
}

double kl_to_prior(const VariationalGaussian &q, const CholeskyFactor &kzz_chol) {
  const std::size_t m = q.dim();
  if (kzz_chol.dim() != m) {
    throw DimensionMismatch("kl_to_prior: dimensions differ");
  }
  const DenseMatrix l_s = scale_tril(q.scale_raw);
  const DenseMatrix w = tri_solve(kzz_chol, l_s);
  const DenseMatrix lm = tri_solve(kzz_chol, q.mean);

  double trace_term = 0.0;
  for (std::size_t k = 0; k < w.size(); ++k) trace_term += w.flat(k) * w.flat(k);
  double quad_term = 0.0;
  for (std::size_t k = 0; k < lm.size(); ++k) quad_term += lm.flat(k) * lm.flat(k);
  double logdet_s = 0.0;
  for (std::size_t i = 0; i < m; ++i) logdet_s += 2.0 * std::log(l_s(i, i));

  double kl = 0.5 * (trace_term + quad_term - static_cast<double>(m) +
                     logdet_from_chol(kzz_chol) - logdet_s);
  if (kl < 0.0 && kl > -1e-9) kl = 0.0;  // round-off at q = p
  return kl;
}

double layer_kl(const PatchMatrix &z, const RBFHyper &hyper,
                const std::vector<VariationalGaussian> &qs) {
  const CholeskyFactor chol = cholesky(inducing_gram(z, hyper));
  double total = 0.0;
  for (const auto &q : qs) total += kl_to_prior(q, chol);
  return total;
}

ImageTensor layer_forward(const ImageTensor &input, const SVGPLayerParams &params,
                          Rng &rng) {
  const PatchMatrix patches = extract_patches(input, params.cfg);
  const ConditionalMoments moments = conditional_moments(patches, params, false);
  DenseMatrix eps(moments.mean.rows(), moments.mean.cols());
  for (std::size_t k = 0; k < eps.size(); ++k) eps.flat(k) = rng.normal();
  const DenseMatrix values = sample_layer(moments.mean, moments.var, eps);
  const Shape3 out = output_shape(input.shape, params.cfg, params.num_channels());
  return fold_responses(values, out);
}

ClassifierMoments classifier_moments(const ImageTensor &rep,
                                     const ClassifierParams &params) {
  const PatchMatrix patches = extract_patches(rep, params.cfg);
  if (patches.rows() != params.weights.w.size()) {
    throw DimensionMismatch("classifier_moments: patch count does not match weights");
  }
  const DenseMatrix kzz = inducing_gram(params.z, params.hyper);
  const CholeskyFactor chol = cholesky(kzz);
  const std::vector<double> kvec =
      interdomain_cross(patches, params.z, params.weights, params.hyper);
  const double kff =
      weighted_conv_kernel(patches, patches, params.weights, params.hyper);

  const DenseMatrix k_col = DenseMatrix::column_vector(kvec);
  const DenseMatrix a = tri_solve(chol, k_col);            // L^{-1} k
  const DenseMatrix c = tri_solve(chol, a, true);          // Kzz^{-1} k
  double nystrom = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) nystrom += a.flat(i) * a.flat(i);

  ClassifierMoments out;
  for (const auto &q : params.classes) {
    const DenseMatrix b = tri_solve(chol, q.mean);          // L^{-1} m
    out.mean.push_back(dot_flat(a, b));
    const DenseMatrix l_s = scale_tril(q.scale_raw);
    const DenseMatrix t = matmul(transpose(l_s), c);
    double s_var = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) s_var += t.flat(i) * t.flat(i);
    out.var.push_back(std::max(0.0, kff - nystrom + s_var));
  }
  return out;
}

std::vector<double> classifier_forward(const ImageTensor &rep,
                                       const ClassifierParams &params, Rng &rng) {
  const ClassifierMoments moments = classifier_moments(rep, params);
  std::vector<double> logits(moments.mean.size());
  for (std::size_t c = 0; c < logits.size(); ++c) {
    logits[c] = moments.mean[c] + std::sqrt(moments.var[c]) * rng.normal();
  }
  return logits;
}

std::vector<DenseMatrix> forward_sample(const ImageBatch &batch,
                                        const DeepModel &model, std::size_t samples,
                                        std::uint64_t seed) {
  if (samples == 0) throw ConfigError("forward_sample: samples must be >= 1");
  Rng rng(mix_seed(seed, 0xF0F0));
  std::vector<DenseMatrix> out;
  out.reserve(samples);
  for (std::size_t s = 0; s < samples; ++s) {
    DenseMatrix logits(batch.size(), model.classifier.num_classes());
    for (std::size_t i = 0; i < batch.size(); ++i) {
      ImageTensor rep = batch[i];
      for (const auto &layer : model.layers) {
        rep = layer_forward(rep, layer, rng);
      }
      const std::vector<double> row = classifier_forward(rep, model.classifier, rng);
      for (std::size_t c = 0; c < row.size(); ++c) logits(i, c) = row[c];
    }
    out.push_back(std::move(logits));
  }
  return out;
}

double expected_loglik(const DenseMatrix &logit_samples, std::size_t label) {
  if (label >= logit_samples.cols()) {
    throw LabelOutOfRange("expected_loglik: label out of range");
  }
  double acc = 0.0;
  for (std::size_t s = 0; s < logit_samples.rows(); ++s) {
    double max_logit = logit_samples(s, 0);
    for (std::size_t c = 1; c < logit_samples.cols(); ++c) {
      max_logit = std::max(max_logit, logit_samples(s, c));
    }
    double z = 0.0;
    for (std::size_t c = 0; c < logit_samples.cols(); ++c) {
      z += std::exp(logit_samples(s, c) - max_logit);
    }
    acc += logit_samples(s, label) - (max_logit + std::log(z));
  }
  return acc / static_cast<double>(logit_samples.rows());
}

DenseMatrix predict(const ImageBatch &batch, const DeepModel &model,
                    std::size_t samples, std::uint64_t seed) {
  const std::vector<DenseMatrix> paths = forward_sample(batch, model, samples, seed);
  const std::size_t n = batch.size();
  const std::size_t c_y = model.classifier.num_classes();
  DenseMatrix probs(n, c_y);
  for (const DenseMatrix &logits : paths) {
    for (std::size_t i = 0; i < n; ++i) {
      double max_logit = logits(i, 0);
      for (std::size_t c = 1; c < c_y; ++c) max_logit = std::max(max_logit, logits(i, c));
      double z = 0.0;
      for (std::size_t c = 0; c < c_y; ++c) z += std::exp(logits(i, c) - max_logit);
      for (std::size_t c = 0; c < c_y; ++c) {
        probs(i, c) += std::exp(logits(i, c) - max_logit) / z;
      }
    }
  }
  const double inv_s = 1.0 / static_cast<double>(paths.size());
  for (std::size_t k = 0; k < probs.size(); ++k) probs.flat(k) *= inv_s;
  return probs;
}

ParamSet pack_params(const DeepModel &model) {
  ParamSet params;
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const auto &layer = model.layers[l];
    const std::string prefix = "layer" + std::to_string(l) + ".";
    params.insert(prefix + "Z", layer.z);
    params.insert(prefix + "log_lengthscale", DenseMatrix(1, 1, layer.hyper.log_lengthscale));
    params.insert(prefix + "log_variance", DenseMatrix(1, 1, layer.hyper.log_variance));
    for (std::size_t c = 0; c < layer.channels.size(); ++c) {
      const std::string ch = prefix + "ch" + std::to_string(c) + ".";
      params.insert(ch + "m", layer.channels[c].mean);
      params.insert(ch + "Ls_raw", layer.channels[c].scale_raw);
    }
  }
  const auto &cls = model.classifier;
  params.insert("classifier.Z", cls.z);
  params.insert("classifier.w", DenseMatrix::column_vector(cls.weights.w));
  params.insert("classifier.log_lengthscale", DenseMatrix(1, 1, cls.hyper.log_lengthscale));
  params.insert("classifier.log_variance", DenseMatrix(1, 1, cls.hyper.log_variance));
  for (std::size_t c = 0; c < cls.classes.size(); ++c) {
    const std::string ch = "classifier.class" + std::to_string(c) + ".";
    params.insert(ch + "m", cls.classes[c].mean);
    params.insert(ch + "Ls_raw", cls.classes[c].scale_raw);
  }
  return params;
}

void unpack_params(const ParamSet &params, DeepModel &model) {
  auto take = [&params](const std::string &name, DenseMatrix &dst) {
    const DenseMatrix &src = params.at(name);
    if (!src.same_shape(dst)) {
      throw ShapeMismatch("unpack_params: shape mismatch for " + name);
    }
    dst = src;
  };
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    auto &layer = model.layers[l];
    const std::string prefix = "layer" + std::to_string(l) + ".";
    take(prefix + "Z", layer.z);
    layer.hyper.log_lengthscale = params.at(prefix + "log_lengthscale").flat(0);
    layer.hyper.log_variance = params.at(prefix + "log_variance").flat(0);
    for (std::size_t c = 0; c < layer.channels.size(); ++c) {
      const std::string ch = prefix + "ch" + std::to_string(c) + ".";
      take(ch + "m", layer.channels[c].mean);
      take(ch + "Ls_raw", layer.channels[c].scale_raw);
    }
  }
  auto &cls = model.classifier;
  take("classifier.Z", cls.z);
  const DenseMatrix &w = params.at("classifier.w");
  if (w.size() != cls.weights.w.size()) {
    throw ShapeMismatch("unpack_params: shape mismatch for classifier.w");
  }
  cls.weights.w.assign(w.data(), w.data() + w.size());
  cls.hyper.log_lengthscale = params.at("classifier.log_lengthscale").flat(0);
  cls.hyper.log_variance = params.at("classifier.log_variance").flat(0);
  for (std::size_t c = 0; c < cls.classes.size(); ++c) {
    const std::string ch = "classifier.class" + std::to_string(c) + ".";
    take(ch + "m", cls.classes[c].mean);
    take(ch + "Ls_raw", cls.classes[c].scale_raw);
  }
}

}  // namespace dcgp
