#include <doctest.h>

#include <cmath>
#include <random>

#include "dcgp/errors.hpp"
#include "dcgp/kernels.hpp"
#include "dcgp/model.hpp"
#include "dcgp/rng.hpp"
#include "oracle.hpp"

using namespace dcgp;

namespace {

DenseMatrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64 &engine) {
  std::normal_distribution<double> normal;
  DenseMatrix m(r, c);
  for (std::size_t k = 0; k < m.size(); ++k) m.flat(k) = normal(engine);
  return m;
}

DenseMatrix random_spd(std::size_t n, std::mt19937_64 &engine, double ridge = 0.5) {
  DenseMatrix b = random_matrix(n, n, engine);
  DenseMatrix a = matmul(b, transpose(b));
  for (std::size_t i = 0; i < n; ++i) {
    a(i, i) += ridge;
    for (std::size_t j = i + 1; j < n; ++j) a(j, i) = a(i, j);
  }
  return a;
}

// Layer with a single channel built from explicit (m, S).
SVGPLayerParams make_layer(const DenseMatrix &z, const RBFHyper &h,
                           const DenseMatrix &m, const DenseMatrix &s_chol) {
  SVGPLayerParams layer;
  layer.z = z;
  layer.hyper = h;
  layer.cfg = PatchConfig{1, 1, 1};
  layer.channels.push_back(VariationalGaussian{m, scale_raw_from_tril(s_chol)});
  return layer;
}

}  // namespace

TEST_CASE("scale parameterization round-trips a triangular factor") {
  std::mt19937_64 engine(1);
  DenseMatrix l = random_matrix(4, 4, engine);
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = i + 1; j < 4; ++j) l(i, j) = 0.0;
    l(i, i) = std::abs(l(i, i)) + 0.2;
  }
  const DenseMatrix back = scale_tril(scale_raw_from_tril(l));
  CHECK(max_abs_diff(back, l) < 1e-12);
}

TEST_CASE("prior q recovers prior conditional moments") {
  std::mt19937_64 engine(2);
  const DenseMatrix z = random_matrix(4, 3, engine);
  const RBFHyper h{0.2, 0.1};
  const DenseMatrix kzz = inducing_gram(z, h);
  const CholeskyFactor f = cholesky(kzz);
  SVGPLayerParams layer = make_layer(z, h, DenseMatrix(4, 1), f.L);
  const PatchMatrix patches = random_matrix(3, 3, engine);
  const ConditionalMoments mom = conditional_moments(patches, layer, true);
  const DenseMatrix kff = kernel_matrix(patches, patches, h);
  CHECK(max_abs_diff(mom.mean, DenseMatrix(3, 1)) < 1e-8);
  CHECK(max_abs_diff(mom.cov[0], kff) < 1e-6);
}

TEST_CASE("zero-S conditioning interpolates at the inducing inputs") {
  std::mt19937_64 engine(3);
  const DenseMatrix z = random_matrix(4, 2, engine);
  const RBFHyper h{0.3, 0.0};
  const DenseMatrix m = random_matrix(4, 1, engine);
  // S ~ 0 via a tiny factor (exact zero is not representable in softplus).
  SVGPLayerParams layer = make_layer(z, h, m, scale(DenseMatrix::identity(4), 1e-9));
  const ConditionalMoments mom = conditional_moments(z, layer, false);
  CHECK(max_abs_diff(mom.mean, m) < 1e-5);
  for (std::size_t i = 0; i < 4; ++i) CHECK(mom.var(i, 0) < 1e-4);
}

TEST_CASE("conditional_moments matches the dense-inverse oracle on seeded instances") {
  for (std::uint64_t seed = 1; seed <= 25; ++seed) {
    std::mt19937_64 engine(seed);
    const std::size_t m_dim = 2 + engine() % 5;
    const std::size_t p_dim = 1 + engine() % 5;
    const std::size_t d = 2 + engine() % 3;
    const DenseMatrix z = random_matrix(m_dim, d, engine);
    const RBFHyper h{0.4, 0.2};
    const DenseMatrix mean = random_matrix(m_dim, 1, engine);
    const CholeskyFactor s_f = cholesky(random_spd(m_dim, engine), 0.0);
    SVGPLayerParams layer = make_layer(z, h, mean, s_f.L);
    const PatchMatrix patches = random_matrix(p_dim, d, engine);

    const ConditionalMoments mom = conditional_moments(patches, layer, true);
    const DenseMatrix s = matmul(s_f.L, transpose(s_f.L));
    const oracle::DenseConditional ref = oracle::dense_conditional(patches, z, h, mean, s);

    CHECK(max_abs_diff(mom.mean, ref.mean) < 1e-8);
    CHECK(max_abs_diff(mom.cov[0], ref.cov) < 1e-7);
    // Diagonal mode agrees with the diagonal of the full covariance.
    const ConditionalMoments diag = conditional_moments(patches, layer, false);
    for (std::size_t i = 0; i < p_dim; ++i) {
      CHECK(diag.var(i, 0) == doctest::Approx(mom.cov[0](i, i)).epsilon(1e-10));
    }
  }
}

TEST_CASE("conditional variance stays below prior variance when S <= Kzz") {
  std::mt19937_64 engine(9);
  const DenseMatrix z = random_matrix(5, 3, engine);
  const RBFHyper h{0.1, 0.3};
  const CholeskyFactor f = cholesky(inducing_gram(z, h));
  const PatchMatrix patches = random_matrix(6, 3, engine);
  for (double alpha : {0.0, 0.25, 0.5, 1.0}) {
    SVGPLayerParams layer = make_layer(z, h, DenseMatrix(5, 1),
                                       scale(f.L, std::max(std::sqrt(alpha), 1e-9)));
    const ConditionalMoments mom = conditional_moments(patches, layer, false);
    for (std::size_t i = 0; i < 6; ++i) CHECK(mom.var(i, 0) <= h.variance() + 1e-8);
  }
}

TEST_CASE("sample_layer reparameterization basics") {
  DenseMatrix mean(2, 2, {1.0, 2.0, 3.0, 4.0});
  DenseMatrix var(2, 2, {0.5, 0.0, 2.0, 1.0});
  CHECK(max_abs_diff(sample_layer(mean, var, DenseMatrix(2, 2)), mean) == 0.0);
  DenseMatrix eps(2, 2, {1.0, 1.0, -1.0, 2.0});
  const DenseMatrix s = sample_layer(mean, DenseMatrix(2, 2), eps);
  CHECK(max_abs_diff(s, mean) == 0.0);  // var = 0 ignores eps
  DenseMatrix bad(2, 2, {-1.0, 0.0, 0.0, 0.0});
  CHECK_THROWS_AS(sample_layer(mean, bad, eps), NegativeVariance);
}

TEST_CASE("sample_layer moments match over many draws") {
  DenseMatrix mean(1, 1, 2.0);
  DenseMatrix var(1, 1, 3.0);
  std::mt19937_64 engine(17);
  std::normal_distribution<double> normal;
  const std::size_t n = 100000;
  double sum = 0.0;
  double sum_sq = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    DenseMatrix eps(1, 1, normal(engine));
    const double x = sample_layer(mean, var, eps)(0, 0);
    sum += x;
    sum_sq += x * x;
  }
  const double mc_mean = sum / n;
  const double mc_var = sum_sq / n - mc_mean * mc_mean;
  CHECK(std::abs(mc_mean - 2.0) < 3.0 * std::sqrt(3.0 / n));
  CHECK(std::abs(mc_var - 3.0) < 3.0 * 3.0 * std::sqrt(2.0 / n));
}

TEST_CASE("kl_to_prior closed-form spot values") {
  // q = p.
  std::mt19937_64 engine(21);
  const DenseMatrix k = random_spd(4, engine);
  const CholeskyFactor f = cholesky(k, 0.0);
  CHECK(std::abs(kl_to_prior(VariationalGaussian{DenseMatrix(4, 1),
                                                 scale_raw_from_tril(f.L)},
                             f)) < 1e-10);
  // Scalar case m=1, S=1, K=1 -> 1/2.
  const CholeskyFactor unit = cholesky(DenseMatrix::identity(1), 0.0);
  CHECK(kl_to_prior(VariationalGaussian{DenseMatrix(1, 1, 1.0),
                                        scale_raw_from_tril(DenseMatrix::identity(1))},
                    unit) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("kl_to_prior is nonnegative on random instances") {
  for (std::uint64_t seed = 40; seed < 60; ++seed) {
    std::mt19937_64 engine(seed);
    const DenseMatrix k = random_spd(3, engine);
    const CholeskyFactor f = cholesky(k, 0.0);
    const CholeskyFactor s_f = cholesky(random_spd(3, engine), 0.0);
    const DenseMatrix m = random_matrix(3, 1, engine);
    CHECK(kl_to_prior(VariationalGaussian{m, scale_raw_from_tril(s_f.L)}, f) >= 0.0);
  }
}

TEST_CASE("kl_to_prior matches the Monte Carlo oracle") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    std::mt19937_64 engine(seed * 13);
    const std::size_t n = 2 + seed % 3;
    const DenseMatrix k = random_spd(n, engine);
    const DenseMatrix s = random_spd(n, engine);
    const DenseMatrix m = random_matrix(n, 1, engine);
    const CholeskyFactor kf = cholesky(k, 0.0);
    const CholeskyFactor sf = cholesky(s, 0.0);
    const double closed = kl_to_prior(VariationalGaussian{m, scale_raw_from_tril(sf.L)}, kf);
    const oracle::McEstimate mc = oracle::gaussian_kl_numeric(m, s, k, 200000, seed);
    CHECK(std::abs(closed - mc.value) < 4.0 * mc.std_error);
  }
}

TEST_CASE("kl gradient in m vanishes at q = p") {
  std::mt19937_64 engine(31);
  const DenseMatrix k = random_spd(3, engine);
  const CholeskyFactor f = cholesky(k, 0.0);
  const DenseMatrix raw = scale_raw_from_tril(f.L);
  const double h = 1e-4;
  for (std::size_t i = 0; i < 3; ++i) {
    DenseMatrix plus(3, 1);
    plus(i, 0) = h;
    DenseMatrix minus(3, 1);
    minus(i, 0) = -h;
    const double d = (kl_to_prior(VariationalGaussian{plus, raw}, f) -
                      kl_to_prior(VariationalGaussian{minus, raw}, f)) /
                     (2.0 * h);
    CHECK(std::abs(d) < 1e-10);  // exactly symmetric quadratic
  }
}

TEST_CASE("layer_forward produces the paper's shapes") {
  std::mt19937_64 engine(51);
  SVGPLayerParams layer;
  layer.cfg = PatchConfig{5, 5, 1};
  layer.z = random_matrix(8, 25, engine);
  layer.hyper = RBFHyper{1.0, 0.0};
  const CholeskyFactor f = cholesky(inducing_gram(layer.z, layer.hyper));
  for (std::size_t c = 0; c < 10; ++c) {
    layer.channels.push_back(
        VariationalGaussian{DenseMatrix(8, 1), scale_raw_from_tril(scale(f.L, 1e-3))});
  }
  ImageTensor img(Shape3{28, 28, 1});
  for (double &v : img.data) v = std::normal_distribution<double>()(engine);
  Rng rng(4);
  const ImageTensor out = layer_forward(img, layer, rng);
  CHECK(out.shape == Shape3{24, 24, 10});

  SVGPLayerParams layer2 = layer;
  layer2.z = random_matrix(8, 250, engine);
  const CholeskyFactor f2 = cholesky(inducing_gram(layer2.z, layer2.hyper));
  for (std::size_t c = 0; c < 10; ++c) {
    layer2.channels[c] =
        VariationalGaussian{DenseMatrix(8, 1), scale_raw_from_tril(scale(f2.L, 1e-3))};
  }
  const ImageTensor out2 = layer_forward(out, layer2, rng);
  CHECK(out2.shape == Shape3{20, 20, 10});
}

TEST_CASE("layer_forward with zero mean and tiny S at eps is near zero") {
  std::mt19937_64 engine(61);
  SVGPLayerParams layer;
  layer.cfg = PatchConfig{2, 2, 1};
  layer.z = random_matrix(4, 4, engine);
  layer.hyper = RBFHyper{0.5, 0.0};
  layer.channels.push_back(
      VariationalGaussian{DenseMatrix(4, 1),
                          scale_raw_from_tril(scale(DenseMatrix::identity(4), 1e-12))});
  ImageTensor img(Shape3{3, 3, 1});
  // Place the patches exactly at rows of Z so the Nystrom residual vanishes.
  const PatchMatrix patches(4, 4, layer.z.storage());
  const ConditionalMoments mom = conditional_moments(patches, layer, false);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(std::abs(mom.mean(i, 0)) < 1e-9);
    CHECK(mom.var(i, 0) < 1e-6);
  }
}
