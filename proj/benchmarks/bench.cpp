#include <benchmark/benchmark.h>

#include <random>

#include "dcgp/checkpoint.hpp"
#include "dcgp/elbo.hpp"
#include "dcgp/kernels.hpp"
#include "dcgp/matrix.hpp"
#include "dcgp/model.hpp"
#include "dcgp/train.hpp"

using namespace dcgp;

namespace {

DenseMatrix random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
  std::mt19937_64 engine(seed);
  std::normal_distribution<double> normal;
  DenseMatrix m(r, c);
  for (std::size_t k = 0; k < m.size(); ++k) m.flat(k) = normal(engine);
  return m;
}

void bm_kernel_matrix(benchmark::State &state) {
  const std::size_t p = static_cast<std::size_t>(state.range(0));
  const DenseMatrix a = random_matrix(p, 25, 1);
  const DenseMatrix z = random_matrix(64, 25, 2);
  const RBFHyper h{0.3, 0.0};
  for (auto _ : state) {
    benchmark::DoNotOptimize(kernel_matrix(a, z, h));
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) *
                          static_cast<std::int64_t>(p * 64));
}

void bm_cholesky(benchmark::State &state) {
  const std::size_t n = static_cast<std::size_t>(state.range(0));
  const DenseMatrix b = random_matrix(n, n, 3);
  DenseMatrix a = matmul(b, transpose(b));
  for (std::size_t i = 0; i < n; ++i) a(i, i) += 1.0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(cholesky(a));
  }
}

// One full training-style ELBO gradient on a classifier-only MNIST-shaped
// model: the dominant per-step cost of train_loop.
void bm_elbo_gradient(benchmark::State &state) {
  const std::size_t batch = static_cast<std::size_t>(state.range(0));
  ModelConfig config;
  config.input = Shape3{28, 28, 1};
  config.classifier = LayerSpec{5, 5, 1, 0, 64};
  config.num_classes = 10;
  std::mt19937_64 engine(4);
  std::normal_distribution<double> normal;
  ImageBatch images;
  std::vector<std::size_t> labels;
  for (std::size_t i = 0; i < batch; ++i) {
    ImageTensor img(config.input);
    for (double &v : img.data) v = normal(engine);
    images.push_back(std::move(img));
    labels.push_back(i % 10);
  }
  TrainConfig tc;
  tc.num_inducing = 64;
  tc.kmeans_sample = 512;
  const DeepModel model = build_model(config, images, tc);
  std::uint64_t seed = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(elbo_gradient(images, labels, model, 1, 1000, seed++));
  }
}

}  // namespace

BENCHMARK(bm_kernel_matrix)->Arg(576)->Arg(4608);
BENCHMARK(bm_cholesky)->Arg(64)->Arg(384);
BENCHMARK(bm_elbo_gradient)->Arg(8)->Arg(32)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
