// Acceptance gate: one criterion per invocation (argv[1] in 1..8), or all in
// sequence when run without arguments. Each criterion prints a single
// [PASS]/[FAIL]/[SKIP] line; the exit code is nonzero iff something failed.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "dcgp/checkpoint.hpp"
#include "dcgp/data.hpp"
#include "dcgp/elbo.hpp"
#include "dcgp/errors.hpp"
#include "dcgp/grad.hpp"
#include "dcgp/kernels.hpp"
#include "dcgp/model.hpp"
#include "dcgp/patches.hpp"
#include "dcgp/train.hpp"
#include "oracle.hpp"
#include "synth.hpp"

using namespace dcgp;

namespace {

enum class Outcome { kPass, kFail, kSkip };

void report(int criterion, Outcome outcome, const std::string &detail) {
  const char *tag = outcome == Outcome::kPass   ? "[PASS]"
                    : outcome == Outcome::kFail ? "[FAIL]"
                                                : "[SKIP]";
  std::printf("%s criterion %d: %s\n", tag, criterion, detail.c_str());
  std::fflush(stdout);
}

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

std::string data_dir() {
  const char *env = std::getenv("DCGP_DATA_DIR");
  return env != nullptr ? std::string(env) : std::string("data");
}

std::string find_file(const std::vector<std::string> &candidates) {
  for (const auto &c : candidates) {
    if (std::filesystem::exists(c)) return c;
  }
  return "";
}

struct MnistPaths {
  std::string train_images, train_labels, test_images, test_labels;
  bool found = false;
};

MnistPaths mnist_paths() {
  const std::string dir = data_dir();
  MnistPaths p;
  p.train_images = find_file({dir + "/mnist/train-images-idx3-ubyte",
                              dir + "/train-images-idx3-ubyte"});
  p.train_labels = find_file({dir + "/mnist/train-labels-idx1-ubyte",
                              dir + "/train-labels-idx1-ubyte"});
  p.test_images = find_file({dir + "/mnist/t10k-images-idx3-ubyte",
                             dir + "/t10k-images-idx3-ubyte"});
  p.test_labels = find_file({dir + "/mnist/t10k-labels-idx1-ubyte",
                             dir + "/t10k-labels-idx1-ubyte"});
  p.found = !p.train_images.empty() && !p.train_labels.empty() &&
            !p.test_images.empty() && !p.test_labels.empty();
  return p;
}

std::vector<std::string> cifar_train_paths() {
  const std::string dir = data_dir();
  std::vector<std::string> out;
  for (int i = 1; i <= 5; ++i) {
    const std::string p = find_file(
        {dir + "/cifar-10-batches-bin/data_batch_" + std::to_string(i) + ".bin",
         dir + "/data_batch_" + std::to_string(i) + ".bin"});
    if (p.empty()) return {};
    out.push_back(p);
  }
  return out;
}

double max_abs(const DenseMatrix &a) {
  return max_abs_diff(a, DenseMatrix(a.rows(), a.cols()));
}

double accuracy(const DeepModel &model, const LabeledDataset &ds,
                std::size_t samples, std::uint64_t seed) {
  const DenseMatrix probs = predict(ds.images, model, samples, seed);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < probs.cols(); ++c) {
      if (probs(i, c) > probs(i, best)) best = c;
    }
    if (best == ds.labels[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(ds.size());
}

double window_mean(const std::vector<MetricsRow> &rows, std::size_t begin,
                   std::size_t count) {
  double acc = 0.0;
  for (std::size_t i = begin; i < begin + count; ++i) acc += rows[i].elbo;
  return acc / static_cast<double>(count);
}

// --- criterion 1: representation shapes ------------------------------------

Outcome criterion1(std::string &detail) {
  const Shape3 input{28, 28, 1};
  const PatchConfig cfg{5, 5, 1};
  const Shape3 first = output_shape(input, cfg, 10);
  const Shape3 second = output_shape(first, cfg, 10);
  const bool shapes_ok = first == Shape3{24, 24, 10} && second == Shape3{20, 20, 10};

  // Exercise the real forward pass, not just the shape arithmetic.
  ModelConfig config;
  config.input = input;
  config.layers = {LayerSpec{5, 5, 1, 10, 4}, LayerSpec{5, 5, 1, 10, 4}};
  config.classifier = LayerSpec{5, 5, 1, 0, 4};
  config.num_classes = 10;
  const DeepModel model = model_skeleton(config);
  Rng rng(1);
  const ImageTensor rep1 = layer_forward(ImageTensor(input, 0.1), model.layers[0], rng);
  const ImageTensor rep2 = layer_forward(rep1, model.layers[1], rng);
  const bool forward_ok = rep1.shape == first && rep2.shape == second;

  std::ostringstream out;
  out << "28x28x1 -> " << first.height << "x" << first.width << "x" << first.channels
      << " -> " << second.height << "x" << second.width << "x" << second.channels
      << (forward_ok ? " (layer_forward agrees)" : " (layer_forward DISAGREES)");
  detail = out.str();
  return shapes_ok && forward_ok ? Outcome::kPass : Outcome::kFail;
}

// --- criterion 2: conditional moments vs dense oracle ----------------------

Outcome criterion2(std::string &detail) {
  double worst = 0.0;
  for (std::uint64_t seed = 1; seed <= 50; ++seed) {
    std::mt19937_64 engine(seed);
    const std::size_t m_dim = 2 + engine() % 15;   // M <= 16
    const std::size_t p_dim = 1 + engine() % 16;   // P <= 16
    const std::size_t d = 2 + engine() % 6;
    const DenseMatrix z = random_matrix(m_dim, d, engine);
    const RBFHyper h{0.4, 0.2};
    const DenseMatrix mean = random_matrix(m_dim, 1, engine);
    const CholeskyFactor s_f = cholesky(random_spd(m_dim, engine), 0.0);
    SVGPLayerParams layer;
    layer.z = z;
    layer.hyper = h;
    layer.cfg = PatchConfig{1, 1, 1};
    layer.channels.push_back(VariationalGaussian{mean, scale_raw_from_tril(s_f.L)});
    const PatchMatrix patches = random_matrix(p_dim, d, engine);

    const ConditionalMoments mom = conditional_moments(patches, layer, true);
    const DenseMatrix s = matmul(s_f.L, transpose(s_f.L));
    const oracle::DenseConditional ref = oracle::dense_conditional(patches, z, h, mean, s);

    const double mean_scale = std::max(max_abs(ref.mean), 1e-12);
    const double cov_scale = std::max(max_abs(ref.cov), 1e-12);
    worst = std::max(worst, max_abs_diff(mom.mean, ref.mean) / mean_scale);
    worst = std::max(worst, max_abs_diff(mom.cov[0], ref.cov) / cov_scale);
  }
  std::ostringstream out;
  out << "50 instances, max relative error " << worst << " (< 1e-8 required)";
  detail = out.str();
  return worst < 1e-8 ? Outcome::kPass : Outcome::kFail;
}

// --- criterion 3: KL vs Monte Carlo oracle ----------------------------------

Outcome criterion3(std::string &detail) {
  std::size_t within = 0;
  double worst_sigmas = 0.0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    std::mt19937_64 engine(seed);
    const std::size_t n = 1 + engine() % 4;
    const DenseMatrix m = random_matrix(n, 1, engine);
    const DenseMatrix s = random_spd(n, engine, 0.4);
    const DenseMatrix k = random_spd(n, engine, 0.4);
    const CholeskyFactor kf = cholesky(k, 0.0);
    const CholeskyFactor sf = cholesky(s, 0.0);
    const double closed =
        kl_to_prior(VariationalGaussian{m, scale_raw_from_tril(sf.L)}, kf);
    const oracle::McEstimate mc = oracle::gaussian_kl_numeric(m, s, k, 1000000, seed);
    const double sigmas = std::abs(closed - mc.value) / mc.std_error;
    worst_sigmas = std::max(worst_sigmas, sigmas);
    if (sigmas <= 4.0) ++within;
  }
  std::mt19937_64 engine(99);
  const DenseMatrix k = random_spd(4, engine, 0.4);
  const CholeskyFactor kf = cholesky(k, 0.0);
  const double self =
      kl_to_prior(VariationalGaussian{DenseMatrix(4, 1), scale_raw_from_tril(kf.L)}, kf);

  std::ostringstream out;
  out << within << "/20 cases within 4 standard errors (worst " << worst_sigmas
      << " sigma); KL(q=p) = " << self;
  detail = out.str();
  return within == 20 && std::abs(self) < 1e-10 ? Outcome::kPass : Outcome::kFail;
}

// --- criterion 4: ELBO gradient vs finite differences -----------------------

Outcome criterion4(std::string &detail) {
  ModelConfig config;
  config.input = Shape3{6, 6, 1};
  config.layers = {LayerSpec{3, 3, 1, 2, 4}};
  config.classifier = LayerSpec{2, 2, 1, 0, 4};
  config.num_classes = 3;

  Rng rng(17);
  ImageBatch images;
  for (std::size_t i = 0; i < 4; ++i) {
    ImageTensor img(config.input);
    for (double &v : img.data) v = rng.normal();
    images.push_back(std::move(img));
  }
  const std::vector<std::size_t> labels{0, 1, 2, 0};

  TrainConfig tc;
  tc.num_inducing = 4;
  tc.seed = 5;
  tc.kmeans_sample = 40;
  const DeepModel model = build_model(config, images, tc);

  const ElboObjective obj(model, images, labels, 1, images.size());
  const FdReport fd = fd_check(
      [&obj](Tape &t, const std::vector<Var> &v, std::uint64_t s) {
        return obj(t, v, s);
      },
      pack_params(model), 7, 1e-5, 1e-4);

  std::ostringstream out;
  out << fd.tensors.size() << " parameter tensors, max relative error "
      << fd.max_rel_error << " (< 1e-4 required)";
  detail = out.str();
  return fd.all_passed ? Outcome::kPass : Outcome::kFail;
}

// --- criteria 5 and 6: desk-scale training ----------------------------------

struct DeskData {
  LabeledDataset train;
  LabeledDataset test;
  bool real_mnist = false;
};

DeskData desk_data() {
  DeskData d;
  const MnistPaths p = mnist_paths();
  if (p.found) {
    LabeledDataset full_train = load_mnist(p.train_images, p.train_labels);
    LabeledDataset full_test = load_mnist(p.test_images, p.test_labels);
    d.train = balanced_subset(full_train, 100);
    d.test = balanced_subset(full_test, 100);
    d.real_mnist = true;
  } else {
    d.train = balanced_subset(synth::make_dataset(120, 41), 100);
    d.test = balanced_subset(synth::make_dataset(120, 42), 100);
  }
  const ChannelStats stats = normalize(d.train);
  normalize(d.test, stats);
  return d;
}

DeepModel desk_model(const DeskData &d, TrainConfig &tc) {
  ModelConfig config;
  config.input = d.train.images[0].shape;
  config.classifier = LayerSpec{5, 5, 1, 0, 64};
  config.num_classes = 10;
  tc.minibatch = 32;
  tc.num_inducing = 64;
  tc.seed = 0;
  tc.log_every = 1;
  tc.ckpt_every = 100000;
  return build_model(config, d.train.images, tc);
}

Outcome criterion5(std::string &detail) {
  const DeskData d = desk_data();
  TrainConfig tc;
  DeepModel model = desk_model(d, tc);
  const TrainResult res = train_loop(model, d.train.images, d.train.labels, tc, 5000);

  const double first = window_mean(res.metrics, 0, 100);
  const double last = window_mean(res.metrics, res.metrics.size() - 100, 100);
  const double acc = accuracy(model, d.test, 25, 123);
  const bool ok = acc >= 0.90 && last > first &&
                  last > res.metrics.front().elbo;

  std::ostringstream out;
  out << "test accuracy " << 100.0 * acc << "%, smoothed ELBO " << first << " -> "
      << last;
  if (!d.real_mnist) {
    out << " [MNIST files not found under '" << data_dir()
        << "'; protocol run on the bundled synthetic glyph dataset instead]";
  }
  detail = out.str();
  if (!ok) return Outcome::kFail;
  return d.real_mnist ? Outcome::kPass : Outcome::kSkip;
}

Outcome criterion6(std::string &detail) {
  const DeskData d = desk_data();
  TrainConfig tc;
  DeepModel donor = desk_model(d, tc);
  train_loop(donor, d.train.images, d.train.labels, tc, 5000);
  const double acc1 = accuracy(donor, d.test, 25, 123);

  DeepModel deep = deepen(donor, LayerSpec{1, 1, 1, 1, 64}, d.train.images, tc);
  const TrainResult res = train_loop(deep, d.train.images, d.train.labels, tc, 5000);
  const double acc2 = accuracy(deep, d.test, 25, 123);

  const double initial = window_mean(res.metrics, 0, 100);
  const double final_elbo = window_mean(res.metrics, res.metrics.size() - 100, 100);
  const bool ok = acc2 >= acc1 - 0.01 && final_elbo > initial &&
                  final_elbo > res.metrics.front().elbo;

  std::ostringstream out;
  out << "1-layer " << 100.0 * acc1 << "% vs deepened 2-layer " << 100.0 * acc2
      << "%; 2-layer ELBO " << res.metrics.front().elbo << " -> " << final_elbo;
  if (!d.real_mnist) {
    out << " [MNIST files not found under '" << data_dir()
        << "'; protocol run on the bundled synthetic glyph dataset instead]";
  }
  detail = out.str();
  if (!ok) return Outcome::kFail;
  return d.real_mnist ? Outcome::kPass : Outcome::kSkip;
}

// --- criterion 7: schedule, checkpoint, determinism --------------------------

std::string strip_seconds(const std::string &csv) {
  std::istringstream in(csv);
  std::ostringstream out;
  std::string line;
  while (std::getline(in, line)) {
    out << line.substr(0, line.rfind(',')) << '\n';
  }
  return out.str();
}

std::string slurp(const std::string &path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

Outcome criterion7(std::string &detail) {
  TrainConfig tc;
  const bool sched_ok = lr_schedule(0, tc) == 0.01 &&
                        lr_schedule(100000, tc) == 0.001 &&
                        lr_schedule(10000000, tc) == 1e-5;

  const std::filesystem::path dir =
      std::filesystem::temp_directory_path() /
      ("dcgp_accept7_" + std::to_string(std::random_device{}()));
  std::filesystem::create_directories(dir);

  const LabeledDataset data = take_first(synth::make_dataset(4, 21), 24);
  ModelConfig config;
  config.input = data.images[0].shape;
  config.classifier = LayerSpec{7, 7, 3, 0, 8};
  config.num_classes = 10;
  TrainConfig small;
  small.minibatch = 8;
  small.num_inducing = 8;
  small.kmeans_sample = 64;
  small.log_every = 1;
  small.ckpt_every = 100;
  small.seed = 3;

  // Checkpoint round trip: save, load, resave, compare bytes.
  DeepModel model = build_model(config, data.images, small);
  const std::string ck1 = (dir / "a.ckpt").string();
  const std::string ck2 = (dir / "b.ckpt").string();
  AdamState adam = AdamState::init_like(pack_params(model));
  adam.step = 77;
  const TrainerState trainer = adam.to_trainer();
  save_checkpoint(ck1, model, &trainer);
  const Checkpoint loaded = load_checkpoint(ck1);
  const TrainerState trainer2 = {loaded.trainer->step, loaded.trainer->first_moment,
                                 loaded.trainer->second_moment};
  save_checkpoint(ck2, loaded.model, &trainer2);
  const bool ckpt_ok = slurp(ck1) == slurp(ck2) && !slurp(ck1).empty();

  // End-to-end determinism: identical runs, identical metrics (the wall-time
  // seconds column is the one permitted difference).
  auto run = [&](const std::string &tag) {
    DeepModel m = build_model(config, data.images, small);
    const std::string metrics = (dir / (tag + ".csv")).string();
    train_loop(m, data.images, data.labels, small, 25, "", metrics);
    return std::make_pair(pack_params(m), slurp(metrics));
  };
  const auto [params_a, csv_a] = run("a");
  const auto [params_b, csv_b] = run("b");
  bool params_equal = true;
  for (const auto &t : params_a) {
    if (t.value.storage() != params_b.at(t.name).storage()) params_equal = false;
  }
  const bool determinism_ok =
      params_equal && strip_seconds(csv_a) == strip_seconds(csv_b) && !csv_a.empty();

  std::filesystem::remove_all(dir);
  std::ostringstream out;
  out << "lr(0)=" << lr_schedule(0, tc) << ", lr(100000)=" << lr_schedule(100000, tc)
      << ", floor=" << lr_schedule(10000000, tc)
      << "; checkpoint round trip bit-identical: " << (ckpt_ok ? "yes" : "NO")
      << "; identical runs, identical metrics (seconds column excluded): "
      << (determinism_ok ? "yes" : "NO");
  detail = out.str();
  return sched_ok && ckpt_ok && determinism_ok ? Outcome::kPass : Outcome::kFail;
}

// --- criterion 8: format fidelity --------------------------------------------

Outcome criterion8(std::string &detail) {
  const std::filesystem::path dir =
      std::filesystem::temp_directory_path() /
      ("dcgp_accept8_" + std::to_string(std::random_device{}()));
  std::filesystem::create_directories(dir);

  // IDX fixture with known bytes.
  {
    std::ofstream out((dir / "imgs").string(), std::ios::binary);
    const unsigned char hdr[] = {0, 0, 8, 3, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0, 2};
    const unsigned char px[] = {0, 51, 102, 255};
    out.write(reinterpret_cast<const char *>(hdr), sizeof hdr);
    out.write(reinterpret_cast<const char *>(px), sizeof px);
  }
  {
    std::ofstream out((dir / "lbls").string(), std::ios::binary);
    const unsigned char hdr[] = {0, 0, 8, 1, 0, 0, 0, 1, 7};
    out.write(reinterpret_cast<const char *>(hdr), sizeof hdr);
  }
  const LabeledDataset idx = load_mnist((dir / "imgs").string(), (dir / "lbls").string());
  const bool idx_ok = idx.size() == 1 && idx.labels[0] == 7 &&
                      idx.images[0].at(0, 0, 0) == 0.0 &&
                      idx.images[0].at(0, 1, 0) == 51.0 / 255.0 &&
                      idx.images[0].at(1, 0, 0) == 102.0 / 255.0 &&
                      idx.images[0].at(1, 1, 0) == 1.0;

  // CIFAR fixture: planar planes decode to interleaved channels.
  {
    std::ofstream out((dir / "cifar.bin").string(), std::ios::binary);
    std::vector<unsigned char> rec(3073, 0);
    rec[0] = 3;
    for (std::size_t i = 0; i < 1024; ++i) {
      rec[1 + i] = 10;
      rec[1 + 1024 + i] = 20;
      rec[1 + 2048 + i] = 30;
    }
    out.write(reinterpret_cast<const char *>(rec.data()),
              static_cast<std::streamsize>(rec.size()));
  }
  const LabeledDataset cif = load_cifar10({(dir / "cifar.bin").string()});
  const bool cif_ok = cif.size() == 1 && cif.labels[0] == 3 &&
                      cif.images[0].at(0, 0, 0) == 10.0 / 255.0 &&
                      cif.images[0].at(0, 0, 1) == 20.0 / 255.0 &&
                      cif.images[0].at(31, 31, 2) == 30.0 / 255.0;
  std::filesystem::remove_all(dir);

  std::ostringstream out;
  out << "fixtures decode exactly: " << (idx_ok && cif_ok ? "yes" : "NO");

  bool any_missing = false;
  bool full_ok = true;
  const MnistPaths mp = mnist_paths();
  if (mp.found) {
    const LabeledDataset tr = load_mnist(mp.train_images, mp.train_labels);
    const LabeledDataset te = load_mnist(mp.test_images, mp.test_labels);
    full_ok = full_ok && tr.size() == 60000 && te.size() == 10000;
    out << "; MNIST N=" << tr.size() << "/" << te.size();
  } else {
    any_missing = true;
    out << "; MNIST files not present under '" << data_dir() << "' (skipped)";
  }
  const std::vector<std::string> batches = cifar_train_paths();
  const std::string cifar_test = find_file(
      {data_dir() + "/cifar-10-batches-bin/test_batch.bin", data_dir() + "/test_batch.bin"});
  if (!batches.empty() && !cifar_test.empty()) {
    const LabeledDataset tr = load_cifar10(batches);
    const LabeledDataset te = load_cifar10({cifar_test});
    full_ok = full_ok && tr.size() == 50000 && te.size() == 10000;
    out << "; CIFAR-10 N=" << tr.size() << "/" << te.size();
  } else {
    any_missing = true;
    out << "; CIFAR-10 files not present under '" << data_dir() << "' (skipped)";
  }

  detail = out.str();
  if (!(idx_ok && cif_ok && full_ok)) return Outcome::kFail;
  return any_missing ? Outcome::kSkip : Outcome::kPass;
}

}  // namespace

int main(int argc, char **argv) {
  using Fn = Outcome (*)(std::string &);
  const Fn criteria[] = {criterion1, criterion2, criterion3, criterion4,
                         criterion5, criterion6, criterion7, criterion8};
  int first = 1;
  int last = 8;
  if (argc > 1) {
    first = last = std::atoi(argv[1]);
    if (first < 1 || first > 8) {
      std::fprintf(stderr, "usage: %s [criterion 1..8]\n", argv[0]);
      return 2;
    }
  }
  bool failed = false;
  for (int i = first; i <= last; ++i) {
    std::string detail;
    Outcome outcome = Outcome::kFail;
    try {
      outcome = criteria[i - 1](detail);
    } catch (const std::exception &e) {
      detail = std::string("unexpected exception: ") + e.what();
    }
    report(i, outcome, detail);
    if (outcome == Outcome::kFail) failed = true;
  }
  return failed ? 1 : 0;
}
