// dcgp: train / deepen / evaluate / inspect deep convolutional GP models.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dcgp/checkpoint.hpp"
#include "dcgp/data.hpp"
#include "dcgp/elbo.hpp"
#include "dcgp/errors.hpp"
#include "dcgp/model.hpp"
#include "dcgp/train.hpp"

using namespace dcgp;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

std::string default_data_dir() {
  const char *env = std::getenv("DCGP_DATA_DIR");
  return env != nullptr ? std::string(env) : std::string("data");
}

std::string find_file(const std::vector<std::string> &candidates) {
  for (const auto &c : candidates) {
    if (std::filesystem::exists(c)) return c;
  }
  throw TruncatedFile("dataset file not found; tried '" + candidates.front() + "'");
}

struct DatasetOptions {
  std::string name = "mnist";
  std::string dir = default_data_dir();
  std::size_t subsample = 0;  // balanced subset size, 0 = full
};

LabeledDataset load_split(const DatasetOptions &opt, bool train_split) {
  LabeledDataset ds;
  if (opt.name == "mnist") {
    const char *img = train_split ? "train-images-idx3-ubyte" : "t10k-images-idx3-ubyte";
    const char *lbl = train_split ? "train-labels-idx1-ubyte" : "t10k-labels-idx1-ubyte";
    ds = load_mnist(find_file({opt.dir + "/mnist/" + img, opt.dir + "/" + img}),
                    find_file({opt.dir + "/mnist/" + lbl, opt.dir + "/" + lbl}));
  } else if (opt.name == "cifar10") {
    std::vector<std::string> paths;
    if (train_split) {
      for (int i = 1; i <= 5; ++i) {
        const std::string f = "data_batch_" + std::to_string(i) + ".bin";
        paths.push_back(find_file({opt.dir + "/cifar-10-batches-bin/" + f, opt.dir + "/" + f}));
      }
    } else {
      paths.push_back(find_file(
          {opt.dir + "/cifar-10-batches-bin/test_batch.bin", opt.dir + "/test_batch.bin"}));
    }
    ds = load_cifar10(paths);
  } else {
    throw ConfigError("unknown dataset '" + opt.name + "' (expected mnist or cifar10)");
  }
  if (opt.subsample > 0) {
    if (opt.subsample % ds.num_classes != 0) {
      throw ConfigError("--subsample must be a multiple of the class count");
    }
    ds = balanced_subset(ds, opt.subsample / ds.num_classes);
  }
  return ds;
}

void add_dataset_flags(CLI::App *cmd, DatasetOptions &opt) {
  cmd->add_option("--dataset", opt.name, "mnist or cifar10")->capture_default_str();
  cmd->add_option("--data-dir", opt.dir, "dataset root (default $DCGP_DATA_DIR or ./data)")
      ->capture_default_str();
  cmd->add_option("--subsample", opt.subsample,
                  "balanced subset size per split (0 = full dataset)");
}

struct ArchOptions {
  std::size_t layers = 0;
  std::size_t filter = 5;
  std::string strides = "2,1,1";
  std::size_t channels = 10;
  std::size_t inducing = 384;
  std::size_t classifier_filter = 5;
  std::size_t classifier_stride = 1;
};

std::vector<std::size_t> parse_strides(const std::string &csv) {
  std::vector<std::size_t> out;
  std::istringstream in(csv);
  std::string tok;
  while (std::getline(in, tok, ',')) {
    const long v = std::stol(tok);
    if (v < 1) throw ConfigError("strides must be positive");
    out.push_back(static_cast<std::size_t>(v));
  }
  return out;
}

ModelConfig make_config(const ArchOptions &arch, const LabeledDataset &train) {
  ModelConfig config;
  config.input = train.images[0].shape;
  config.num_classes = train.num_classes;
  const std::vector<std::size_t> strides = parse_strides(arch.strides);
  for (std::size_t l = 0; l < arch.layers; ++l) {
    const std::size_t stride = l < strides.size() ? strides[l] : strides.back();
    config.layers.push_back(
        LayerSpec{arch.filter, arch.filter, stride, arch.channels, arch.inducing});
  }
  config.classifier =
      LayerSpec{arch.classifier_filter, arch.classifier_filter, arch.classifier_stride,
                0, arch.inducing};
  return config;
}

struct Evaluation {
  double accuracy = 0.0;
  double mean_loglik = 0.0;
  std::vector<std::vector<std::size_t>> confusion;  // [actual][predicted]
};

Evaluation evaluate_model(const DeepModel &model, const LabeledDataset &ds,
                          std::size_t samples, std::uint64_t seed) {
  const std::vector<DenseMatrix> paths = forward_sample(ds.images, model, samples, seed);
  Evaluation ev;
  ev.confusion.assign(model.num_classes, std::vector<std::size_t>(model.num_classes, 0));
  for (std::size_t i = 0; i < ds.size(); ++i) {
    DenseMatrix logits(samples, model.num_classes);
    for (std::size_t s = 0; s < samples; ++s) {
      for (std::size_t c = 0; c < model.num_classes; ++c) logits(s, c) = paths[s](i, c);
    }
    ev.mean_loglik += expected_loglik(logits, ds.labels[i]);
    // Mean softmax over samples, matching predict().
    std::vector<double> probs(model.num_classes, 0.0);
    for (std::size_t s = 0; s < samples; ++s) {
      double mx = logits(s, 0);
      for (std::size_t c = 1; c < model.num_classes; ++c) mx = std::max(mx, logits(s, c));
      double z = 0.0;
      for (std::size_t c = 0; c < model.num_classes; ++c) z += std::exp(logits(s, c) - mx);
      for (std::size_t c = 0; c < model.num_classes; ++c) {
        probs[c] += std::exp(logits(s, c) - mx) / z;
      }
    }
    const std::size_t pred = static_cast<std::size_t>(
        std::max_element(probs.begin(), probs.end()) - probs.begin());
    if (pred == ds.labels[i]) ev.accuracy += 1.0;
    ev.confusion[ds.labels[i]][pred] += 1;
  }
  ev.accuracy /= static_cast<double>(ds.size());
  ev.mean_loglik /= static_cast<double>(ds.size());
  return ev;
}

void apply_stats(LabeledDataset &ds, const DeepModel &model) {
  normalize(ds, ChannelStats{model.norm_mean, model.norm_std});
}

int cmd_train(const DatasetOptions &data_opt, const ArchOptions &arch, TrainConfig &tc,
              std::uint64_t max_steps, const std::string &out_dir,
              const std::string &resume, std::size_t eval_samples) {
  std::filesystem::create_directories(out_dir);
  const std::string ckpt_path = out_dir + "/model.ckpt";
  const std::string metrics_path = out_dir + "/metrics.csv";

  LabeledDataset train = load_split(data_opt, true);
  LabeledDataset test = load_split(data_opt, false);

  DeepModel model;
  AdamState adam;
  const AdamState *resume_ptr = nullptr;
  if (!resume.empty()) {
    Checkpoint ckpt = load_checkpoint(resume);
    if (!ckpt.trainer.has_value()) {
      throw ConfigError("--resume checkpoint has no trainer state");
    }
    model = std::move(ckpt.model);
    adam = AdamState::from_trainer(*ckpt.trainer);
    resume_ptr = &adam;
    apply_stats(train, model);
    apply_stats(test, model);
  } else {
    const ChannelStats stats = normalize(train);
    ModelConfig config = make_config(arch, train);
    config.norm_mean = stats.mean;
    config.norm_std = stats.std;
    model = build_model(config, train.images, tc);
    normalize(test, stats);
  }

  const TrainResult res =
      train_loop(model, train.images, train.labels, tc, max_steps, ckpt_path,
                 metrics_path, resume_ptr);
  const Evaluation ev = evaluate_model(model, test, eval_samples, mix_seed(tc.seed, 0xE7A1));
  std::printf("steps: %llu\n", static_cast<unsigned long long>(res.steps_done));
  if (!res.metrics.empty()) {
    std::printf("final ELBO: %.6f\n", res.metrics.back().elbo);
  }
  std::printf("test accuracy: %.4f\n", ev.accuracy);
  std::printf("test mean log-likelihood: %.6f\n", ev.mean_loglik);
  std::printf("checkpoint: %s\nmetrics: %s\n", ckpt_path.c_str(), metrics_path.c_str());
  return 0;
}

int cmd_deepen(const std::string &donor_path, const DatasetOptions &data_opt,
               const LayerSpec &spec, TrainConfig &tc, const std::string &out_path) {
  const Checkpoint donor = load_checkpoint(donor_path);
  LabeledDataset train = load_split(data_opt, true);
  apply_stats(train, donor.model);
  LayerSpec resolved = spec;
  if (resolved.channels == 0) {
    resolved.channels = donor.model.classifier_input_shape().channels;
  }
  const DeepModel deeper = deepen(donor.model, resolved, train.images, tc);
  save_checkpoint(out_path, deeper);
  std::printf("deepened %zu -> %zu conv layers\ncheckpoint: %s\n",
              donor.model.layers.size(), deeper.layers.size(), out_path.c_str());
  return 0;
}

int cmd_evaluate(const std::string &ckpt_path, const DatasetOptions &data_opt,
                 bool train_split, std::size_t samples, std::uint64_t seed,
                 const std::string &confusion_path) {
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  LabeledDataset ds = load_split(data_opt, train_split);
  apply_stats(ds, ckpt.model);
  const Evaluation ev = evaluate_model(ckpt.model, ds, samples, seed);
  std::printf("examples: %zu\naccuracy: %.4f\nmean log-likelihood: %.6f\n", ds.size(),
              ev.accuracy, ev.mean_loglik);
  if (!confusion_path.empty()) {
    std::ofstream out(confusion_path);
    out << "actual\\predicted";
    for (std::size_t c = 0; c < ckpt.model.num_classes; ++c) out << ',' << c;
    out << '\n';
    for (std::size_t a = 0; a < ckpt.model.num_classes; ++a) {
      out << a;
      for (std::size_t p = 0; p < ckpt.model.num_classes; ++p) {
        out << ',' << ev.confusion[a][p];
      }
      out << '\n';
    }
    std::printf("confusion matrix: %s\n", confusion_path.c_str());
  }
  return 0;
}

void export_patches(const DeepModel &model, const std::string &dir) {
  std::filesystem::create_directories(dir);
  // First-layer inducing patches live in input patch space; grayscale patches
  // go to PGM, 3-channel ones to PPM.
  const bool has_conv = !model.layers.empty();
  const PatchMatrix &z = has_conv ? model.layers[0].z : model.classifier.z;
  const PatchConfig cfg = has_conv ? model.layers[0].cfg : model.classifier.cfg;
  const std::size_t channels = model.input_shape.channels;
  if (channels != 1 && channels != 3) {
    throw ConfigError("patch export supports 1- or 3-channel inputs");
  }
  for (std::size_t m = 0; m < z.rows(); ++m) {
    double lo = z(m, 0);
    double hi = z(m, 0);
    for (std::size_t k = 0; k < z.cols(); ++k) {
      lo = std::min(lo, z(m, k));
      hi = std::max(hi, z(m, k));
    }
    const double span = hi > lo ? hi - lo : 1.0;
    char name[64];
    std::snprintf(name, sizeof name, "/z_%03zu.%s", m, channels == 1 ? "pgm" : "ppm");
    std::ofstream out(dir + name, std::ios::binary);
    out << (channels == 1 ? "P5" : "P6") << '\n'
        << cfg.patch_w << ' ' << cfg.patch_h << '\n'
        << 255 << '\n';
    for (std::size_t k = 0; k < z.cols(); ++k) {
      const double unit = (z(m, k) - lo) / span;
      out.put(static_cast<char>(static_cast<unsigned char>(std::lround(255.0 * unit))));
    }
  }
}

int cmd_inspect(const std::string &ckpt_path, const std::string &export_dir) {
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  const DeepModel &model = ckpt.model;
  std::printf("input: %zux%zux%zu, classes: %zu\n", model.input_shape.height,
              model.input_shape.width, model.input_shape.channels, model.num_classes);
  Shape3 shape = model.input_shape;
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const SVGPLayerParams &layer = model.layers[l];
    shape = output_shape(shape, layer.cfg, layer.channels.size());
    std::printf(
        "layer %zu: patch %zux%zu stride %zu, C=%zu, M=%zu -> %zux%zux%zu, "
        "lengthscale %.6g, variance %.6g, KL %.6f\n",
        l, layer.cfg.patch_h, layer.cfg.patch_w, layer.cfg.stride, layer.channels.size(),
        layer.z.rows(), shape.height, shape.width, shape.channels,
        layer.hyper.lengthscale(), layer.hyper.variance(),
        layer_kl(layer.z, layer.hyper, layer.channels));
  }
  const ClassifierParams &clf = model.classifier;
  const Shape3 grid = output_shape(shape, clf.cfg, 1);
  std::printf(
      "classifier: patch %zux%zu stride %zu over %zux%zu grid, C_y=%zu, M=%zu, "
      "lengthscale %.6g, variance %.6g, KL %.6f\n",
      clf.cfg.patch_h, clf.cfg.patch_w, clf.cfg.stride, grid.height, grid.width,
      clf.num_classes(), clf.num_inducing(), clf.hyper.lengthscale(),
      clf.hyper.variance(), layer_kl(clf.z, clf.hyper, clf.classes));
  std::printf("config:\n%s\n", ckpt.config_json.c_str());
  if (!export_dir.empty()) {
    export_patches(model, export_dir);
    std::printf("inducing patches exported to %s\n", export_dir.c_str());
  }
  return 0;
}

}  // namespace

int main(int argc, char **argv) {
  CLI::App app{"deep convolutional Gaussian process trainer"};
  app.require_subcommand(1);
  app.set_config("--config");

  DatasetOptions data_opt;
  ArchOptions arch;
  TrainConfig tc;
  std::uint64_t max_steps = 5000;
  std::string out_dir = "runs/dcgp";
  std::string resume;
  std::string ckpt_path;
  std::string donor_path;
  std::string out_path = "deepened.ckpt";
  std::string confusion_path;
  std::string export_dir;
  std::size_t eval_samples = 25;
  bool train_split = false;

  CLI::App *train = app.add_subcommand("train", "fit a model with Adam on the ELBO");
  add_dataset_flags(train, data_opt);
  train->add_option("--layers", arch.layers, "number of hidden conv layers")
      ->capture_default_str();
  train->add_option("--filter", arch.filter, "conv filter size")->capture_default_str();
  train->add_option("--strides", arch.strides, "comma-separated per-layer strides")
      ->capture_default_str();
  train->add_option("--channels", arch.channels, "conv channels per layer")
      ->capture_default_str();
  train->add_option("-M,--inducing", arch.inducing, "inducing points per layer")
      ->capture_default_str();
  train->add_option("--classifier-filter", arch.classifier_filter)->capture_default_str();
  train->add_option("--classifier-stride", arch.classifier_stride)->capture_default_str();
  train->add_option("--max-steps", max_steps)->capture_default_str();
  train->add_option("--minibatch", tc.minibatch)->capture_default_str();
  train->add_option("--lr", tc.lr0)->capture_default_str();
  train->add_option("--lr-decay", tc.lr_decay)->capture_default_str();
  train->add_option("--decay-every", tc.decay_every)->capture_default_str();
  train->add_option("--lr-floor", tc.lr_floor)->capture_default_str();
  train->add_option("--samples", tc.samples, "MC samples per step")->capture_default_str();
  train->add_option("--seed", tc.seed)->capture_default_str();
  train->add_option("--log-every", tc.log_every)->capture_default_str();
  train->add_option("--ckpt-every", tc.ckpt_every)->capture_default_str();
  train->add_option("--kmeans-sample", tc.kmeans_sample)->capture_default_str();
  train->add_option("--eval-samples", eval_samples)->capture_default_str();
  train->add_option("--out", out_dir, "output directory")->capture_default_str();
  train->add_option("--resume", resume, "checkpoint to resume from");

  CLI::App *deepen_cmd = app.add_subcommand("deepen", "insert a fresh layer before the classifier");
  add_dataset_flags(deepen_cmd, data_opt);
  LayerSpec new_layer{1, 1, 1, 0, 384};
  deepen_cmd->add_option("--donor", donor_path, "trained donor checkpoint")->required();
  deepen_cmd->add_option("--filter", new_layer.patch_h)->capture_default_str();
  deepen_cmd->add_option("--stride", new_layer.stride)->capture_default_str();
  deepen_cmd->add_option("--channels", new_layer.channels,
                         "0 = match the donor representation");
  deepen_cmd->add_option("-M,--inducing", new_layer.num_inducing)->capture_default_str();
  deepen_cmd->add_option("--seed", tc.seed)->capture_default_str();
  deepen_cmd->add_option("--kmeans-sample", tc.kmeans_sample)->capture_default_str();
  deepen_cmd->add_option("--out", out_path)->capture_default_str();

  CLI::App *eval_cmd = app.add_subcommand("evaluate", "accuracy and log-likelihood of a checkpoint");
  add_dataset_flags(eval_cmd, data_opt);
  eval_cmd->add_option("--checkpoint", ckpt_path)->required();
  eval_cmd->add_flag("--train-split", train_split, "evaluate the training split");
  eval_cmd->add_option("-S,--samples", eval_samples)->capture_default_str();
  eval_cmd->add_option("--seed", tc.seed)->capture_default_str();
  eval_cmd->add_option("--confusion", confusion_path, "write per-class confusion CSV here");

  CLI::App *inspect_cmd = app.add_subcommand("inspect", "print shapes, hyperparameters and KLs");
  inspect_cmd->add_option("--checkpoint", ckpt_path)->required();
  inspect_cmd->add_option("--export-patches", export_dir,
                          "write inducing patches as PGM/PPM images");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (train->parsed()) {
      tc.num_inducing = arch.inducing;
      return cmd_train(data_opt, arch, tc, max_steps, out_dir, resume, eval_samples);
    }
    if (deepen_cmd->parsed()) {
      new_layer.patch_w = new_layer.patch_h;
      return cmd_deepen(donor_path, data_opt, new_layer, tc, out_path);
    }
    if (eval_cmd->parsed()) {
      return cmd_evaluate(ckpt_path, data_opt, train_split, eval_samples, tc.seed,
                          confusion_path);
    }
    return cmd_inspect(ckpt_path, export_dir);
  } catch (const ConfigError &e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const DimensionMismatch &e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const ShapeMismatch &e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const PatchTooLarge &e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const BadMagic &e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kExitData;
  } catch (const TruncatedFile &e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kExitData;
  } catch (const CountMismatch &e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kExitData;
  } catch (const LabelOutOfRange &e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kExitData;
  } catch (const ZeroVariance &e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kExitData;
  } catch (const InsufficientPatches &e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kExitData;
  } catch (const Error &e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return kExitNumeric;
  } catch (const std::exception &e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return kExitNumeric;
  }
}
