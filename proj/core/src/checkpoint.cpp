#include "dcgp/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

#include "dcgp/errors.hpp"

namespace dcgp {

namespace {

using Json = nlohmann::ordered_json;

constexpr char kMagic[4] = {'D', 'C', 'G', 'P'};
constexpr unsigned char kFormatVersion = 1;

void write_u64(std::ofstream &out, std::uint64_t v) {
  unsigned char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char *>(bytes), 8);
}

std::uint64_t read_u64(std::ifstream &in) {
  unsigned char bytes[8];
  in.read(reinterpret_cast<char *>(bytes), 8);
  if (!in) throw TruncatedFile("checkpoint: truncated integer field");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return v;
}

void write_tensor(std::ofstream &out, const std::string &name, const DenseMatrix &t) {
  write_u64(out, name.size());
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
  write_u64(out, 2);  // rank
  write_u64(out, t.rows());
  write_u64(out, t.cols());
  out.write(reinterpret_cast<const char *>(t.data()),
            static_cast<std::streamsize>(t.size() * sizeof(double)));
}

NamedTensor read_tensor(std::ifstream &in) {
  const std::uint64_t name_len = read_u64(in);
  std::string name(name_len, '\0');
  in.read(name.data(), static_cast<std::streamsize>(name_len));
  const std::uint64_t rank = read_u64(in);
  if (rank != 2) throw TruncatedFile("checkpoint: unsupported tensor rank");
  const std::uint64_t rows = read_u64(in);
  const std::uint64_t cols = read_u64(in);
  DenseMatrix t(rows, cols);
  in.read(reinterpret_cast<char *>(t.data()),
          static_cast<std::streamsize>(t.size() * sizeof(double)));
  if (!in) throw TruncatedFile("checkpoint: truncated tensor data");
  return NamedTensor{std::move(name), std::move(t)};
}

}  // namespace

std::string config_to_json(const ModelConfig &config) {
  Json j;
  j["input"] = {{"height", config.input.height},
                {"width", config.input.width},
                {"channels", config.input.channels}};
  j["layers"] = Json::array();
  for (const auto &layer : config.layers) {
    j["layers"].push_back({{"patch_h", layer.patch_h},
                           {"patch_w", layer.patch_w},
                           {"stride", layer.stride},
                           {"channels", layer.channels},
                           {"num_inducing", layer.num_inducing}});
  }
  j["classifier"] = {{"patch_h", config.classifier.patch_h},
                     {"patch_w", config.classifier.patch_w},
                     {"stride", config.classifier.stride},
                     {"num_inducing", config.classifier.num_inducing}};
  j["num_classes"] = config.num_classes;
  j["likelihood"] = config.likelihood;
  j["gaussian_noise_variance"] = config.gaussian_noise_variance;
  j["norm_mean"] = config.norm_mean;
  j["norm_std"] = config.norm_std;
  j["conventions"] = {{"rbf", "variance*exp(-d2/(2*lengthscale^2))"},
                      {"scale_diag", "softplus"}};
  return j.dump();
}

ModelConfig config_from_json(const std::string &json_text) {
  Json j = Json::parse(json_text);
  ModelConfig config;
  config.input.height = j.at("input").at("height").get<std::size_t>();
  config.input.width = j.at("input").at("width").get<std::size_t>();
  config.input.channels = j.at("input").at("channels").get<std::size_t>();
  for (const auto &layer : j.at("layers")) {
    LayerSpec spec;
    spec.patch_h = layer.at("patch_h").get<std::size_t>();
    spec.patch_w = layer.at("patch_w").get<std::size_t>();
    spec.stride = layer.at("stride").get<std::size_t>();
    spec.channels = layer.at("channels").get<std::size_t>();
    spec.num_inducing = layer.at("num_inducing").get<std::size_t>();
    config.layers.push_back(spec);
  }
  config.classifier.patch_h = j.at("classifier").at("patch_h").get<std::size_t>();
  config.classifier.patch_w = j.at("classifier").at("patch_w").get<std::size_t>();
  config.classifier.stride = j.at("classifier").at("stride").get<std::size_t>();
  config.classifier.num_inducing =
      j.at("classifier").at("num_inducing").get<std::size_t>();
  config.classifier.channels = 0;
  config.num_classes = j.at("num_classes").get<std::size_t>();
  config.likelihood = j.at("likelihood").get<std::string>();
  config.gaussian_noise_variance = j.at("gaussian_noise_variance").get<double>();
  config.norm_mean = j.at("norm_mean").get<std::vector<double>>();
  config.norm_std = j.at("norm_std").get<std::vector<double>>();
  return config;
}

ModelConfig config_from_model(const DeepModel &model) {
  ModelConfig config;
  config.input = model.input_shape;
  for (const auto &layer : model.layers) {
    LayerSpec spec;
    spec.patch_h = layer.cfg.patch_h;
    spec.patch_w = layer.cfg.patch_w;
    spec.stride = layer.cfg.stride;
    spec.channels = layer.num_channels();
    spec.num_inducing = layer.num_inducing();
    config.layers.push_back(spec);
  }
  config.classifier.patch_h = model.classifier.cfg.patch_h;
  config.classifier.patch_w = model.classifier.cfg.patch_w;
  config.classifier.stride = model.classifier.cfg.stride;
  config.classifier.num_inducing = model.classifier.num_inducing();
  config.classifier.channels = 0;
  config.num_classes = model.classifier.num_classes();
  config.likelihood = model.likelihood == Likelihood::kSoftmax ? "softmax" : "gaussian";
  config.gaussian_noise_variance = model.gaussian_noise_variance;
  config.norm_mean = model.norm_mean;
  config.norm_std = model.norm_std;
  return config;
}

DeepModel model_skeleton(const ModelConfig &config) {
  DeepModel model;
  model.input_shape = config.input;
  model.num_classes = config.num_classes;
  if (config.likelihood == "softmax") {
    model.likelihood = Likelihood::kSoftmax;
  } else if (config.likelihood == "gaussian") {
    model.likelihood = Likelihood::kGaussian;
  } else {
    throw ConfigError("model_skeleton: unknown likelihood " + config.likelihood);
  }
  model.gaussian_noise_variance = config.gaussian_noise_variance;
  model.norm_mean = config.norm_mean;
  model.norm_std = config.norm_std;

  Shape3 shape = config.input;
  for (const auto &spec : config.layers) {
    SVGPLayerParams layer;
    layer.cfg = PatchConfig{spec.patch_h, spec.patch_w, spec.stride};
    const std::size_t d = spec.patch_h * spec.patch_w * shape.channels;
    layer.z = DenseMatrix(spec.num_inducing, d);
    for (std::size_t c = 0; c < spec.channels; ++c) {
      layer.channels.push_back(VariationalGaussian{
          DenseMatrix(spec.num_inducing, 1),
          DenseMatrix(spec.num_inducing, spec.num_inducing)});
    }
    model.layers.push_back(std::move(layer));
    shape = output_shape(shape, model.layers.back().cfg, spec.channels);
  }

  ClassifierParams cls;
  cls.cfg = PatchConfig{config.classifier.patch_h, config.classifier.patch_w,
                        config.classifier.stride};
  const std::size_t d = cls.cfg.patch_h * cls.cfg.patch_w * shape.channels;
  const Shape3 grid = output_shape(shape, cls.cfg, 1);
  cls.z = DenseMatrix(config.classifier.num_inducing, d);
  cls.weights = PatchWeights::ones(grid.pixel_count());
  for (std::size_t c = 0; c < config.num_classes; ++c) {
    cls.classes.push_back(VariationalGaussian{
        DenseMatrix(config.classifier.num_inducing, 1),
        DenseMatrix(config.classifier.num_inducing, config.classifier.num_inducing)});
  }
  model.classifier = std::move(cls);
  return model;
}

void save_checkpoint(const std::string &path, const DeepModel &model,
                     const TrainerState *trainer) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw TruncatedFile("checkpoint: cannot open for writing: " + path);
  out.write(kMagic, 4);
  out.put(static_cast<char>(kFormatVersion));

  const std::string config = config_to_json(config_from_model(model));
  write_u64(out, config.size());
  out.write(config.data(), static_cast<std::streamsize>(config.size()));

  const ParamSet params = pack_params(model);
  std::uint64_t count = params.size();
  if (trainer != nullptr) {
    count += 1 + trainer->first_moment.size() + trainer->second_moment.size();
  }
  write_u64(out, count);
  for (const auto &t : params) write_tensor(out, t.name, t.value);
  if (trainer != nullptr) {
    write_tensor(out, "trainer.step",
                 DenseMatrix(1, 1, static_cast<double>(trainer->step)));
    for (const auto &t : trainer->first_moment) {
      write_tensor(out, "adam.m." + t.name, t.value);
    }
    for (const auto &t : trainer->second_moment) {
      write_tensor(out, "adam.v." + t.name, t.value);
    }
  }
  if (!out) throw TruncatedFile("checkpoint: write failure: " + path);
}

Checkpoint load_checkpoint(const std::string &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw TruncatedFile("checkpoint: cannot open: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) {
    throw BadMagic("checkpoint: bad magic bytes");
  }
  const int version = in.get();
  if (version != kFormatVersion) {
    throw BadMagic("checkpoint: unsupported format version");
  }

  const std::uint64_t config_len = read_u64(in);
  std::string config_json(config_len, '\0');
  in.read(config_json.data(), static_cast<std::streamsize>(config_len));
  if (!in) throw TruncatedFile("checkpoint: truncated config block");

  Checkpoint ckpt;
  ckpt.config_json = config_json;
  ckpt.config = config_from_json(config_json);
  ckpt.model = model_skeleton(ckpt.config);

  const std::uint64_t count = read_u64(in);
  ParamSet model_tensors;
  TrainerState trainer;
  bool has_trainer = false;
  for (std::uint64_t i = 0; i < count; ++i) {
    NamedTensor t = read_tensor(in);
    if (t.name == "trainer.step") {
      trainer.step = static_cast<std::uint64_t>(t.value.flat(0));
      has_trainer = true;
    } else if (t.name.starts_with("adam.m.")) {
      trainer.first_moment.insert(t.name.substr(7), std::move(t.value));
      has_trainer = true;
    } else if (t.name.starts_with("adam.v.")) {
      trainer.second_moment.insert(t.name.substr(7), std::move(t.value));
      has_trainer = true;
    } else {
      model_tensors.insert(std::move(t.name), std::move(t.value));
    }
  }
  unpack_params(model_tensors, ckpt.model);
  if (has_trainer) ckpt.trainer = std::move(trainer);
  return ckpt;
}

}  // namespace dcgp
