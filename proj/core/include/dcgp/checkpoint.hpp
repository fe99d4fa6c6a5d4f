#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dcgp/model.hpp"
#include "dcgp/params.hpp"
#include "dcgp/patches.hpp"

namespace dcgp {

struct LayerSpec {
  std::size_t patch_h = 5;
  std::size_t patch_w = 5;
  std::size_t stride = 1;
  std::size_t channels = 10;
  std::size_t num_inducing = 384;

  bool operator==(const LayerSpec &) const = default;
};

// Structural description of a DeepModel; serialized into the checkpoint so a
// saved model is self-contained.
struct ModelConfig {
  Shape3 input;
  std::vector<LayerSpec> layers;        // hidden convolutional layers
  LayerSpec classifier;                 // channels field unused, classes below
  std::size_t num_classes = 10;
  std::string likelihood = "softmax";   // "softmax" | "gaussian"
  double gaussian_noise_variance = 0.01;
  std::vector<double> norm_mean;
  std::vector<double> norm_std;

  bool operator==(const ModelConfig &) const = default;
};

std::string config_to_json(const ModelConfig &config);
ModelConfig config_from_json(const std::string &json_text);

ModelConfig config_from_model(const DeepModel &model);

// Allocates a model with the configured shapes and zeroed tensors.
DeepModel model_skeleton(const ModelConfig &config);

// Optimizer state rides along in the same tensor container under reserved
// "adam." / "trainer." names so training can resume exactly.
struct TrainerState {
  std::uint64_t step = 0;
  ParamSet first_moment;
  ParamSet second_moment;
};

// Container: magic "DCGP", format version byte 1, little-endian; a
// length-prefixed UTF-8 config block, a tensor count, then per tensor a
// length-prefixed name, rank, dims and raw 64-bit floats.
void save_checkpoint(const std::string &path, const DeepModel &model,
                     const TrainerState *trainer = nullptr);

struct Checkpoint {
  DeepModel model;
  ModelConfig config;
  std::string config_json;
  std::optional<TrainerState> trainer;
};

Checkpoint load_checkpoint(const std::string &path);

}  // namespace dcgp
