#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dcgp/model.hpp"
#include "dcgp/patches.hpp"

namespace dcgp {

struct LabeledDataset {
  ImageBatch images;
  std::vector<std::size_t> labels;
  std::size_t num_classes = 0;

  std::size_t size() const { return images.size(); }
};

// IDX files: image magic 0x00000803, label magic 0x00000801, big-endian
// dimension fields, pixel bytes scaled to [0, 1].
LabeledDataset load_mnist(const std::string &images_path, const std::string &labels_path);

// CIFAR-10 batch files: records of 1 label byte + 3072 channel-planar pixel
// bytes (R plane, G plane, B plane), converted to interleaved H x W x C.
LabeledDataset load_cifar10(const std::vector<std::string> &batch_paths);

struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> std;
};

// Per-channel statistics over every pixel of the dataset.
ChannelStats channel_stats(const LabeledDataset &ds);

// x <- (x - mean_c) / std_c in place. Test data should be passed the stats
// computed from the training split.
void normalize(LabeledDataset &ds, const ChannelStats &stats);
ChannelStats normalize(LabeledDataset &ds);  // compute stats, then apply

// Desk-scale helpers.
LabeledDataset take_first(const LabeledDataset &ds, std::size_t n);
// First per_class examples of each class, in dataset order.
LabeledDataset balanced_subset(const LabeledDataset &ds, std::size_t per_class);

// Fixture / export writers (exact inverses of the loaders).
void write_idx_images(const std::string &path, const ImageBatch &images);
void write_idx_labels(const std::string &path, const std::vector<std::size_t> &labels);
void write_cifar10_batch(const std::string &path, const LabeledDataset &ds);

}  // namespace dcgp
