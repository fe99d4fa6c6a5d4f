#include "dcgp/data.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "dcgp/errors.hpp"

namespace dcgp {

namespace {

constexpr std::uint32_t kIdxImageMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

std::vector<unsigned char> read_file(const std::string &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw TruncatedFile("cannot open file: " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<unsigned char> &buf, std::size_t offset) {
  if (offset + 4 > buf.size()) throw TruncatedFile("file too short for header");
  return (static_cast<std::uint32_t>(buf[offset]) << 24) |
         (static_cast<std::uint32_t>(buf[offset + 1]) << 16) |
         (static_cast<std::uint32_t>(buf[offset + 2]) << 8) |
         static_cast<std::uint32_t>(buf[offset + 3]);
}

void write_be32(std::ofstream &out, std::uint32_t v) {
  const unsigned char bytes[4] = {
      static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
      static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char *>(bytes), 4);
}

}  // namespace

LabeledDataset load_mnist(const std::string &images_path,
                          const std::string &labels_path) {
  const auto img_buf = read_file(images_path);
  if (read_be32(img_buf, 0) != kIdxImageMagic) {
    throw BadMagic("load_mnist: bad image file magic");
  }
  const std::size_t n = read_be32(img_buf, 4);
  const std::size_t rows = read_be32(img_buf, 8);
  const std::size_t cols = read_be32(img_buf, 12);
  if (img_buf.size() < 16 + n * rows * cols) {
    throw TruncatedFile("load_mnist: image file truncated");
  }

  const auto lbl_buf = read_file(labels_path);
  if (read_be32(lbl_buf, 0) != kIdxLabelMagic) {
    throw BadMagic("load_mnist: bad label file magic");
  }
  const std::size_t n_labels = read_be32(lbl_buf, 4);
  if (n_labels != n) {
    throw CountMismatch("load_mnist: image and label counts differ");
  }
  if (lbl_buf.size() < 8 + n) throw TruncatedFile("load_mnist: label file truncated");

  LabeledDataset ds;
  ds.num_classes = 10;
  ds.images.reserve(n);
  ds.labels.reserve(n);
  const Shape3 shape{rows, cols, 1};
  std::size_t offset = 16;
  for (std::size_t i = 0; i < n; ++i) {
    ImageTensor img(shape);
    for (std::size_t k = 0; k < rows * cols; ++k) {
      img.data[k] = static_cast<double>(img_buf[offset + k]) / 255.0;
    }
    offset += rows * cols;
    ds.images.push_back(std::move(img));
    const std::size_t label = lbl_buf[8 + i];
    if (label >= ds.num_classes) {
      throw LabelOutOfRange("load_mnist: label out of range");
    }
    ds.labels.push_back(label);
  }
  return ds;
}

LabeledDataset load_cifar10(const std::vector<std::string> &batch_paths) {
  constexpr std::size_t kRecord = 1 + 3 * 1024;
  constexpr std::size_t kSide = 32;
  LabeledDataset ds;
  ds.num_classes = 10;
  for (const auto &path : batch_paths) {
    const auto buf = read_file(path);
    if (buf.empty() || buf.size() % kRecord != 0) {
      throw TruncatedFile("load_cifar10: batch size not a whole record count: " + path);
    }
    const std::size_t count = buf.size() / kRecord;
    for (std::size_t r = 0; r < count; ++r) {
      const std::size_t base = r * kRecord;
      const std::size_t label = buf[base];
      if (label >= ds.num_classes) {
        throw LabelOutOfRange("load_cifar10: label out of range");
      }
      ImageTensor img(Shape3{kSide, kSide, 3});
      for (std::size_t ch = 0; ch < 3; ++ch) {
        const std::size_t plane = base + 1 + ch * kSide * kSide;
        for (std::size_t px = 0; px < kSide * kSide; ++px) {
          img.data[px * 3 + ch] = static_cast<double>(buf[plane + px]) / 255.0;
        }
      }
      ds.images.push_back(std::move(img));
      ds.labels.push_back(label);
    }
  }
  return ds;
}

ChannelStats channel_stats(const LabeledDataset &ds) {
  if (ds.images.empty()) throw ConfigError("channel_stats: empty dataset");
  const std::size_t c = ds.images.front().shape.channels;
  std::vector<double> sum(c, 0.0), sum_sq(c, 0.0);
  std::size_t per_channel = 0;
  for (const auto &img : ds.images) {
    const std::size_t pixels = img.shape.pixel_count();
    per_channel += pixels;
    for (std::size_t p = 0; p < pixels; ++p) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double x = img.data[p * c + ch];
        sum[ch] += x;
        sum_sq[ch] += x * x;
      }
    }
  }
  ChannelStats stats;
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double mean = sum[ch] / static_cast<double>(per_channel);
    const double var = sum_sq[ch] / static_cast<double>(per_channel) - mean * mean;
    if (var <= 1e-12) {
      throw ZeroVariance("normalize: constant channel " + std::to_string(ch));
    }
    stats.mean.push_back(mean);
    stats.std.push_back(std::sqrt(var));
  }
  return stats;
}

void normalize(LabeledDataset &ds, const ChannelStats &stats) {
  for (auto &img : ds.images) {
    const std::size_t c = img.shape.channels;
    if (c != stats.mean.size()) {
      throw DimensionMismatch("normalize: channel count does not match stats");
    }
    for (std::size_t p = 0; p < img.shape.pixel_count(); ++p) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        img.data[p * c + ch] = (img.data[p * c + ch] - stats.mean[ch]) / stats.std[ch];
      }
    }
  }
}

ChannelStats normalize(LabeledDataset &ds) {
  const ChannelStats stats = channel_stats(ds);
  normalize(ds, stats);
  return stats;
}

LabeledDataset take_first(const LabeledDataset &ds, std::size_t n) {
  LabeledDataset out;
  out.num_classes = ds.num_classes;
  const std::size_t count = std::min(n, ds.size());
  out.images.assign(ds.images.begin(), ds.images.begin() + count);
  out.labels.assign(ds.labels.begin(), ds.labels.begin() + count);
  return out;
}

LabeledDataset balanced_subset(const LabeledDataset &ds, std::size_t per_class) {
  LabeledDataset out;
  out.num_classes = ds.num_classes;
  std::vector<std::size_t> counts(ds.num_classes, 0);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (counts[ds.labels[i]] < per_class) {
      counts[ds.labels[i]]++;
      out.images.push_back(ds.images[i]);
      out.labels.push_back(ds.labels[i]);
    }
  }
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (counts[c] < per_class) {
      throw CountMismatch("balanced_subset: class " + std::to_string(c) +
                          " has too few examples");
    }
  }
  return out;
}

void write_idx_images(const std::string &path, const ImageBatch &images) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw TruncatedFile("cannot open for writing: " + path);
  const Shape3 shape = images.empty() ? Shape3{0, 0, 1} : images.front().shape;
  write_be32(out, kIdxImageMagic);
  write_be32(out, static_cast<std::uint32_t>(images.size()));
  write_be32(out, static_cast<std::uint32_t>(shape.height));
  write_be32(out, static_cast<std::uint32_t>(shape.width));
  for (const auto &img : images) {
    for (double x : img.data) {
      const double scaled = std::round(x * 255.0);
      const auto byte = static_cast<unsigned char>(
          std::min(255.0, std::max(0.0, scaled)));
      out.put(static_cast<char>(byte));
    }
  }
}

void write_idx_labels(const std::string &path, const std::vector<std::size_t> &labels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw TruncatedFile("cannot open for writing: " + path);
  write_be32(out, kIdxLabelMagic);
  write_be32(out, static_cast<std::uint32_t>(labels.size()));
  for (std::size_t l : labels) out.put(static_cast<char>(l));
}

void write_cifar10_batch(const std::string &path, const LabeledDataset &ds) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw TruncatedFile("cannot open for writing: " + path);
  constexpr std::size_t kSide = 32;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    out.put(static_cast<char>(ds.labels[i]));
    const ImageTensor &img = ds.images[i];
    for (std::size_t ch = 0; ch < 3; ++ch) {
      for (std::size_t px = 0; px < kSide * kSide; ++px) {
        const double scaled = std::round(img.data[px * 3 + ch] * 255.0);
        out.put(static_cast<char>(static_cast<unsigned char>(
            std::min(255.0, std::max(0.0, scaled)))));
      }
    }
  }
}

}  // namespace dcgp
