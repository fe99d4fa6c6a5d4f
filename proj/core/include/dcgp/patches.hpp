#pragma once

#include <cstdint>
#include <vector>

#include "dcgp/matrix.hpp"

namespace dcgp {

struct Shape3 {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;

  std::size_t pixel_count() const { return height * width; }
  std::size_t element_count() const { return height * width * channels; }
  bool operator==(const Shape3 &) const = default;
};

// H x W x C tensor, flat index ((row * W) + col) * C + channel.
struct ImageTensor {
  Shape3 shape;
  std::vector<double> data;

  ImageTensor() = default;
  ImageTensor(Shape3 s, double fill = 0.0) : shape(s), data(s.element_count(), fill) {}
  ImageTensor(Shape3 s, std::vector<double> d);

  double &at(std::size_t row, std::size_t col, std::size_t ch) {
    return data[(row * shape.width + col) * shape.channels + ch];
  }
  double at(std::size_t row, std::size_t col, std::size_t ch) const {
    return data[(row * shape.width + col) * shape.channels + ch];
  }
};

// Rows are vectorized patches: P x D with D = patch_h * patch_w * C.
using PatchMatrix = DenseMatrix;

struct PatchConfig {
  std::size_t patch_h = 0;
  std::size_t patch_w = 0;
  std::size_t stride = 1;

  bool operator==(const PatchConfig &) const = default;
};

// H_out = floor((H - patch_h) / stride) + 1, same for W; channels replaced.
Shape3 output_shape(const Shape3 &in, const PatchConfig &cfg, std::size_t out_channels);

// Flat source indices for every (patch, element) pair; length P * D.
// Patch p covers (floor(p / out_W) * stride, (p mod out_W) * stride); elements
// are ordered (patch_row, patch_col, channel) with channel fastest.
std::vector<std::uint32_t> patch_index_map(const Shape3 &in, const PatchConfig &cfg);

PatchMatrix extract_patches(const ImageTensor &img, const PatchConfig &cfg);

// Inverse of the patch index mapping for stride-matched responses: row p of
// `values` becomes the pixel stack at output position p.
ImageTensor fold_responses(const DenseMatrix &values, const Shape3 &out);

}  // namespace dcgp
