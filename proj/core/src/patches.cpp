#include "dcgp/patches.hpp"

#include <utility>

#include "dcgp/errors.hpp"

namespace dcgp {

ImageTensor::ImageTensor(Shape3 s, std::vector<double> d) : shape(s), data(std::move(d)) {
  if (data.size() != shape.element_count()) {
    throw DimensionMismatch("ImageTensor: data length does not match shape");
  }
}

Shape3 output_shape(const Shape3 &in, const PatchConfig &cfg, std::size_t out_channels) {
  if (cfg.patch_h == 0 || cfg.patch_w == 0 || cfg.stride == 0) {
    throw PatchTooLarge("output_shape: degenerate patch config");
  }
  if (cfg.patch_h > in.height || cfg.patch_w > in.width) {
    throw PatchTooLarge("output_shape: patch exceeds input dimensions");
  }
  Shape3 out;
  out.height = (in.height - cfg.patch_h) / cfg.stride + 1;
  out.width = (in.width - cfg.patch_w) / cfg.stride + 1;
  out.channels = out_channels;
  return out;
}

std::vector<std::uint32_t> patch_index_map(const Shape3 &in, const PatchConfig &cfg) {
  const Shape3 out = output_shape(in, cfg, 1);
  const std::size_t patch_dim = cfg.patch_h * cfg.patch_w * in.channels;
  std::vector<std::uint32_t> map;
  map.reserve(out.pixel_count() * patch_dim);
  for (std::size_t pr = 0; pr < out.height; ++pr) {
    for (std::size_t pc = 0; pc < out.width; ++pc) {
      const std::size_t r0 = pr * cfg.stride;
      const std::size_t c0 = pc * cfg.stride;
      for (std::size_t dr = 0; dr < cfg.patch_h; ++dr) {
        for (std::size_t dc = 0; dc < cfg.patch_w; ++dc) {
          const std::size_t base = ((r0 + dr) * in.width + (c0 + dc)) * in.channels;
          for (std::size_t ch = 0; ch < in.channels; ++ch) {
            map.push_back(static_cast<std::uint32_t>(base + ch));
          }
        }
      }
    }
  }
  return map;
}

PatchMatrix extract_patches(const ImageTensor &img, const PatchConfig &cfg) {
  const Shape3 out = output_shape(img.shape, cfg, 1);
  const std::size_t patch_dim = cfg.patch_h * cfg.patch_w * img.shape.channels;
  const auto map = patch_index_map(img.shape, cfg);
  PatchMatrix patches(out.pixel_count(), patch_dim);
  for (std::size_t k = 0; k < map.size(); ++k) {
    patches.flat(k) = img.data[map[k]];
  }
  return patches;
}

ImageTensor fold_responses(const DenseMatrix &values, const Shape3 &out) {
  if (values.rows() != out.pixel_count() || values.cols() != out.channels) {
    throw DimensionMismatch("fold_responses: values do not match output shape");
  }
  // Row-major (p, c) storage coincides with the canonical image layout.
  return ImageTensor(out, values.storage());
}

}  // namespace dcgp
