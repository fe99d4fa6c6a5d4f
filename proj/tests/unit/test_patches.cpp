#include <doctest.h>

#include <random>

#include "dcgp/errors.hpp"
#include "dcgp/patches.hpp"

using namespace dcgp;

TEST_CASE("output_shape reproduces the 28x28 -> 24x24x10 arithmetic") {
  const Shape3 out = output_shape(Shape3{28, 28, 1}, PatchConfig{5, 5, 1}, 10);
  CHECK(out == Shape3{24, 24, 10});
  const Shape3 out2 = output_shape(out, PatchConfig{5, 5, 1}, 10);
  CHECK(out2 == Shape3{20, 20, 10});
}

TEST_CASE("output_shape floors non-exact strides (CIFAR first layer)") {
  CHECK(output_shape(Shape3{32, 32, 3}, PatchConfig{4, 4, 2}, 10) == Shape3{15, 15, 10});
}

TEST_CASE("output_shape with patch = image is 1x1") {
  CHECK(output_shape(Shape3{5, 5, 1}, PatchConfig{5, 5, 1}, 1) == Shape3{1, 1, 1});
}

TEST_CASE("output_shape rejects oversized patches") {
  CHECK_THROWS_AS(output_shape(Shape3{4, 4, 1}, PatchConfig{5, 5, 1}, 1), PatchTooLarge);
}

TEST_CASE("unit patches enumerate pixels in order") {
  ImageTensor img(Shape3{2, 2, 1}, {1.0, 2.0, 3.0, 4.0});
  const PatchMatrix p = extract_patches(img, PatchConfig{1, 1, 1});
  REQUIRE(p.rows() == 4);
  REQUIRE(p.cols() == 1);
  for (std::size_t i = 0; i < 4; ++i) CHECK(p(i, 0) == static_cast<double>(i + 1));
}

TEST_CASE("2x2 patches of a 3x3 image follow the documented order") {
  ImageTensor img(Shape3{3, 3, 1}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  const PatchMatrix p = extract_patches(img, PatchConfig{2, 2, 1});
  REQUIRE(p.rows() == 4);
  REQUIRE(p.cols() == 4);
  CHECK(p(0, 0) == 1);  // patch 0 = (a11, a12, a21, a22)
  CHECK(p(0, 1) == 2);
  CHECK(p(0, 2) == 4);
  CHECK(p(0, 3) == 5);
  CHECK(p(3, 0) == 5);  // bottom-right patch
  CHECK(p(3, 3) == 9);
}

TEST_CASE("MNIST layer-1 extraction sizes") {
  ImageTensor img(Shape3{28, 28, 1});
  const PatchMatrix p = extract_patches(img, PatchConfig{5, 5, 1});
  CHECK(p.rows() == 576);
  CHECK(p.cols() == 25);
}

TEST_CASE("multi-channel patches are channel-fastest") {
  ImageTensor img(Shape3{2, 2, 2});
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t ch = 0; ch < 2; ++ch)
        img.at(r, c, ch) = static_cast<double>(100 * r + 10 * c + ch);
  const PatchMatrix p = extract_patches(img, PatchConfig{1, 2, 1});
  REQUIRE(p.rows() == 2);
  REQUIRE(p.cols() == 4);
  CHECK(p(0, 0) == 0.0);    // (0,0,ch0)
  CHECK(p(0, 1) == 1.0);    // (0,0,ch1)
  CHECK(p(0, 2) == 10.0);   // (0,1,ch0)
  CHECK(p(0, 3) == 11.0);   // (0,1,ch1)
}

TEST_CASE("random patches equal direct slices of the input") {
  std::mt19937_64 engine(99);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  ImageTensor img(Shape3{9, 7, 3});
  for (double &v : img.data) v = u(engine);
  const PatchConfig cfg{3, 2, 2};
  const PatchMatrix p = extract_patches(img, cfg);
  const Shape3 grid = output_shape(img.shape, cfg, 1);
  REQUIRE(p.rows() == grid.pixel_count());
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t patch = engine() % p.rows();
    const std::size_t pr = patch / grid.width;
    const std::size_t pc = patch % grid.width;
    std::size_t k = 0;
    for (std::size_t r = 0; r < cfg.patch_h; ++r)
      for (std::size_t c = 0; c < cfg.patch_w; ++c)
        for (std::size_t ch = 0; ch < 3; ++ch, ++k)
          CHECK(p(patch, k) == img.at(pr * cfg.stride + r, pc * cfg.stride + c, ch));
  }
}

TEST_CASE("fold_responses of a single value is a 1x1x1 tensor") {
  const ImageTensor t = fold_responses(DenseMatrix(1, 1, 7.5), Shape3{1, 1, 1});
  CHECK(t.data == std::vector<double>{7.5});
}

TEST_CASE("fold of P=4 values into 2x2 is row-major") {
  const ImageTensor t = fold_responses(DenseMatrix(4, 1, {1, 2, 3, 4}), Shape3{2, 2, 1});
  CHECK(t.at(0, 0, 0) == 1);
  CHECK(t.at(0, 1, 0) == 2);
  CHECK(t.at(1, 0, 0) == 3);
  CHECK(t.at(1, 1, 0) == 4);
}

TEST_CASE("unit-patch extract then fold is the identity") {
  ImageTensor img(Shape3{4, 5, 1});
  for (std::size_t k = 0; k < img.data.size(); ++k) img.data[k] = static_cast<double>(k);
  const PatchMatrix p = extract_patches(img, PatchConfig{1, 1, 1});
  const ImageTensor back = fold_responses(p, img.shape);
  CHECK(back.data == img.data);
}

TEST_CASE("fold_responses validates shapes") {
  CHECK_THROWS_AS(fold_responses(DenseMatrix(3, 1), Shape3{2, 2, 1}), DimensionMismatch);
  CHECK_THROWS_AS(fold_responses(DenseMatrix(4, 2), Shape3{2, 2, 1}), DimensionMismatch);
}
