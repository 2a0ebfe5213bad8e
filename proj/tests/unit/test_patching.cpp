#include <gtest/gtest.h>

#include <random>

#include "histo/patching.hpp"

using namespace histo;

namespace {

RasterImage random_image(int w, int h, std::uint32_t seed) {
  std::mt19937 rng(seed);
  RasterImage img(w, h);
  for (auto& b : img.bytes()) b = static_cast<std::uint8_t>(rng() & 0xff);
  return img;
}

// Paints each patch's footprint and checks every pixel of the cropped image
// is covered exactly once and nothing outside it is.
void expect_exact_tiling(int w, int h, GridSpec grid) {
  const auto patches = extract_patches(RasterImage(w, h), grid, "img");
  ASSERT_EQ(static_cast<int>(patches.size()), grid.patch_count());
  std::vector<int> cover(static_cast<std::size_t>(w) * h, 0);
  for (const auto& p : patches) {
    for (int y = 0; y < p.pixels.height(); ++y) {
      for (int x = 0; x < p.pixels.width(); ++x) ++cover[(p.origin_y + y) * w + p.origin_x + x];
    }
  }
  const int cw = (w / grid.cols) * grid.cols;
  const int ch = (h / grid.rows) * grid.rows;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      ASSERT_EQ(cover[y * w + x], (x < cw && y < ch) ? 1 : 0) << x << "," << y;
    }
  }
}

}  // namespace

TEST(ExtractPatches, SlideSizeGivesTwelveEqualPatches) {
  const auto patches = extract_patches(RasterImage(2040, 1536), GridSpec{4, 3}, "a");
  ASSERT_EQ(patches.size(), 12u);
  for (const auto& p : patches) {
    EXPECT_EQ(p.pixels.width(), 510);
    EXPECT_EQ(p.pixels.height(), 512);
    EXPECT_EQ(p.origin_x, (p.grid_index % 4) * 510);
    EXPECT_EQ(p.origin_y, (p.grid_index / 4) * 512);
    EXPECT_EQ(p.image_id, "a");
  }
}

TEST(ExtractPatches, DegenerateOnePixelPatches) {
  const auto img = random_image(4, 3, 1);
  const auto patches = extract_patches(img, GridSpec{4, 3});
  ASSERT_EQ(patches.size(), 12u);
  for (const auto& p : patches) {
    EXPECT_EQ(p.pixels.width(), 1);
    EXPECT_EQ(p.pixels.pixel(0, 0), img.pixel(p.grid_index % 4, p.grid_index / 4));
  }
}

TEST(ExtractPatches, CoverageIsExact) {
  expect_exact_tiling(2048, 1536, {4, 3});
  expect_exact_tiling(2040, 1536, {4, 3});
  expect_exact_tiling(103, 77, {4, 3});
  expect_exact_tiling(50, 50, {3, 4});
}

TEST(ExtractPatches, RemainderIsCroppedFromRightAndBottom) {
  const auto patches = extract_patches(RasterImage(10, 7), GridSpec{4, 3});
  EXPECT_EQ(patches.back().pixels.width(), 2);
  EXPECT_EQ(patches.back().pixels.height(), 2);
  EXPECT_EQ(patches.back().origin_x, 6);
  EXPECT_EQ(patches.back().origin_y, 4);
}

TEST(ExtractPatches, ReassemblyReproducesCroppedSource) {
  const auto img = random_image(37, 29, 2);
  const GridSpec grid{4, 3};
  const auto patches = extract_patches(img, grid);
  RasterImage canvas(36, 27);
  for (const auto& p : patches) canvas.paste(p.pixels, p.origin_x, p.origin_y);
  EXPECT_EQ(canvas, img.crop(0, 0, 36, 27));
  const auto again = extract_patches(img, grid);
  for (std::size_t i = 0; i < patches.size(); ++i) EXPECT_EQ(again[i].pixels, patches[i].pixels);
}

TEST(ExtractPatches, TooSmallImageFails) {
  try {
    extract_patches(RasterImage(3, 3), GridSpec{4, 3});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::ImageTooSmall);
  }
}

TEST(ToClassifierInput, ScalesToSquare) {
  Patch p{"a", 0, random_image(510, 512, 3), 0, 0, 0};
  const auto r = to_classifier_input(p, 256);
  EXPECT_EQ(r.width(), 256);
  EXPECT_EQ(r.height(), 256);
}

TEST(ToClassifierInput, IdentityAndConstant) {
  Patch p{"a", 0, random_image(256, 256, 4), 0, 0, 0};
  EXPECT_EQ(to_classifier_input(p, 256), p.pixels);
  Patch c{"a", 0, RasterImage(510, 512, {30, 60, 90}), 0, 0, 0};
  EXPECT_EQ(to_classifier_input(c, 64), RasterImage(64, 64, {30, 60, 90}));
  EXPECT_THROW(to_classifier_input(c, 7), Error);
}

TEST(PatchNames, StemRoundTrip) {
  EXPECT_EQ(patch_stem("img_01", 11), "img_01_p11");
  const auto n = parse_patch_stem("img_01_p11");
  ASSERT_TRUE(n);
  EXPECT_EQ(n->image_id, "img_01");
  EXPECT_EQ(n->grid_index, 11);
  const auto aug = parse_patch_stem("x_p3_r5_e2");
  ASSERT_TRUE(aug);
  EXPECT_EQ(aug->image_id, "x");
  EXPECT_EQ(aug->grid_index, 3);
  EXPECT_FALSE(parse_patch_stem("nothing"));
}
