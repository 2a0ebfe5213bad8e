#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "histo/raster.hpp"

using namespace histo;

namespace {

RasterImage random_image(int w, int h, std::uint32_t seed) {
  std::mt19937 rng(seed);
  RasterImage img(w, h);
  for (auto& b : img.bytes()) b = static_cast<std::uint8_t>(rng() & 0xff);
  return img;
}

// Scalar cubic-convolution kernel with a = -1/2, written out from its
// piecewise definition.
double oracle_kernel(double x) {
  const double t = std::fabs(x);
  if (t < 1.0) return 1.5 * t * t * t - 2.5 * t * t + 1.0;
  if (t < 2.0) return -0.5 * t * t * t + 2.5 * t * t - 4.0 * t + 2.0;
  return 0.0;
}

// Direct 2-D evaluation of one output sample.
double oracle_sample(const RasterImage& img, int out_w, int out_h, int i, int j, int c) {
  const double u = (i + 0.5) * img.width() / out_w - 0.5;
  const double v = (j + 0.5) * img.height() / out_h - 0.5;
  const int u0 = static_cast<int>(std::floor(u));
  const int v0 = static_cast<int>(std::floor(v));
  double acc = 0.0;
  for (int n = v0 - 1; n <= v0 + 2; ++n) {
    for (int m = u0 - 1; m <= u0 + 2; ++m) {
      const int sx = std::min(std::max(m, 0), img.width() - 1);
      const int sy = std::min(std::max(n, 0), img.height() - 1);
      acc += oracle_kernel(u - m) * oracle_kernel(v - n) * img.at(sx, sy, c);
    }
  }
  return acc;
}

}  // namespace

TEST(RasterImage, RejectsWrongDataLength) {
  EXPECT_THROW(RasterImage(2, 2, std::vector<std::uint8_t>(11)), Error);
  EXPECT_THROW(RasterImage(0, 2), Error);
}

TEST(RasterImage, AccessIsBoundsChecked) {
  RasterImage img(3, 2);
  EXPECT_NO_THROW(img.at(2, 1, 2));
  EXPECT_THROW(img.at(3, 0, 0), std::out_of_range);
  EXPECT_THROW(img.at(0, -1, 0), std::out_of_range);
  EXPECT_THROW(img.at(0, 0, 3), std::out_of_range);
}

TEST(Quantize, ClampsAndRoundsHalfAwayFromZero) {
  EXPECT_EQ(quantize(-3.0), 0);
  EXPECT_EQ(quantize(300.0), 255);
  EXPECT_EQ(quantize(127.5), 128);
  EXPECT_EQ(quantize(127.49), 127);
  EXPECT_EQ(quantize(0.5), 1);
}

TEST(Rotate90, IdentityForZeroTurns) {
  const auto img = random_image(5, 3, 1);
  EXPECT_EQ(rotate90(img, 0), img);
}

TEST(Rotate90, QuarterTurnIsCounterClockwise) {
  RasterImage img(2, 1);
  img.set_pixel(0, 0, {10, 20, 30});  // A, left
  img.set_pixel(1, 0, {40, 50, 60});  // B, right
  const auto r = rotate90(img, 1);
  ASSERT_EQ(r.width(), 1);
  ASSERT_EQ(r.height(), 2);
  EXPECT_EQ(r.pixel(0, 1), (std::array<std::uint8_t, 3>{10, 20, 30}));
  EXPECT_EQ(r.pixel(0, 0), (std::array<std::uint8_t, 3>{40, 50, 60}));
}

TEST(Rotate90, FourQuarterTurnsRestoreLargeImage) {
  const auto img = random_image(510, 512, 2);
  auto r = img;
  for (int i = 0; i < 4; ++i) r = rotate90(r, 1);
  EXPECT_EQ(r, img);
}

TEST(Rotate90, DimensionsSwapOnOddTurns) {
  const auto img = random_image(7, 4, 3);
  EXPECT_EQ(rotate90(img, 1).width(), 4);
  EXPECT_EQ(rotate90(img, 2).width(), 7);
  EXPECT_EQ(rotate90(img, 3).height(), 7);
  EXPECT_THROW(rotate90(img, 4), Error);
}

TEST(Rotate90, HalfTurnEqualsBothReflections) {
  const auto img = random_image(9, 6, 4);
  EXPECT_EQ(rotate90(img, 2), flip_vertical(mirror_columns(img)));
}

TEST(FlipVertical, SingleRowUnchanged) {
  const auto img = random_image(6, 1, 5);
  EXPECT_EQ(flip_vertical(img), img);
}

TEST(FlipVertical, SwapsRows) {
  RasterImage img(1, 2);
  img.set_pixel(0, 0, {1, 2, 3});
  img.set_pixel(0, 1, {4, 5, 6});
  const auto f = flip_vertical(img);
  EXPECT_EQ(f.pixel(0, 0), (std::array<std::uint8_t, 3>{4, 5, 6}));
  EXPECT_EQ(f.pixel(0, 1), (std::array<std::uint8_t, 3>{1, 2, 3}));
  EXPECT_EQ(flip_vertical(f), img);
}

TEST(Dihedral, EveryElementComposedWithInverseIsIdentity) {
  for (std::uint32_t seed = 0; seed < 10; ++seed) {
    const auto img = random_image(3 + static_cast<int>(seed), 5, seed);
    for (const auto& g : kDihedralElements) {
      EXPECT_EQ(apply_inverse(apply(img, g), g), img);
    }
  }
}

TEST(BicubicResize, SameSizeIsIdentity) {
  const auto img = random_image(13, 11, 6);
  EXPECT_EQ(bicubic_resize(img, 13, 11), img);
}

TEST(BicubicResize, ConstantImagesStayConstant) {
  const RasterImage img(6, 5, {17, 200, 99});
  for (int w = 1; w <= 24; w += 3) {
    for (int h = 1; h <= 20; h += 2) {
      const auto r = bicubic_resize(img, w, h);
      EXPECT_EQ(r, RasterImage(w, h, {17, 200, 99})) << w << "x" << h;
    }
  }
}

TEST(BicubicResize, RampUpscaleMatchesScalarOracle) {
  RasterImage img(4, 4);
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 4; ++x) img.set_pixel(x, y, {static_cast<std::uint8_t>(x * 60 + 10), 0, 255});
  }
  const auto r = bicubic_resize(img, 8, 8);
  for (int j = 0; j < 8; ++j) {
    for (int i = 0; i < 8; ++i) {
      for (int c = 0; c < 3; ++c) {
        const double expected = oracle_sample(img, 8, 8, i, j, c);
        EXPECT_EQ(r.at(i, j, c), quantize(expected)) << i << "," << j << "," << c;
      }
    }
  }
}

TEST(BicubicResize, RandomDownscaleMatchesScalarOracle) {
  const auto img = random_image(17, 13, 7);
  const auto r = bicubic_resize(img, 12, 10);
  for (int j = 0; j < 10; ++j) {
    for (int i = 0; i < 12; ++i) {
      for (int c = 0; c < 3; ++c) {
        EXPECT_NEAR(r.at(i, j, c), quantize(oracle_sample(img, 12, 10, i, j, c)), 1);
      }
    }
  }
}

TEST(BicubicResize, StrongDownscaleUsesBoxPrefilter) {
  // Alternating columns average to mid grey once box filtered by 4.
  RasterImage img(64, 4);
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 64; ++x) {
      const std::uint8_t v = (x % 2) ? 255 : 0;
      img.set_pixel(x, y, {v, v, v});
    }
  }
  const auto r = bicubic_resize(img, 16, 4);
  for (int x = 2; x < 14; ++x) EXPECT_NEAR(r.at(x, 1, 0), 128, 1);
}
