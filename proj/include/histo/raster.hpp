#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "histo/error.hpp"

namespace histo {

/// Clamp to [0,255] then round half away from zero. Every module quantizes
/// through this one function.
inline std::uint8_t quantize(double v) {
  if (!(v > 0.0)) return 0;  // also maps NaN to 0
  if (v >= 255.0) return 255;
  return static_cast<std::uint8_t>(std::round(v));
}

/**
 * Interleaved 8-bit RGB raster, row-major, top row first.
 *
 * Pixel access through at()/pixel() is bounds-checked and throws
 * std::out_of_range; coordinates never wrap.
 */
class RasterImage {
 public:
  static constexpr int kChannels = 3;

  RasterImage() = default;

  RasterImage(int width, int height, std::array<std::uint8_t, 3> fill = {0, 0, 0})
      : width_(checked_dim(width)), height_(checked_dim(height)) {
    data_.resize(byte_count(width_, height_));
    for (std::size_t i = 0; i < data_.size(); i += 3) {
      data_[i] = fill[0];
      data_[i + 1] = fill[1];
      data_[i + 2] = fill[2];
    }
  }

  // Lets a braced colour literal pick the fill constructor over the data one.
  RasterImage(int width, int height, const std::uint8_t (&fill)[3])
      : RasterImage(width, height, std::array<std::uint8_t, 3>{fill[0], fill[1], fill[2]}) {}

  RasterImage(int width, int height, std::vector<std::uint8_t> data)
      : width_(checked_dim(width)), height_(checked_dim(height)), data_(std::move(data)) {
    if (data_.size() != byte_count(width_, height_)) {
      throw Error(ErrorKind::ShapeMismatch,
                  "raster data has " + std::to_string(data_.size()) + " bytes, expected " +
                      std::to_string(byte_count(width_, height_)));
    }
  }

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  bool empty() const noexcept { return data_.empty(); }
  std::size_t pixel_count() const noexcept {
    return static_cast<std::size_t>(width_) * static_cast<std::size_t>(height_);
  }

  std::span<const std::uint8_t> bytes() const noexcept { return data_; }
  std::span<std::uint8_t> bytes() noexcept { return data_; }

  std::uint8_t at(int x, int y, int c) const { return data_[index(x, y, c)]; }
  std::uint8_t& at(int x, int y, int c) { return data_[index(x, y, c)]; }

  std::array<std::uint8_t, 3> pixel(int x, int y) const {
    const std::size_t i = index(x, y, 0);
    return {data_[i], data_[i + 1], data_[i + 2]};
  }
  void set_pixel(int x, int y, std::array<std::uint8_t, 3> rgb) {
    const std::size_t i = index(x, y, 0);
    data_[i] = rgb[0];
    data_[i + 1] = rgb[1];
    data_[i + 2] = rgb[2];
  }

  /// Copy of the w x h region with top-left corner (x0, y0).
  RasterImage crop(int x0, int y0, int w, int h) const {
    if (x0 < 0 || y0 < 0 || w < 1 || h < 1 || x0 + w > width_ || y0 + h > height_) {
      throw std::out_of_range("crop region outside raster");
    }
    std::vector<std::uint8_t> out(byte_count(w, h));
    const std::size_t row = static_cast<std::size_t>(w) * 3;
    for (int y = 0; y < h; ++y) {
      const auto* src = data_.data() + index(x0, y0 + y, 0);
      std::copy(src, src + row, out.data() + static_cast<std::size_t>(y) * row);
    }
    return RasterImage(w, h, std::move(out));
  }

  /// Writes `src` with its top-left corner at (x0, y0).
  void paste(const RasterImage& src, int x0, int y0) {
    if (x0 < 0 || y0 < 0 || x0 + src.width() > width_ || y0 + src.height() > height_) {
      throw std::out_of_range("paste region outside raster");
    }
    const std::size_t row = static_cast<std::size_t>(src.width()) * 3;
    for (int y = 0; y < src.height(); ++y) {
      const auto* s = src.data_.data() + src.index(0, y, 0);
      std::copy(s, s + row, data_.data() + index(x0, y0 + y, 0));
    }
  }

  bool is_constant() const noexcept {
    for (std::size_t i = 3; i < data_.size(); ++i) {
      if (data_[i] != data_[i % 3]) return false;
    }
    return true;
  }

  friend bool operator==(const RasterImage&, const RasterImage&) = default;

 private:
  static int checked_dim(int v) {
    if (v < 1) throw Error(ErrorKind::InvalidArgument, "raster dimensions must be >= 1");
    return v;
  }
  static std::size_t byte_count(int w, int h) {
    return static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * 3;
  }
  std::size_t index(int x, int y, int c) const {
    if (x < 0 || x >= width_ || y < 0 || y >= height_ || c < 0 || c >= 3) {
      throw std::out_of_range("pixel (" + std::to_string(x) + "," + std::to_string(y) +
                              ") outside " + std::to_string(width_) + "x" +
                              std::to_string(height_) + " raster");
    }
    return (static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) +
            static_cast<std::size_t>(x)) * 3 + static_cast<std::size_t>(c);
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> data_;
};

// ---------------------------------------------------------------------------
// Dihedral group D4
// ---------------------------------------------------------------------------

/// Element of D4: `k` counter-clockwise quarter turns, then an optional
/// vertical reflection (row r -> row h-1-r).
struct RotationFlip {
  int k = 0;
  bool flip_v = false;

  friend bool operator==(const RotationFlip&, const RotationFlip&) = default;
};

/// The eight group elements in expansion order: rotations first, then the
/// flipped rotations.
inline constexpr std::array<RotationFlip, 8> kDihedralElements = {{
    {0, false}, {1, false}, {2, false}, {3, false},
    {0, true}, {1, true}, {2, true}, {3, true},
}};

/// Counter-clockwise rotation by k quarter turns. Lossless.
inline RasterImage rotate90(const RasterImage& img, int k) {
  if (k < 0 || k > 3) throw Error(ErrorKind::InvalidArgument, "rotation count must be 0..3");
  if (k == 0) return img;
  const int w = img.width();
  const int h = img.height();
  const int ow = (k % 2 == 0) ? w : h;
  const int oh = (k % 2 == 0) ? h : w;
  RasterImage out(ow, oh);
  const auto src = img.bytes();
  auto dst = out.bytes();
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      int ox = 0;
      int oy = 0;
      switch (k) {
        case 1: ox = y; oy = w - 1 - x; break;
        case 2: ox = w - 1 - x; oy = h - 1 - y; break;
        default: ox = h - 1 - y; oy = x; break;
      }
      const std::size_t si = (static_cast<std::size_t>(y) * w + x) * 3;
      const std::size_t di = (static_cast<std::size_t>(oy) * ow + ox) * 3;
      dst[di] = src[si];
      dst[di + 1] = src[si + 1];
      dst[di + 2] = src[si + 2];
    }
  }
  return out;
}

inline RasterImage flip_vertical(const RasterImage& img) {
  RasterImage out(img.width(), img.height());
  const std::size_t row = static_cast<std::size_t>(img.width()) * 3;
  const auto src = img.bytes();
  auto dst = out.bytes();
  for (int y = 0; y < img.height(); ++y) {
    const std::size_t from = static_cast<std::size_t>(y) * row;
    const std::size_t to = static_cast<std::size_t>(img.height() - 1 - y) * row;
    std::copy(src.begin() + from, src.begin() + from + row, dst.begin() + to);
  }
  return out;
}

/// Reverses column order (column c -> column w-1-c).
inline RasterImage mirror_columns(const RasterImage& img) {
  RasterImage out(img.width(), img.height());
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      out.set_pixel(img.width() - 1 - x, y, img.pixel(x, y));
    }
  }
  return out;
}

inline RasterImage apply(const RasterImage& img, RotationFlip g) {
  RasterImage out = rotate90(img, g.k);
  return g.flip_v ? flip_vertical(out) : out;
}

/// Undoes apply(img, g).
inline RasterImage apply_inverse(const RasterImage& img, RotationFlip g) {
  const RasterImage unflipped = g.flip_v ? flip_vertical(img) : img;
  return rotate90(unflipped, (4 - g.k) % 4);
}

// ---------------------------------------------------------------------------
// Bicubic resampling
// ---------------------------------------------------------------------------

/// Catmull-Rom cubic convolution kernel (a = -0.5).
inline double catmull_rom(double x) {
  constexpr double a = -0.5;
  x = std::abs(x);
  if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
  if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
  return 0.0;
}

namespace detail {

// Float planes, interleaved RGB, used between resampling passes.
struct FloatImage {
  int width = 0;
  int height = 0;
  std::vector<double> data;

  double& at(int x, int y, int c) {
    return data[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
  double at(int x, int y, int c) const {
    return data[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
};

inline FloatImage to_float(const RasterImage& img) {
  FloatImage f{img.width(), img.height(), {}};
  f.data.assign(img.bytes().begin(), img.bytes().end());
  return f;
}

inline RasterImage quantize(const FloatImage& f) {
  std::vector<std::uint8_t> out(f.data.size());
  std::transform(f.data.begin(), f.data.end(), out.begin(),
                 [](double v) { return histo::quantize(v); });
  return RasterImage(f.width, f.height, std::move(out));
}

// Centered moving average of length `k` along one axis, clamped at edges.
inline FloatImage box_prefilter(const FloatImage& in, int k, bool horizontal) {
  FloatImage out = in;
  const int lo = -(k - 1) / 2;
  const int n = horizontal ? in.width : in.height;
  for (int y = 0; y < in.height; ++y) {
    for (int x = 0; x < in.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int o = lo; o < lo + k; ++o) {
          const int p = std::clamp((horizontal ? x : y) + o, 0, n - 1);
          acc += horizontal ? in.at(p, y, c) : in.at(x, p, c);
        }
        out.at(x, y, c) = acc / k;
      }
    }
  }
  return out;
}

struct Taps {
  std::array<int, 4> index;
  std::array<double, 4> weight;
};

inline std::vector<Taps> bicubic_taps(int in_size, int out_size) {
  std::vector<Taps> taps(static_cast<std::size_t>(out_size));
  for (int i = 0; i < out_size; ++i) {
    const double src = (i + 0.5) * in_size / out_size - 0.5;
    const double base = std::floor(src);
    const double t = src - base;
    const int b = static_cast<int>(base);
    for (int j = 0; j < 4; ++j) {
      taps[i].index[j] = std::clamp(b - 1 + j, 0, in_size - 1);
      taps[i].weight[j] = catmull_rom(t - (j - 1));
    }
  }
  return taps;
}

}  // namespace detail

/**
 * Catmull-Rom bicubic resize with pixel-center alignment and clamp-to-edge
 * borders. Axes shrinking by more than 2x are first box-filtered with the
 * integer scale ratio.
 */
inline RasterImage bicubic_resize(const RasterImage& img, int out_w, int out_h) {
  if (out_w < 1 || out_h < 1) {
    throw Error(ErrorKind::InvalidArgument, "resize target must be at least 1x1");
  }
  if (out_w == img.width() && out_h == img.height()) return img;

  detail::FloatImage src = detail::to_float(img);
  if (img.width() > 2 * out_w) src = detail::box_prefilter(src, img.width() / out_w, true);
  if (img.height() > 2 * out_h) src = detail::box_prefilter(src, img.height() / out_h, false);

  const auto xt = detail::bicubic_taps(img.width(), out_w);
  detail::FloatImage horiz{out_w, img.height(), {}};
  horiz.data.resize(static_cast<std::size_t>(out_w) * img.height() * 3);
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < out_w; ++x) {
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int j = 0; j < 4; ++j) acc += xt[x].weight[j] * src.at(xt[x].index[j], y, c);
        horiz.at(x, y, c) = acc;
      }
    }
  }

  const auto yt = detail::bicubic_taps(img.height(), out_h);
  detail::FloatImage out{out_w, out_h, {}};
  out.data.resize(static_cast<std::size_t>(out_w) * out_h * 3);
  for (int y = 0; y < out_h; ++y) {
    for (int x = 0; x < out_w; ++x) {
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int j = 0; j < 4; ++j) acc += yt[y].weight[j] * horiz.at(x, yt[y].index[j], c);
        out.at(x, y, c) = acc;
      }
    }
  }
  return detail::quantize(out);
}

}  // namespace histo
