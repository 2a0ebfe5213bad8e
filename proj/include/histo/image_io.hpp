#pragma once

#include <png.h>

#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include "histo/error.hpp"
#include "histo/raster.hpp"

namespace histo {

enum class ImageFormat { Ppm, Png };

inline std::string extension(ImageFormat f) { return f == ImageFormat::Ppm ? "ppm" : "png"; }

inline ImageFormat format_from_name(const std::string& name) {
  if (name == "ppm") return ImageFormat::Ppm;
  if (name == "png") return ImageFormat::Png;
  throw Error(ErrorKind::InvalidArgument, "unknown image format '" + name + "'");
}

// ---------------------------------------------------------------------------
// PPM (binary P6, maxval 255)
// ---------------------------------------------------------------------------

/// Exactly "P6\n<w> <h>\n255\n" followed by the raw samples.
inline std::vector<std::uint8_t> encode_ppm(const RasterImage& img) {
  const std::string header =
      "P6\n" + std::to_string(img.width()) + " " + std::to_string(img.height()) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), img.bytes().begin(), img.bytes().end());
  return out;
}

namespace detail {

class PpmHeaderReader {
 public:
  explicit PpmHeaderReader(std::span<const std::uint8_t> b) : b_(b) {}

  std::size_t pos() const { return pos_; }

  void skip_space_and_comments() {
    while (pos_ < b_.size()) {
      if (b_[pos_] == '#') {
        while (pos_ < b_.size() && b_[pos_] != '\n') ++pos_;
      } else if (std::isspace(b_[pos_])) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  long read_uint(const char* what) {
    skip_space_and_comments();
    const std::size_t start = pos_;
    long v = 0;
    while (pos_ < b_.size() && b_[pos_] >= '0' && b_[pos_] <= '9') {
      v = v * 10 + (b_[pos_] - '0');
      if (v > (1L << 30)) throw Error(ErrorKind::MalformedFile, std::string(what) + " too large", start);
      ++pos_;
    }
    if (pos_ == start) {
      throw Error(ErrorKind::MalformedFile, std::string("expected ") + what, start);
    }
    return v;
  }

  void expect_single_space() {
    if (pos_ >= b_.size() || !std::isspace(b_[pos_])) {
      throw Error(ErrorKind::MalformedFile, "expected whitespace after maxval", pos_);
    }
    ++pos_;
  }

 private:
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 2;
};

}  // namespace detail

inline RasterImage decode_ppm(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') {
    throw Error(ErrorKind::MalformedFile, "missing P6 magic", 0);
  }
  detail::PpmHeaderReader r(bytes);
  const long w = r.read_uint("width");
  const long h = r.read_uint("height");
  const std::size_t maxval_pos = r.pos();
  const long maxval = r.read_uint("maxval");
  if (w < 1 || h < 1) throw Error(ErrorKind::MalformedFile, "zero image dimension", maxval_pos);
  if (maxval != 255) {
    throw Error(ErrorKind::UnsupportedFormat,
                "maxval " + std::to_string(maxval) + " (only 255 supported)", maxval_pos);
  }
  r.expect_single_space();
  const std::size_t need = static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * 3;
  const std::size_t have = bytes.size() - r.pos();
  if (have < need) {
    throw Error(ErrorKind::MalformedFile,
                "truncated pixel data: " + std::to_string(have) + " of " + std::to_string(need) +
                    " bytes",
                bytes.size());
  }
  std::vector<std::uint8_t> data(bytes.begin() + static_cast<std::ptrdiff_t>(r.pos()),
                                 bytes.begin() + static_cast<std::ptrdiff_t>(r.pos() + need));
  return RasterImage(static_cast<int>(w), static_cast<int>(h), std::move(data));
}

// ---------------------------------------------------------------------------
// PNG via libpng (8-bit RGB; RGBA accepted with alpha dropped)
// ---------------------------------------------------------------------------

inline std::vector<std::uint8_t> encode_png(const RasterImage& img) {
  png_image desc{};
  desc.version = PNG_IMAGE_VERSION;
  desc.width = static_cast<png_uint_32>(img.width());
  desc.height = static_cast<png_uint_32>(img.height());
  desc.format = PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  const auto* pixels = img.bytes().data();
  if (!png_image_write_to_memory(&desc, nullptr, &size, 0, pixels, 0, nullptr)) {
    throw Error(ErrorKind::IoError, std::string("PNG encode failed: ") + desc.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&desc, out.data(), &size, 0, pixels, 0, nullptr)) {
    throw Error(ErrorKind::IoError, std::string("PNG encode failed: ") + desc.message);
  }
  out.resize(size);
  return out;
}

inline RasterImage decode_png(std::span<const std::uint8_t> b) {
  png_image desc{};
  desc.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&desc, b.data(), b.size())) {
    throw Error(ErrorKind::MalformedFile, std::string("PNG header: ") + desc.message);
  }
  // IHDR always follows the 8-byte signature; bit depth and colour type sit
  // at fixed offsets inside it.
  const std::size_t depth_at = 24;
  const std::size_t colour_at = 25;
  if (b.size() <= colour_at) {
    png_image_free(&desc);
    throw Error(ErrorKind::MalformedFile, "PNG truncated inside IHDR", b.size());
  }
  if (b[depth_at] != 8) {
    png_image_free(&desc);
    throw Error(ErrorKind::UnsupportedFormat,
                "PNG bit depth " + std::to_string(b[depth_at]) + " (only 8 is supported)", depth_at);
  }
  const int colour = b[colour_at];
  if (colour != 2 && colour != 6) {
    png_image_free(&desc);
    throw Error(ErrorKind::UnsupportedFormat,
                "PNG colour type " + std::to_string(colour) + " (only RGB and RGBA are supported)",
                colour_at);
  }
  const bool alpha = colour == 6;
  if (alpha) std::cerr << "warning: dropping PNG alpha channel\n";
  desc.format = alpha ? PNG_FORMAT_RGBA : PNG_FORMAT_RGB;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(desc));
  if (!png_image_finish_read(&desc, nullptr, buf.data(), 0, nullptr)) {
    throw Error(ErrorKind::MalformedFile, std::string("PNG data: ") + desc.message);
  }
  const int w = static_cast<int>(desc.width);
  const int h = static_cast<int>(desc.height);
  if (!alpha) return RasterImage(w, h, std::move(buf));
  std::vector<std::uint8_t> rgb;
  rgb.reserve(static_cast<std::size_t>(w) * h * 3);
  for (std::size_t i = 0; i < buf.size(); i += 4) rgb.insert(rgb.end(), {buf[i], buf[i + 1], buf[i + 2]});
  return RasterImage(w, h, std::move(rgb));
}

// ---------------------------------------------------------------------------
// Format dispatch and file helpers
// ---------------------------------------------------------------------------

inline RasterImage decode_image(std::span<const std::uint8_t> bytes) {
  if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '6') return decode_ppm(bytes);
  if (bytes.size() >= 8 && bytes[0] == 0x89 && bytes[1] == 'P') return decode_png(bytes);
  if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] >= '1' && bytes[1] <= '7') {
    throw Error(ErrorKind::UnsupportedFormat, "only binary P6 netpbm is supported", 0);
  }
  throw Error(ErrorKind::MalformedFile, "unrecognized image magic", 0);
}

inline std::vector<std::uint8_t> encode_image(const RasterImage& img, ImageFormat format) {
  return format == ImageFormat::Ppm ? encode_ppm(img) : encode_png(img);
}

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::IoError, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (in.bad()) throw Error(ErrorKind::IoError, "read failed: " + path.string());
  return bytes;
}

inline void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::IoError, "cannot create " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::IoError, "write failed: " + path.string());
}

inline RasterImage read_image(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  try {
    return decode_image(bytes);
  } catch (const Error& e) {
    throw Error(e.kind(), path.string() + ": " + e.what());
  }
}

/// Format chosen from the extension (.ppm or .png).
inline void write_image(const std::filesystem::path& path, const RasterImage& img) {
  const std::string ext = path.extension().string();
  if (ext != ".ppm" && ext != ".png") {
    throw Error(ErrorKind::InvalidArgument, "unsupported output extension " + path.string());
  }
  write_file(path, encode_image(img, ext == ".ppm" ? ImageFormat::Ppm : ImageFormat::Png));
}

}  // namespace histo
