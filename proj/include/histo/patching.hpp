#pragma once

#include <optional>
#include <regex>
#include <string>
#include <vector>

#include "histo/error.hpp"
#include "histo/raster.hpp"

namespace histo {

/// Patch grid layout. The default 4x3 gives 510x512 patches on 2040x1536
/// slides.
struct GridSpec {
  int cols = 4;
  int rows = 3;

  int patch_count() const noexcept { return cols * rows; }
};

struct Patch {
  std::string image_id;
  int grid_index = 0;
  RasterImage pixels;
  int origin_x = 0;
  int origin_y = 0;
  /// Index into kDihedralElements when produced by expand_eight, else 0.
  int variant = 0;
};

/**
 * Tiles `img` into grid.cols x grid.rows equal patches in row-major order.
 * Remainder columns/rows that do not fill a whole patch are dropped from the
 * right and bottom edges.
 */
inline std::vector<Patch> extract_patches(const RasterImage& img, const GridSpec& grid,
                                          const std::string& image_id = {}) {
  if (grid.cols < 1 || grid.rows < 1) {
    throw Error(ErrorKind::InvalidArgument, "grid must have at least one column and row");
  }
  if (img.width() < grid.cols || img.height() < grid.rows) {
    throw Error(ErrorKind::ImageTooSmall,
                std::to_string(img.width()) + "x" + std::to_string(img.height()) +
                    " image cannot hold a " + std::to_string(grid.cols) + "x" +
                    std::to_string(grid.rows) + " grid");
  }
  const int pw = img.width() / grid.cols;
  const int ph = img.height() / grid.rows;
  std::vector<Patch> patches;
  patches.reserve(static_cast<std::size_t>(grid.patch_count()));
  for (int r = 0; r < grid.rows; ++r) {
    for (int c = 0; c < grid.cols; ++c) {
      patches.push_back(Patch{image_id, r * grid.cols + c, img.crop(c * pw, r * ph, pw, ph),
                              c * pw, r * ph, 0});
    }
  }
  return patches;
}

/// Scales a patch to side x side for a classifier (aspect ratio not kept).
inline RasterImage to_classifier_input(const Patch& p, int side) {
  if (side < 8) throw Error(ErrorKind::InvalidArgument, "classifier input side must be >= 8");
  return bicubic_resize(p.pixels, side, side);
}

/// `<image_id>_p<grid_index>`; the aggregator keys on this stem.
inline std::string patch_stem(const std::string& image_id, int grid_index) {
  return image_id + "_p" + std::to_string(grid_index);
}

struct PatchName {
  std::string image_id;
  int grid_index = 0;
};

/// Inverse of patch_stem; extra suffixes such as `_r3_e0` are ignored.
inline std::optional<PatchName> parse_patch_stem(const std::string& stem) {
  static const std::regex re(R"(^(.+)_p(\d+)(_r\d+)?(_e\d+)?$)");
  std::smatch m;
  if (!std::regex_match(stem, m, re)) return std::nullopt;
  return PatchName{m[1].str(), std::stoi(m[2].str())};
}

}  // namespace histo
