#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <vector>

namespace birads {

/// Grayscale image, rows = height, cols = width. Row-major so that the
/// flattened pixel index is y * width + x.
using GrayImage = Eigen::Array<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Channel-stacked image: one row per channel, each row a flattened
/// height x width plane.
struct ChannelImage {
  Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> data;
  int height = 0;
  int width = 0;

  int channels() const { return static_cast<int>(data.rows()); }

  Eigen::Map<GrayImage> plane(int c) { return {data.row(c).data(), height, width}; }
  Eigen::Map<const GrayImage> plane(int c) const { return {data.row(c).data(), height, width}; }
};

struct BoundingBox {
  int x0 = 0;
  int y0 = 0;
  int x1 = 0;  // exclusive
  int y1 = 0;  // exclusive

  int width() const { return x1 - x0; }
  int height() const { return y1 - y0; }
  bool valid_for(int image_width, int image_height) const {
    return x0 >= 0 && y0 >= 0 && x0 < x1 && y0 < y1 && x1 <= image_width && y1 <= image_height;
  }
  bool operator==(const BoundingBox&) const = default;
};

class ImageIoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PngInfo {
  int width = 0;
  int height = 0;
  int bit_depth = 0;
};

/// Reads an 8- or 16-bit PNG and returns luminance normalized to [0, 1].
/// Colour images are converted to gray; alpha is dropped.
GrayImage read_png_gray(const std::filesystem::path& path);

PngInfo read_png_info(const std::filesystem::path& path);

/// Writes an 8-bit grayscale PNG; values are clamped to [0, 1] and rounded.
void write_png_gray(const std::filesystem::path& path, const GrayImage& image);

/// Writes an 8-bit RGB PNG from interleaved rows (width * 3 bytes per row).
void write_png_rgb(const std::filesystem::path& path, int width, int height, const std::vector<std::uint8_t>& rgb);

}  // namespace birads
