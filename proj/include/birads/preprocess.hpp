#pragma once

#include "birads/image.hpp"
#include "birads/tasks.hpp"

#include <cstdint>
#include <stdexcept>
#include <utility>

namespace birads {

class PreprocessError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PreprocessConfig {
  int target_size = 256;
  bool use_crop = true;
  bool use_three_channels = true;
  double smoothing_sigma = 1.0;

  void validate() const;
};

struct AugmentConfig {
  double zoom_range = 0.20;    // zoom factor drawn from [1 - z, 1 + z]
  double width_shift = 0.10;   // fraction of width
  double rotation_deg = 5.0;
  double shear = 0.20;         // shear angle, radians
  bool horizontal_flip = true;
  std::uint64_t seed = 0;

  void validate() const;
  /// All ranges zero and no flip.
  static AugmentConfig none();
};

/// One random draw of augmentation parameters.
struct AugmentParams {
  double zoom = 1.0;
  double shift_x = 0.0;  // pixels
  double rotation_rad = 0.0;
  double shear_rad = 0.0;
  bool flip = false;

  bool is_geometric_identity() const {
    return zoom == 1.0 && shift_x == 0.0 && rotation_rad == 0.0 && shear_rad == 0.0;
  }
};

/// Square window of side min(H, W) centred on the bbox and clamped inside the image.
BoundingBox tumor_square(int image_width, int image_height, const BoundingBox& bbox);

GrayImage crop_tumor_square(const GrayImage& image, const BoundingBox& bbox);

/// Bilinear resize of a square image to size x size (half-pixel centres, edge clamp).
GrayImage resize(const GrayImage& image, int size);

/// 256-bin histogram equalization of a [0, 1] image. A constant image is returned unchanged.
GrayImage equalize_histogram(const GrayImage& image);

/// Separable Gaussian blur, radius ceil(2 sigma), mirrored borders.
GrayImage gaussian_smooth(const GrayImage& image, double sigma);

/// Gray, equalized and smoothed channels; or gray replicated three times.
ChannelImage synthesize_channels(const GrayImage& image, const PreprocessConfig& config);

/// Crop (optional), resize and channel synthesis for one image.
ChannelImage prepare_image(const GrayImage& image, const BoundingBox& bbox, const PreprocessConfig& config);

/// Draws parameters deterministically from (config.seed, sample_key).
AugmentParams draw_augment_params(const AugmentConfig& config, std::uint64_t sample_key, int image_width);

/// Applies one geometric transform identically to every channel. Out-of-frame
/// samples take the nearest edge value.
ChannelImage apply_augmentation(const ChannelImage& image, const AugmentParams& params);

ChannelImage horizontal_flip(const ChannelImage& image);

/// Random augmentation; the targets are passed through untouched.
std::pair<ChannelImage, TaskTargets> augment(const ChannelImage& image, const TaskTargets& targets,
                                             const AugmentConfig& config, std::uint64_t sample_key);

}  // namespace birads
