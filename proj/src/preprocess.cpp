#include "birads/preprocess.hpp"

#include "birads/random.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

namespace birads {
namespace {

int mirror_index(int i, int n) {
  while (i < 0 || i >= n) {
    if (i < 0) i = -i - 1;
    if (i >= n) i = 2 * n - i - 1;
  }
  return i;
}

float sample_bilinear_clamped(const Eigen::Map<const GrayImage>& plane, double x, double y) {
  const int h = static_cast<int>(plane.rows());
  const int w = static_cast<int>(plane.cols());
  x = std::clamp(x, 0.0, static_cast<double>(w - 1));
  y = std::clamp(y, 0.0, static_cast<double>(h - 1));
  const int x0 = static_cast<int>(std::floor(x));
  const int y0 = static_cast<int>(std::floor(y));
  const int x1 = std::min(x0 + 1, w - 1);
  const int y1 = std::min(y0 + 1, h - 1);
  const double fx = x - x0;
  const double fy = y - y0;
  const double top = (1.0 - fx) * plane(y0, x0) + fx * plane(y0, x1);
  const double bottom = (1.0 - fx) * plane(y1, x0) + fx * plane(y1, x1);
  return static_cast<float>((1.0 - fy) * top + fy * bottom);
}

GrayImage resample(const GrayImage& image, int out_height, int out_width) {
  const Eigen::Map<const GrayImage> src(image.data(), image.rows(), image.cols());
  const double sy = static_cast<double>(image.rows()) / out_height;
  const double sx = static_cast<double>(image.cols()) / out_width;
  GrayImage out(out_height, out_width);
  for (int y = 0; y < out_height; ++y) {
    const double src_y = (y + 0.5) * sy - 0.5;
    for (int x = 0; x < out_width; ++x) {
      out(y, x) = sample_bilinear_clamped(src, (x + 0.5) * sx - 0.5, src_y);
    }
  }
  return out;
}

}  // namespace

void PreprocessConfig::validate() const {
  if (target_size <= 0) throw PreprocessError("target_size must be positive");
  if (!(smoothing_sigma > 0.0)) throw PreprocessError("smoothing_sigma must be positive");
}

void AugmentConfig::validate() const {
  if (zoom_range < 0 || width_shift < 0 || rotation_deg < 0 || shear < 0) {
    throw PreprocessError("augmentation ranges must be nonnegative");
  }
  if (zoom_range >= 1.0) throw PreprocessError("zoom_range must be below 1");
}

AugmentConfig AugmentConfig::none() {
  AugmentConfig c;
  c.zoom_range = 0.0;
  c.width_shift = 0.0;
  c.rotation_deg = 0.0;
  c.shear = 0.0;
  c.horizontal_flip = false;
  return c;
}

BoundingBox tumor_square(int image_width, int image_height, const BoundingBox& bbox) {
  if (image_width <= 0 || image_height <= 0) throw PreprocessError("degenerate image");
  if (!bbox.valid_for(image_width, image_height)) throw PreprocessError("bounding box outside image");
  const int side = std::min(image_width, image_height);
  auto place = [side](int lo, int hi, int extent) {
    // floor((lo + hi - side) / 2), then clamp into [0, extent - side]
    const int twice = lo + hi - side;
    const int start = twice >= 0 ? twice / 2 : -((-twice + 1) / 2);
    return std::clamp(start, 0, extent - side);
  };
  const int x = place(bbox.x0, bbox.x1, image_width);
  const int y = place(bbox.y0, bbox.y1, image_height);
  return {x, y, x + side, y + side};
}

GrayImage crop_tumor_square(const GrayImage& image, const BoundingBox& bbox) {
  const auto window = tumor_square(static_cast<int>(image.cols()), static_cast<int>(image.rows()), bbox);
  return image.block(window.y0, window.x0, window.height(), window.width());
}

GrayImage resize(const GrayImage& image, int size) {
  if (image.rows() < 1 || image.cols() < 1) throw PreprocessError("cannot resize an empty image");
  if (size <= 0) throw PreprocessError("resize target must be positive");
  if (image.rows() == size && image.cols() == size) return image;
  return resample(image, size, size);
}

GrayImage equalize_histogram(const GrayImage& image) {
  constexpr int kBins = 256;
  auto bin_of = [](float v) { return std::clamp(static_cast<int>(std::floor(v * kBins)), 0, kBins - 1); };
  std::array<long, kBins> cdf{};
  for (Eigen::Index i = 0; i < image.size(); ++i) ++cdf[bin_of(image.data()[i])];
  for (int b = 1; b < kBins; ++b) cdf[b] += cdf[b - 1];
  const long total = static_cast<long>(image.size());
  const long cdf_min = *std::find_if(cdf.begin(), cdf.end(), [](long c) { return c > 0; });
  if (total == cdf_min) return image;
  GrayImage out(image.rows(), image.cols());
  const double denom = static_cast<double>(total - cdf_min);
  for (Eigen::Index i = 0; i < image.size(); ++i) {
    out.data()[i] = static_cast<float>((cdf[bin_of(image.data()[i])] - cdf_min) / denom);
  }
  return out;
}

GrayImage gaussian_smooth(const GrayImage& image, double sigma) {
  if (!(sigma > 0.0)) throw PreprocessError("smoothing sigma must be positive");
  const int radius = static_cast<int>(std::ceil(2.0 * sigma));
  std::vector<double> kernel(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[i + radius] = std::exp(-(i * i) / (2.0 * sigma * sigma));
    sum += kernel[i + radius];
  }
  for (double& k : kernel) k /= sum;

  const int h = static_cast<int>(image.rows());
  const int w = static_cast<int>(image.cols());
  GrayImage horizontal(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) acc += kernel[i + radius] * image(y, mirror_index(x + i, w));
      horizontal(y, x) = static_cast<float>(acc);
    }
  }
  GrayImage out(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) acc += kernel[i + radius] * horizontal(mirror_index(y + i, h), x);
      out(y, x) = static_cast<float>(acc);
    }
  }
  return out;
}

ChannelImage synthesize_channels(const GrayImage& image, const PreprocessConfig& config) {
  ChannelImage out;
  out.height = static_cast<int>(image.rows());
  out.width = static_cast<int>(image.cols());
  out.data.resize(3, image.size());
  out.plane(0) = image;
  if (config.use_three_channels) {
    out.plane(1) = equalize_histogram(image);
    out.plane(2) = gaussian_smooth(image, config.smoothing_sigma);
  } else {
    out.plane(1) = image;
    out.plane(2) = image;
  }
  return out;
}

ChannelImage prepare_image(const GrayImage& image, const BoundingBox& bbox, const PreprocessConfig& config) {
  config.validate();
  if (image.rows() == 0 || image.cols() == 0) throw PreprocessError("degenerate image");
  if (config.use_crop) {
    return synthesize_channels(resize(crop_tumor_square(image, bbox), config.target_size), config);
  }
  // Without cropping the whole frame is squashed to the target square.
  return synthesize_channels(resample(image, config.target_size, config.target_size), config);
}

AugmentParams draw_augment_params(const AugmentConfig& config, std::uint64_t sample_key, int image_width) {
  config.validate();
  Rng rng = make_rng({config.seed, sample_key, 0xa0a0u});
  AugmentParams p;
  p.zoom = uniform(rng, 1.0 - config.zoom_range, 1.0 + config.zoom_range);
  p.shift_x = uniform(rng, -config.width_shift, config.width_shift) * image_width;
  const double rot = config.rotation_deg * std::numbers::pi / 180.0;
  p.rotation_rad = uniform(rng, -rot, rot);
  p.shear_rad = uniform(rng, -config.shear, config.shear);
  const double coin = uniform(rng, 0.0, 1.0);
  p.flip = config.horizontal_flip && coin < 0.5;
  return p;
}

ChannelImage horizontal_flip(const ChannelImage& image) {
  ChannelImage out = image;
  for (int c = 0; c < image.channels(); ++c) out.plane(c) = image.plane(c).rowwise().reverse();
  return out;
}

ChannelImage apply_augmentation(const ChannelImage& image, const AugmentParams& params) {
  if (params.is_geometric_identity()) return params.flip ? horizontal_flip(image) : image;

  const double cx = (image.width - 1) / 2.0;
  const double cy = (image.height - 1) / 2.0;
  const double cos_r = std::cos(params.rotation_rad);
  const double sin_r = std::sin(params.rotation_rad);
  const double tan_s = std::tan(params.shear_rad);
  const double inv_zoom = 1.0 / params.zoom;

  ChannelImage out = image;
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      // destination = c + shift + R * Shear * zoom * (source - c); invert step by step
      const double dx = x - cx - params.shift_x;
      const double dy = y - cy;
      const double rx = cos_r * dx + sin_r * dy;
      const double ry = -sin_r * dx + cos_r * dy;
      const double hx = rx - tan_s * ry;
      const double hy = ry;
      double sx = cx + hx * inv_zoom;
      const double sy = cy + hy * inv_zoom;
      if (params.flip) sx = (image.width - 1) - sx;
      for (int c = 0; c < image.channels(); ++c) {
        out.plane(c)(y, x) = sample_bilinear_clamped(image.plane(c), sx, sy);
      }
    }
  }
  return out;
}

std::pair<ChannelImage, TaskTargets> augment(const ChannelImage& image, const TaskTargets& targets,
                                             const AugmentConfig& config, std::uint64_t sample_key) {
  const auto params = draw_augment_params(config, sample_key, image.width);
  return {apply_augmentation(image, params), targets};
}

}  // namespace birads
