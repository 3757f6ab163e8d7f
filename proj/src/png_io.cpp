#include "birads/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <memory>
#include <string>

namespace birads {
namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw ImageIoError("cannot open '" + path.string() + "'");
  return f;
}

void on_png_error(png_structp png, png_const_charp msg) {
  auto* buffer = static_cast<std::string*>(png_get_error_ptr(png));
  if (buffer) *buffer = msg;
  png_longjmp(png, 1);
}

void on_png_warning(png_structp, png_const_charp) {}

class PngReader {
 public:
  explicit PngReader(const std::filesystem::path& path) : path_(path), file_(open_file(path, "rb")) {
    unsigned char sig[8];
    if (std::fread(sig, 1, 8, file_.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
      throw ImageIoError("'" + path.string() + "' is not a PNG file");
    }
    png_ = png_create_read_struct(PNG_LIBPNG_VER_STRING, &message_, on_png_error, on_png_warning);
    if (!png_) throw ImageIoError("png_create_read_struct failed");
    info_ = png_create_info_struct(png_);
    if (!info_) {
      png_destroy_read_struct(&png_, nullptr, nullptr);
      throw ImageIoError("png_create_info_struct failed");
    }
  }
  ~PngReader() { png_destroy_read_struct(&png_, &info_, nullptr); }
  PngReader(const PngReader&) = delete;
  PngReader& operator=(const PngReader&) = delete;

  PngInfo read_header() {
    if (setjmp(png_jmpbuf(png_))) fail();
    png_init_io(png_, file_.get());
    png_set_sig_bytes(png_, 8);
    png_read_info(png_, info_);
    return {static_cast<int>(png_get_image_width(png_, info_)), static_cast<int>(png_get_image_height(png_, info_)),
            png_get_bit_depth(png_, info_)};
  }

  GrayImage read_gray() {
    const PngInfo header = read_header();
    configure_gray_transforms(header.bit_depth);

    const auto rowbytes = png_get_rowbytes(png_, info_);
    const int depth = png_get_bit_depth(png_, info_);
    std::vector<png_byte> buffer(rowbytes * static_cast<std::size_t>(header.height));
    std::vector<png_bytep> rows(header.height);
    for (int y = 0; y < header.height; ++y) rows[y] = buffer.data() + rowbytes * y;
    read_rows(rows.data());

    GrayImage image(header.height, header.width);
    for (int y = 0; y < header.height; ++y) {
      for (int x = 0; x < header.width; ++x) {
        if (depth == 16) {
          const auto* p = reinterpret_cast<const std::uint16_t*>(rows[y]);
          image(y, x) = static_cast<float>(p[x]) / 65535.0f;
        } else {
          image(y, x) = static_cast<float>(rows[y][x]) / 255.0f;
        }
      }
    }
    return image;
  }

 private:
  // libpng reports errors by longjmp; these helpers keep non-trivial locals out of the jump range.
  void configure_gray_transforms(int bit_depth) {
    if (setjmp(png_jmpbuf(png_))) fail();
    const int color = png_get_color_type(png_, info_);
    const bool has_trns = png_get_valid(png_, info_, PNG_INFO_tRNS) != 0;
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png_);
    if (color == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png_);
    if (has_trns) png_set_tRNS_to_alpha(png_);
    if ((color & PNG_COLOR_MASK_ALPHA) || has_trns) png_set_strip_alpha(png_);
    if ((color & PNG_COLOR_MASK_COLOR) || color == PNG_COLOR_TYPE_PALETTE) png_set_rgb_to_gray_fixed(png_, 1, -1, -1);
    if (bit_depth == 16) png_set_swap(png_);  // host little-endian rows
    png_read_update_info(png_, info_);
  }

  void read_rows(png_bytepp rows) {
    if (setjmp(png_jmpbuf(png_))) fail();
    png_read_image(png_, rows);
    png_read_end(png_, nullptr);
  }

  [[noreturn]] void fail() { throw ImageIoError("cannot decode '" + path_.string() + "': " + message_); }

  std::filesystem::path path_;
  FilePtr file_;
  std::string message_;
  png_structp png_ = nullptr;
  png_infop info_ = nullptr;
};

void write_png(const std::filesystem::path& path, int width, int height, int color_type,
               const std::vector<png_bytep>& rows) {
  FilePtr file = open_file(path, "wb");
  std::string message;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &message, on_png_error, on_png_warning);
  if (!png) throw ImageIoError("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw ImageIoError("cannot write '" + path.string() + "': " + message);
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, width, height, 8, color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, const_cast<png_bytepp>(rows.data()));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

GrayImage read_png_gray(const std::filesystem::path& path) { return PngReader(path).read_gray(); }

PngInfo read_png_info(const std::filesystem::path& path) { return PngReader(path).read_header(); }

void write_png_gray(const std::filesystem::path& path, const GrayImage& image) {
  const int h = static_cast<int>(image.rows());
  const int w = static_cast<int>(image.cols());
  std::vector<png_byte> buffer(static_cast<std::size_t>(h) * w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const float v = std::clamp(image(y, x), 0.0f, 1.0f);
      buffer[static_cast<std::size_t>(y) * w + x] = static_cast<png_byte>(std::lround(v * 255.0f));
    }
  }
  std::vector<png_bytep> rows(h);
  for (int y = 0; y < h; ++y) rows[y] = buffer.data() + static_cast<std::size_t>(y) * w;
  write_png(path, w, h, PNG_COLOR_TYPE_GRAY, rows);
}

void write_png_rgb(const std::filesystem::path& path, int width, int height, const std::vector<std::uint8_t>& rgb) {
  if (rgb.size() != static_cast<std::size_t>(width) * height * 3) {
    throw ImageIoError("RGB buffer size does not match " + std::to_string(width) + "x" + std::to_string(height));
  }
  std::vector<png_bytep> rows(height);
  for (int y = 0; y < height; ++y) rows[y] = const_cast<png_bytep>(rgb.data() + static_cast<std::size_t>(y) * width * 3);
  write_png(path, width, height, PNG_COLOR_TYPE_RGB, rows);
}

}  // namespace birads
