#include "vcae/png_io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>

namespace vcae::img {

namespace {

struct FileCloser {
  void operator()(FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

}  // namespace

Image read_png(const std::string& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw IngestionError("png: cannot open " + path);

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IngestionError("png: init failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IngestionError("png: init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IngestionError("png: corrupt file " + path);
  }
  png_init_io(png, f.get());
  png_read_info(png, info);

  png_uint_32 w = png_get_image_width(png, info);
  png_uint_32 h = png_get_image_height(png, info);
  png_byte color = png_get_color_type(png, info);
  png_byte depth = png_get_bit_depth(png, info);

  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);

  int channels = png_get_channels(png, info);
  Image im = Image::blank(static_cast<int>(w), static_cast<int>(h), channels);
  std::vector<png_bytep> rows(h);
  for (png_uint_32 y = 0; y < h; ++y)
    rows[y] = im.pixels.data() + static_cast<size_t>(y) * w * channels;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return im;
}

void write_png(const std::string& path, const Image& im) {
  require(im.channels == 1 || im.channels == 3, "png: channels must be 1 or 3");
  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) throw IngestionError("png: cannot open for writing " + path);

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IngestionError("png: init failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IngestionError("png: init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IngestionError("png: write failed " + path);
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, im.width, im.height, 8,
               im.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_bytep> rows(im.height);
  for (int y = 0; y < im.height; ++y)
    rows[y] = const_cast<png_bytep>(im.pixels.data() +
                                    static_cast<size_t>(y) * im.width * im.channels);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Image row_to_image(const RowVec& row, const ItemShape& shape) {
  require(row.size() == shape.size(), "row_to_image: size mismatch");
  Image im = Image::blank(shape.width, shape.height, shape.channels);
  for (int c = 0; c < shape.channels; ++c)
    for (int y = 0; y < shape.height; ++y)
      for (int x = 0; x < shape.width; ++x) {
        double v = row((c * shape.height + y) * shape.width + x);
        v = std::min(1.0, std::max(0.0, v));
        im.at(y, x, c) = static_cast<unsigned char>(std::lround(v * 255.0));
      }
  return im;
}

RowVec image_to_row(const Image& im) {
  RowVec row(static_cast<long>(im.channels) * im.height * im.width);
  for (int c = 0; c < im.channels; ++c)
    for (int y = 0; y < im.height; ++y)
      for (int x = 0; x < im.width; ++x)
        row((c * im.height + y) * im.width + x) = im.at(y, x, c) / 255.0;
  return row;
}

Image resize_bilinear(const Image& im, int out_w, int out_h) {
  Image out = Image::blank(out_w, out_h, im.channels);
  const double sx = static_cast<double>(im.width) / out_w;
  const double sy = static_cast<double>(im.height) / out_h;
  for (int y = 0; y < out_h; ++y) {
    double fy = (y + 0.5) * sy - 0.5;
    int y0 = static_cast<int>(std::floor(fy));
    double wy = fy - y0;
    int y1 = std::min(y0 + 1, im.height - 1);
    y0 = std::max(y0, 0);
    for (int x = 0; x < out_w; ++x) {
      double fx = (x + 0.5) * sx - 0.5;
      int x0 = static_cast<int>(std::floor(fx));
      double wx = fx - x0;
      int x1 = std::min(x0 + 1, im.width - 1);
      x0 = std::max(x0, 0);
      for (int c = 0; c < im.channels; ++c) {
        double v = (1 - wy) * ((1 - wx) * im.at(y0, x0, c) + wx * im.at(y0, x1, c)) +
                   wy * ((1 - wx) * im.at(y1, x0, c) + wx * im.at(y1, x1, c));
        out.at(y, x, c) = static_cast<unsigned char>(std::lround(std::min(255.0, std::max(0.0, v))));
      }
    }
  }
  return out;
}

}  // namespace vcae::img
