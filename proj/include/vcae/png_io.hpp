#pragma once

#include <string>
#include <vector>

#include "vcae/common.hpp"

namespace vcae::img {

// Interleaved 8-bit image, row-major; channels is 1 (gray) or 3 (RGB).
struct Image {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<unsigned char> pixels;

  unsigned char& at(int y, int x, int c) {
    return pixels[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  unsigned char at(int y, int x, int c) const {
    return pixels[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  static Image blank(int w, int h, int ch, unsigned char fill = 0) {
    Image im;
    im.width = w;
    im.height = h;
    im.channels = ch;
    im.pixels.assign(static_cast<size_t>(w) * h * ch, fill);
    return im;
  }
};

Image read_png(const std::string& path);
void write_png(const std::string& path, const Image& im);

// Row of a dataset matrix ([c][h][w] in [0,1]) to an 8-bit image and back.
Image row_to_image(const RowVec& row, const ItemShape& shape);
RowVec image_to_row(const Image& im);

// Bilinear resampling (separately per channel).
Image resize_bilinear(const Image& im, int out_w, int out_h);

}  // namespace vcae::img
