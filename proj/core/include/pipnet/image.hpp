#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace pipnet {

// 8-bit image, interleaved channels, row-major (height x width x channels).
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(std::size_t h, std::size_t w, std::size_t c, std::uint8_t fill = 0)
      : height(h), width(w), channels(c), pixels(h * w * c, fill) {}

  std::uint8_t& at(std::size_t row, std::size_t col, std::size_t ch) {
    return pixels[(row * width + col) * channels + ch];
  }
  std::uint8_t at(std::size_t row, std::size_t col, std::size_t ch) const {
    return pixels[(row * width + col) * channels + ch];
  }
  bool empty() const { return pixels.empty(); }

  friend bool operator==(const Image&, const Image&) = default;
};

// Single-channel 0/255 mask with the same height/width as its image.
using Mask = Image;

// Pixel rectangle [row_begin,row_end) x [col_begin,col_end).
struct Rect {
  std::size_t row_begin = 0;
  std::size_t col_begin = 0;
  std::size_t row_end = 0;
  std::size_t col_end = 0;

  std::size_t area() const { return (row_end - row_begin) * (col_end - col_begin); }
  friend bool operator==(const Rect&, const Rect&) = default;
};

// Number of nonzero mask pixels inside `rect`.
std::size_t mask_pixels_in(const Mask& mask, const Rect& rect);

Image crop(const Image& image, const Rect& rect);

}  // namespace pipnet
