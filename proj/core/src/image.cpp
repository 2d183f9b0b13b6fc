#include "pipnet/image.hpp"

#include <algorithm>

#include "pipnet/error.hpp"

namespace pipnet {

std::size_t mask_pixels_in(const Mask& mask, const Rect& rect) {
  std::size_t count = 0;
  const std::size_t r1 = std::min(rect.row_end, mask.height), c1 = std::min(rect.col_end, mask.width);
  for (std::size_t r = rect.row_begin; r < r1; ++r)
    for (std::size_t c = rect.col_begin; c < c1; ++c)
      if (mask.at(r, c, 0) != 0) ++count;
  return count;
}

Image crop(const Image& image, const Rect& rect) {
  if (rect.row_end > image.height || rect.col_end > image.width || rect.row_begin > rect.row_end ||
      rect.col_begin > rect.col_end) {
    throw InvalidArgument("crop rectangle outside image");
  }
  Image out(rect.row_end - rect.row_begin, rect.col_end - rect.col_begin, image.channels);
  for (std::size_t r = 0; r < out.height; ++r)
    for (std::size_t c = 0; c < out.width; ++c)
      for (std::size_t ch = 0; ch < image.channels; ++ch)
        out.at(r, c, ch) = image.at(rect.row_begin + r, rect.col_begin + c, ch);
  return out;
}

}  // namespace pipnet
