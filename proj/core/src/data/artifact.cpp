#include "pipnet/data/artifact.hpp"

#include <cmath>

#include "pipnet/error.hpp"

namespace pipnet::data {

std::string to_string(Corner corner) {
  switch (corner) {
    case Corner::TopLeft: return "top_left";
    case Corner::TopRight: return "top_right";
    case Corner::BottomLeft: return "bottom_left";
    case Corner::BottomRight: return "bottom_right";
    case Corner::Random: return "random";
  }
  return "random";
}

Corner corner_from_string(const std::string& name) {
  for (Corner c : {Corner::TopLeft, Corner::TopRight, Corner::BottomLeft, Corner::BottomRight, Corner::Random})
    if (to_string(c) == name) return c;
  throw InvalidArgument("unknown artifact corner '" + name + "'");
}

ArtifactPlacement place_artifact(const ArtifactDescriptor& descriptor, std::size_t image_size, std::uint64_t draw) {
  if (!(descriptor.size_fraction >= 0.0) || descriptor.size_fraction > 1.0) {
    throw InvalidArgument("artifact size_fraction must be in [0,1]");
  }
  const auto size = static_cast<std::size_t>(std::lround(descriptor.size_fraction * double(image_size)));
  if (size > 0 && size + descriptor.margin > image_size) {
    throw InvalidArgument("artifact of side " + std::to_string(size) + " with margin " +
                          std::to_string(descriptor.margin) + " does not fit a " + std::to_string(image_size) +
                          " px image");
  }
  Corner corner = descriptor.corner;
  if (corner == Corner::Random) corner = static_cast<Corner>(draw % 4);
  const std::size_t near = descriptor.margin;
  const std::size_t far = size > 0 ? image_size - descriptor.margin - size : 0;
  ArtifactPlacement p;
  p.size = size;
  p.color = descriptor.color;
  p.row = (corner == Corner::TopLeft || corner == Corner::TopRight) ? near : far;
  p.col = (corner == Corner::TopLeft || corner == Corner::BottomLeft) ? near : far;
  return p;
}

ArtifactResult insert_artifact(const Image& image, const ArtifactPlacement& placement) {
  if (placement.size > 0 &&
      (placement.row + placement.size > image.height || placement.col + placement.size > image.width)) {
    throw InvalidArgument("artifact at (" + std::to_string(placement.row) + "," + std::to_string(placement.col) +
                          ") of side " + std::to_string(placement.size) + " is outside the image");
  }
  ArtifactResult out{image, Mask(image.height, image.width, 1, 0)};
  for (std::size_t r = placement.row; r < placement.row + placement.size; ++r)
    for (std::size_t c = placement.col; c < placement.col + placement.size; ++c) {
      for (std::size_t ch = 0; ch < image.channels; ++ch) out.image.at(r, c, ch) = placement.color[std::min<std::size_t>(ch, 2)];
      out.mask.at(r, c, 0) = 255;
    }
  return out;
}

std::size_t mask_area(const Mask& mask) {
  std::size_t n = 0;
  for (auto v : mask.pixels) n += v != 0;
  return n;
}

}  // namespace pipnet::data
