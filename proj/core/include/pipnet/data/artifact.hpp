#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "pipnet/image.hpp"

namespace pipnet::data {

enum class Corner { TopLeft, TopRight, BottomLeft, BottomRight, Random };

std::string to_string(Corner corner);
Corner corner_from_string(const std::string& name);

// A hard-edged colored square placed near an image corner.
struct ArtifactDescriptor {
  double size_fraction = 0.25;  // side length relative to the image side
  std::array<std::uint8_t, 3> color{30, 144, 255};
  Corner corner = Corner::Random;
  std::size_t margin = 2;  // pixels between the square and the image border
};

struct ArtifactPlacement {
  std::size_t row = 0;
  std::size_t col = 0;
  std::size_t size = 0;
  std::array<std::uint8_t, 3> color{};
};

// Resolves the descriptor for an image of the given side; `draw` picks the
// corner when the descriptor says Random. Throws if the square cannot fit.
ArtifactPlacement place_artifact(const ArtifactDescriptor& descriptor, std::size_t image_size, std::uint64_t draw);

struct ArtifactResult {
  Image image;
  Mask mask;  // same height/width, 255 on artifact pixels
};

// Pixels under the square take the artifact color; every other pixel is
// left untouched. A zero-size placement returns the image unchanged and an
// all-zero mask.
ArtifactResult insert_artifact(const Image& image, const ArtifactPlacement& placement);

std::size_t mask_area(const Mask& mask);

}  // namespace pipnet::data
