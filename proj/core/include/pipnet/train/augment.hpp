#pragma once

#include <cstdint>
#include <vector>

#include "pipnet/image.hpp"

namespace pipnet::train {

// Geometric ops (rotation, crop-resize) are drawn once and applied to the
// source image, so both views share the same geometry; photometric jitter is
// drawn per view; a horizontal flip of view_b is drawn per pair. The grid
// correspondence therefore stays integral: identity, or a column reversal.
struct AugmentPolicy {
  double flip_prob = 0.5;
  double max_rotation_deg = 10.0;
  double min_crop = 0.9;  // crop side as a fraction of the image side, in [min_crop, 1]
  double brightness = 0.1;  // additive shift up to this fraction of full scale
  double contrast = 0.2;    // multiplicative factor in [1-contrast, 1+contrast]

  static AugmentPolicy identity();
  static AugmentPolicy flip_only();  // always flips view_b, nothing else
  bool geometric() const { return max_rotation_deg > 0.0 || min_crop < 1.0; }
};

struct AugmentedPair {
  Image view_a;
  Image view_b;
  bool flipped = false;
  // correspondence[l] = cell of view_b's grid matching cell l of view_a's
  // grid (row-major over grid x grid), or -1 when no cell matches.
  std::vector<int> correspondence;
};

AugmentedPair augment_pair(const Image& image, std::uint64_t seed, const AugmentPolicy& policy,
                           std::size_t grid_size);

// Single augmented view, drawn the same way as view_a of augment_pair.
Image augment_single(const Image& image, std::uint64_t seed, const AugmentPolicy& policy);

Image flip_horizontal(const Image& image);

// Bilinear rotation about the center followed by a centered-offset crop of
// relative side `crop`, resampled back to the original size. Border pixels
// are clamped.
Image rotate_crop(const Image& image, double angle_deg, double crop, double offset_row, double offset_col);

}  // namespace pipnet::train
