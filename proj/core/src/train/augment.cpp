#include "pipnet/train/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "pipnet/error.hpp"

namespace pipnet::train {

namespace {

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

Image jitter(const Image& image, std::mt19937_64& rng, const AugmentPolicy& policy) {
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  const double shift = unit(rng) * policy.brightness * 255.0;
  const double factor = 1.0 + unit(rng) * policy.contrast;
  if (shift == 0.0 && factor == 1.0) return image;
  double mean = 0.0;
  for (auto v : image.pixels) mean += v;
  mean /= double(std::max<std::size_t>(image.pixels.size(), 1));
  Image out = image;
  for (auto& v : out.pixels) v = to_byte((double(v) - mean) * factor + mean + shift);
  return out;
}

struct Draw {
  bool flip = false;
  double angle = 0.0;
  double crop = 1.0;
  double offset_row = 0.0;
  double offset_col = 0.0;
};

Draw draw_geometry(std::mt19937_64& rng, const AugmentPolicy& policy) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Draw d;
  d.flip = unit(rng) < policy.flip_prob;
  d.angle = (2.0 * unit(rng) - 1.0) * policy.max_rotation_deg;
  d.crop = policy.min_crop + (1.0 - policy.min_crop) * unit(rng);
  d.offset_row = 2.0 * unit(rng) - 1.0;
  d.offset_col = 2.0 * unit(rng) - 1.0;
  return d;
}

}  // namespace

AugmentPolicy AugmentPolicy::identity() { return {0.0, 0.0, 1.0, 0.0, 0.0}; }
AugmentPolicy AugmentPolicy::flip_only() { return {1.0, 0.0, 1.0, 0.0, 0.0}; }

Image flip_horizontal(const Image& image) {
  Image out = image;
  for (std::size_t r = 0; r < image.height; ++r)
    for (std::size_t c = 0; c < image.width; ++c)
      for (std::size_t ch = 0; ch < image.channels; ++ch) out.at(r, image.width - 1 - c, ch) = image.at(r, c, ch);
  return out;
}

Image rotate_crop(const Image& image, double angle_deg, double crop, double offset_row, double offset_col) {
  if (angle_deg == 0.0 && crop == 1.0) return image;
  if (!(crop > 0.0 && crop <= 1.0)) throw InvalidArgument("crop fraction must be in (0,1]");
  const double h = double(image.height), w = double(image.width);
  const double theta = angle_deg * std::numbers::pi / 180.0, cs = std::cos(theta), sn = std::sin(theta);
  // Crop center may move by up to the slack the crop leaves on each side.
  const double cy = h / 2.0 + offset_row * (1.0 - crop) * h / 2.0;
  const double cx = w / 2.0 + offset_col * (1.0 - crop) * w / 2.0;
  Image out(image.height, image.width, image.channels);
  for (std::size_t r = 0; r < image.height; ++r)
    for (std::size_t c = 0; c < image.width; ++c) {
      const double y = (double(r) + 0.5 - h / 2.0) * crop, x = (double(c) + 0.5 - w / 2.0) * crop;
      const double sy = cy + cs * y - sn * x - 0.5, sx = cx + sn * y + cs * x - 0.5;
      const double fy = std::clamp(sy, 0.0, h - 1.0), fx = std::clamp(sx, 0.0, w - 1.0);
      const auto y0 = static_cast<std::size_t>(fy), x0 = static_cast<std::size_t>(fx);
      const std::size_t y1 = std::min(y0 + 1, image.height - 1), x1 = std::min(x0 + 1, image.width - 1);
      const double ay = fy - double(y0), ax = fx - double(x0);
      for (std::size_t ch = 0; ch < image.channels; ++ch) {
        const double top = (1 - ax) * image.at(y0, x0, ch) + ax * image.at(y0, x1, ch);
        const double bottom = (1 - ax) * image.at(y1, x0, ch) + ax * image.at(y1, x1, ch);
        out.at(r, c, ch) = to_byte((1 - ay) * top + ay * bottom);
      }
    }
  return out;
}

AugmentedPair augment_pair(const Image& image, std::uint64_t seed, const AugmentPolicy& policy,
                           std::size_t grid_size) {
  std::mt19937_64 rng(seed);
  const Draw d = draw_geometry(rng, policy);
  const Image base = rotate_crop(image, d.angle, d.crop, d.offset_row, d.offset_col);
  AugmentedPair out;
  out.view_a = jitter(base, rng, policy);
  out.view_b = jitter(base, rng, policy);
  out.flipped = d.flip;
  if (d.flip) out.view_b = flip_horizontal(out.view_b);
  out.correspondence.resize(grid_size * grid_size);
  for (std::size_t r = 0; r < grid_size; ++r)
    for (std::size_t c = 0; c < grid_size; ++c)
      out.correspondence[r * grid_size + c] = int(r * grid_size + (d.flip ? grid_size - 1 - c : c));
  return out;
}

Image augment_single(const Image& image, std::uint64_t seed, const AugmentPolicy& policy) {
  std::mt19937_64 rng(seed);
  const Draw d = draw_geometry(rng, policy);
  Image view = jitter(rotate_crop(image, d.angle, d.crop, d.offset_row, d.offset_col), rng, policy);
  return d.flip ? flip_horizontal(view) : view;
}

}  // namespace pipnet::train
