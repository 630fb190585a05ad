// Copyright 2026 The MicroLab Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <numbers>

#include "microlab/error.hpp"
#include "microlab/tasks.hpp"

namespace microlab {

namespace {

// Mirror an integer index into [0, n) without repeating the edge sample.
std::ptrdiff_t reflect(std::ptrdiff_t i, std::ptrdiff_t n) {
  if (n == 1) return 0;
  const std::ptrdiff_t period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

// Rotate about the image centre then translate. Output pixel p samples the
// source at R^-1 (p - c - t) + c; images use bilinear taps with reflection at
// the border, masks use nearest neighbour with zero fill.
void affine_warp(Example& ex, double angle, double tx, double ty) {
  const std::size_t h = ex.image.dim(1), w = ex.image.dim(2);
  const Tensor src_img = ex.image, src_mask = ex.mask;
  const double cx = static_cast<double>(w) / 2.0, cy = static_cast<double>(h) / 2.0;
  const double c = std::cos(angle), s = std::sin(angle);
  const auto ih = static_cast<std::ptrdiff_t>(h), iw = static_cast<std::ptrdiff_t>(w);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double px = static_cast<double>(x) + 0.5 - cx - tx;
      const double py = static_cast<double>(y) + 0.5 - cy - ty;
      const double sx = c * px + s * py + cx - 0.5;
      const double sy = -s * px + c * py + cy - 0.5;

      const double fx = std::floor(sx), fy = std::floor(sy);
      const double ax = sx - fx, ay = sy - fy;
      const auto x0 = static_cast<std::ptrdiff_t>(fx), y0 = static_cast<std::ptrdiff_t>(fy);
      auto pix = [&](std::ptrdiff_t yy, std::ptrdiff_t xx) {
        return src_img[static_cast<std::size_t>(reflect(yy, ih) * iw + reflect(xx, iw))];
      };
      ex.image[y * w + x] = (1 - ay) * ((1 - ax) * pix(y0, x0) + ax * pix(y0, x0 + 1)) +
                            ay * ((1 - ax) * pix(y0 + 1, x0) + ax * pix(y0 + 1, x0 + 1));

      const auto nx = static_cast<std::ptrdiff_t>(std::lround(sx));
      const auto ny = static_cast<std::ptrdiff_t>(std::lround(sy));
      ex.mask[y * w + x] = (nx < 0 || ny < 0 || nx >= iw || ny >= ih)
                               ? 0.0
                               : src_mask[static_cast<std::size_t>(ny * iw + nx)];
    }
  }
}

}  // namespace

Example hflip(const Example& ex) {
  Example out = ex;
  const std::size_t h = ex.image.dim(1), w = ex.image.dim(2);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      out.image[y * w + x] = ex.image[y * w + (w - 1 - x)];
      out.mask[y * w + x] = ex.mask[y * w + (w - 1 - x)];
    }
  return out;
}

Example augment(const Example& ex, double aug_rate, Rng& rng, const AugmentLimits& limits) {
  require(aug_rate >= 0.0 && aug_rate <= 1.0, "augment: aug_rate must lie in [0, 1]");
  require(ex.image.rank() == 3 && ex.image.shape() == ex.mask.shape(),
          "augment: image and mask must both be (1, H, W)");
  Example out = ex;
  if (aug_rate == 0.0) return out;
  auto fires = [&] { return uniform01(rng) < aug_rate; };
  const auto h = static_cast<double>(ex.image.dim(1)), w = static_cast<double>(ex.image.dim(2));

  if (fires()) out = hflip(out);

  double angle = 0.0, tx = 0.0, ty = 0.0;
  if (fires()) angle = uniform(rng, -1.0, 1.0) * limits.max_rotate_deg * std::numbers::pi / 180.0;
  if (fires()) {
    tx = uniform(rng, -1.0, 1.0) * limits.max_translate * w;
    ty = uniform(rng, -1.0, 1.0) * limits.max_translate * h;
  }
  if (angle != 0.0 || tx != 0.0 || ty != 0.0) affine_warp(out, angle, tx, ty);

  if (fires()) {
    const double sigma = uniform(rng, 0.0, limits.max_noise_sigma);
    for (auto& v : out.image.data()) v += sigma * normal01(rng);
  }
  if (fires()) {
    const double shift = uniform(rng, -limits.max_brightness, limits.max_brightness);
    for (auto& v : out.image.data()) v += shift;
  }
  if (fires()) {
    const double area = uniform(rng, 0.02, limits.max_erase_area) * h * w;
    const double aspect = std::exp(uniform(rng, std::log(0.5), std::log(2.0)));
    const auto eh = static_cast<std::size_t>(std::clamp(std::round(std::sqrt(area * aspect)), 1.0, h));
    const auto ew = static_cast<std::size_t>(std::clamp(std::round(std::sqrt(area / aspect)), 1.0, w));
    const std::size_t y0 = uniform_index(rng, static_cast<std::size_t>(h) - eh + 1);
    const std::size_t x0 = uniform_index(rng, static_cast<std::size_t>(w) - ew + 1);
    const auto iw = static_cast<std::size_t>(w);
    for (std::size_t y = y0; y < y0 + eh; ++y)
      for (std::size_t x = x0; x < x0 + ew; ++x) out.image[y * iw + x] = uniform01(rng);
  }
  for (auto& v : out.image.data()) v = std::clamp(v, 0.0, 1.0);
  return out;
}

}  // namespace microlab
