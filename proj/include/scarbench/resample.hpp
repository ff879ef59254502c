#pragma once

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include "scarbench/error.hpp"
#include "scarbench/types.hpp"

namespace scarbench {

namespace detail {

// Pixel-center alignment: output sample k sits at (k + 0.5) * scale - 0.5 in
// source coordinates.
inline double source_coord(int k, double scale) noexcept { return (k + 0.5) * scale - 0.5; }

inline int nearest_source_index(int k, double scale, int extent) noexcept {
  const int idx = static_cast<int>(std::floor((k + 0.5) * scale));
  return std::clamp(idx, 0, extent - 1);
}

inline void check_target(int target_w, int target_h) {
  if (target_w <= 0 || target_h <= 0) {
    throw Error(Errc::InvalidTarget, "target dimensions must be positive");
  }
}

inline PixelGeometry rescaled_geometry(const PixelGeometry& g, int old_w, int old_h, int new_w,
                                       int new_h) {
  PixelGeometry out = g;
  out.spacing_x = g.spacing_x * (static_cast<double>(old_w) / new_w);
  out.spacing_y = g.spacing_y * (static_cast<double>(old_h) / new_h);
  return out;
}

}  // namespace detail

/// Bilinear resampling with border clamping.
inline std::pair<Image, PixelGeometry> resample(const Image& img, const PixelGeometry& geometry,
                                                int target_w, int target_h) {
  geometry.validate();
  detail::check_target(target_w, target_h);
  if (target_w == img.width() && target_h == img.height()) return {img, geometry};

  const double sx = static_cast<double>(img.width()) / target_w;
  const double sy = static_cast<double>(img.height()) / target_h;
  std::vector<double> out(static_cast<std::size_t>(target_w) * target_h);
  for (int r = 0; r < target_h; ++r) {
    const double y = std::clamp(detail::source_coord(r, sy), 0.0, img.height() - 1.0);
    const int y0 = static_cast<int>(std::floor(y));
    const int y1 = std::min(y0 + 1, img.height() - 1);
    const double fy = y - y0;
    for (int c = 0; c < target_w; ++c) {
      const double x = std::clamp(detail::source_coord(c, sx), 0.0, img.width() - 1.0);
      const int x0 = static_cast<int>(std::floor(x));
      const int x1 = std::min(x0 + 1, img.width() - 1);
      const double fx = x - x0;
      const double top = img(y0, x0) * (1.0 - fx) + img(y0, x1) * fx;
      const double bottom = img(y1, x0) * (1.0 - fx) + img(y1, x1) * fx;
      out[static_cast<std::size_t>(r) * target_w + c] =
          std::clamp(top * (1.0 - fy) + bottom * fy, 0.0, 1.0);
    }
  }
  return {Image(target_w, target_h, std::move(out)),
          detail::rescaled_geometry(geometry, img.width(), img.height(), target_w, target_h)};
}

/// Nearest-neighbour resampling; the result stays binary.
inline std::pair<Mask, PixelGeometry> resample(const Mask& m, const PixelGeometry& geometry,
                                               int target_w, int target_h) {
  geometry.validate();
  detail::check_target(target_w, target_h);
  if (target_w == m.width() && target_h == m.height()) return {m, geometry};

  const double sx = static_cast<double>(m.width()) / target_w;
  const double sy = static_cast<double>(m.height()) / target_h;
  Mask out(target_w, target_h);
  for (int r = 0; r < target_h; ++r) {
    const int sr = detail::nearest_source_index(r, sy, m.height());
    for (int c = 0; c < target_w; ++c) {
      out.set(r, c, m(sr, detail::nearest_source_index(c, sx, m.width())) != 0);
    }
  }
  return {std::move(out),
          detail::rescaled_geometry(geometry, m.width(), m.height(), target_w, target_h)};
}

}  // namespace scarbench
