#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <utility>
#include <variant>
#include <vector>

#include "scarbench/error.hpp"
#include "scarbench/rng.hpp"
#include "scarbench/soft_loss.hpp"
#include "scarbench/types.hpp"

namespace scarbench::augment {

inline Image gamma_correct(const Image& img, double gamma) {
  if (!(gamma > 0.0) || !std::isfinite(gamma)) {
    throw Error(Errc::InvalidParameter, "gamma must be positive and finite");
  }
  std::vector<double> out(img.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::pow(img[i], gamma);
  return Image(img.width(), img.height(), std::move(out));
}

inline Image adjust_brightness(const Image& img, double factor) {
  if (!(factor >= 0.0) || !std::isfinite(factor)) {
    throw Error(Errc::InvalidParameter, "brightness factor must be non-negative and finite");
  }
  std::vector<double> out(img.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(img[i] * factor, 0.0, 1.0);
  return Image(img.width(), img.height(), std::move(out));
}

// ---------------------------------------------------------------------------
// Contrast-limited adaptive histogram equalization
// ---------------------------------------------------------------------------

inline constexpr int kClaheBins = 256;

inline int intensity_bin(double v) noexcept {
  return std::clamp(static_cast<int>(std::lround(v * 255.0)), 0, kClaheBins - 1);
}

/// Tile t of n along an extent covers [t*extent/n, (t+1)*extent/n).
inline int tile_start(int t, int tiles, int extent) noexcept {
  return static_cast<int>(static_cast<long long>(t) * extent / tiles);
}

/// Intensity mapping of one tile: histogram clipped at clip_limit times the
/// mean bin count, excess spread evenly over all bins, then the normalized
/// cumulative histogram.
inline std::array<double, kClaheBins> clahe_tile_mapping(const Image& img, int x0, int x1, int y0,
                                                         int y1, double clip_limit) {
  std::array<double, kClaheBins> hist{};
  for (int r = y0; r < y1; ++r) {
    for (int c = x0; c < x1; ++c) hist[intensity_bin(img(r, c))] += 1.0;
  }
  const double n = static_cast<double>(x1 - x0) * (y1 - y0);
  const double limit = clip_limit * n / kClaheBins;
  double excess = 0.0;
  for (double& h : hist) {
    if (h > limit) {
      excess += h - limit;
      h = limit;
    }
  }
  const double share = excess / kClaheBins;
  std::array<double, kClaheBins> map{};
  double cdf = 0.0;
  for (int b = 0; b < kClaheBins; ++b) {
    cdf += hist[b] + share;
    map[b] = std::min(cdf / n, 1.0);
  }
  return map;
}

namespace detail {

// Neighbouring tile indices and interpolation weight for a pixel coordinate,
// relative to tile centres. Outside the outermost centres the nearest tile
// is used alone.
struct TileBlend {
  int lo;
  int hi;
  double w_hi;
};

inline TileBlend tile_blend(int p, const std::vector<double>& centers) {
  const int n = static_cast<int>(centers.size());
  if (p <= centers.front()) return {0, 0, 0.0};
  if (p >= centers.back()) return {n - 1, n - 1, 0.0};
  int t = 0;
  while (t + 1 < n && centers[t + 1] <= p) ++t;
  const double w = (p - centers[t]) / (centers[t + 1] - centers[t]);
  return {t, t + 1, w};
}

inline std::vector<double> tile_centers(int tiles, int extent) {
  std::vector<double> c(tiles);
  for (int t = 0; t < tiles; ++t) {
    c[t] = (tile_start(t, tiles, extent) + tile_start(t + 1, tiles, extent) - 1) / 2.0;
  }
  return c;
}

}  // namespace detail

inline Image clahe(const Image& img, int tiles_x, int tiles_y, double clip_limit) {
  if (tiles_x < 1 || tiles_y < 1 || tiles_x > img.width() || tiles_y > img.height()) {
    throw Error(Errc::InvalidParameter, "tile grid must be at least 1x1 and fit in the image");
  }
  if (!(clip_limit > 0.0) || !std::isfinite(clip_limit)) {
    throw Error(Errc::InvalidParameter, "clip limit must be positive");
  }
  std::vector<std::array<double, kClaheBins>> maps;
  maps.reserve(static_cast<std::size_t>(tiles_x) * tiles_y);
  for (int ty = 0; ty < tiles_y; ++ty) {
    for (int tx = 0; tx < tiles_x; ++tx) {
      maps.push_back(clahe_tile_mapping(
          img, tile_start(tx, tiles_x, img.width()), tile_start(tx + 1, tiles_x, img.width()),
          tile_start(ty, tiles_y, img.height()), tile_start(ty + 1, tiles_y, img.height()),
          clip_limit));
    }
  }
  const auto cx = detail::tile_centers(tiles_x, img.width());
  const auto cy = detail::tile_centers(tiles_y, img.height());
  auto map_at = [&](int ty, int tx, int bin) { return maps[ty * tiles_x + tx][bin]; };

  std::vector<double> out(img.size());
  for (int r = 0; r < img.height(); ++r) {
    const auto by = detail::tile_blend(r, cy);
    for (int c = 0; c < img.width(); ++c) {
      const auto bx = detail::tile_blend(c, cx);
      const int bin = intensity_bin(img(r, c));
      const double top =
          map_at(by.lo, bx.lo, bin) * (1.0 - bx.w_hi) + map_at(by.lo, bx.hi, bin) * bx.w_hi;
      const double bottom =
          map_at(by.hi, bx.lo, bin) * (1.0 - bx.w_hi) + map_at(by.hi, bx.hi, bin) * bx.w_hi;
      out[img.index(r, c)] = std::clamp(top * (1.0 - by.w_hi) + bottom * by.w_hi, 0.0, 1.0);
    }
  }
  return Image(img.width(), img.height(), std::move(out));
}

// ---------------------------------------------------------------------------
// Noise
// ---------------------------------------------------------------------------

/// Magnitude of the pixel plus complex Gaussian noise: sqrt((x+n1)^2 + n2^2).
inline Image add_rician_noise(const Image& img, double sigma_n, CounterRng& rng) {
  if (!(sigma_n >= 0.0) || !std::isfinite(sigma_n)) {
    throw Error(Errc::InvalidParameter, "noise sigma must be non-negative and finite");
  }
  if (sigma_n == 0.0) return img;
  std::vector<double> out(img.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double re = img[i] + sigma_n * rng.normal();
    const double im = sigma_n * rng.normal();
    out[i] = std::clamp(std::hypot(re, im), 0.0, 1.0);
  }
  return Image(img.width(), img.height(), std::move(out));
}

inline Image add_rician_noise(const Image& img, double sigma_n, std::uint64_t seed) {
  CounterRng rng(seed, 0);
  return add_rician_noise(img, sigma_n, rng);
}

// ---------------------------------------------------------------------------
// Spatial transforms
// ---------------------------------------------------------------------------

struct FlipH {};
struct FlipV {};
/// Rotation about the image centre. Positive angles turn clockwise as
/// displayed (rows increase downwards); 90 degrees sends (r, c) to
/// (c, H-1-r) on a square grid.
struct Rotate {
  double degrees = 0.0;
};
/// Zoom about the image centre; factor > 1 enlarges.
struct Scale {
  double factor = 1.0;
};
/// Random smooth displacement field with peak magnitude alpha pixels and
/// Gaussian smoothness sigma pixels.
struct Elastic {
  double alpha = 8.0;
  double sigma = 6.0;
};

using SpatialStep = std::variant<FlipH, FlipV, Rotate, Scale, Elastic>;

namespace detail {

inline double sample_bilinear_zero(const Image& img, double y, double x) noexcept {
  const int y0 = static_cast<int>(std::floor(y));
  const int x0 = static_cast<int>(std::floor(x));
  const double fy = y - y0;
  const double fx = x - x0;
  auto px = [&](int r, int c) { return img.contains(r, c) ? img(r, c) : 0.0; };
  double v = (1.0 - fy) * (1.0 - fx) * px(y0, x0);
  v += (1.0 - fy) * fx * px(y0, x0 + 1);
  v += fy * (1.0 - fx) * px(y0 + 1, x0);
  v += fy * fx * px(y0 + 1, x0 + 1);
  return std::clamp(v, 0.0, 1.0);
}

inline bool sample_nearest_zero(const Mask& m, double y, double x) noexcept {
  const int r = static_cast<int>(std::floor(y + 0.5));
  const int c = static_cast<int>(std::floor(x + 0.5));
  return m.contains(r, c) && m(r, c) != 0;
}

// Inverse warp: source_of(r, c) gives the source (y, x) for output pixel
// (r, c).
template <typename SourceFn>
std::pair<Image, Mask> warp(const Image& img, const Mask& m, SourceFn source_of) {
  std::vector<double> out_img(img.size());
  Mask out_mask(m.width(), m.height());
  for (int r = 0; r < img.height(); ++r) {
    for (int c = 0; c < img.width(); ++c) {
      const auto [y, x] = source_of(r, c);
      out_img[img.index(r, c)] = sample_bilinear_zero(img, y, x);
      out_mask.set(r, c, sample_nearest_zero(m, y, x));
    }
  }
  return {Image(img.width(), img.height(), std::move(out_img)), std::move(out_mask)};
}

inline std::pair<double, double> exact_sin_cos(double degrees) {
  const double quarter = degrees / 90.0;
  if (quarter == std::floor(quarter) && std::abs(quarter) < 1e9) {
    const long long q = ((static_cast<long long>(quarter) % 4) + 4) % 4;
    static constexpr double s[4] = {0.0, 1.0, 0.0, -1.0};
    static constexpr double c[4] = {1.0, 0.0, -1.0, 0.0};
    return {s[q], c[q]};
  }
  const double rad = degrees * std::numbers::pi / 180.0;
  return {std::sin(rad), std::cos(rad)};
}

template <typename Raster, typename Fn>
Raster permute(const Raster& in, Fn source_index) {
  Raster out = in;
  for (int r = 0; r < in.height(); ++r) {
    for (int c = 0; c < in.width(); ++c) {
      const auto [sr, sc] = source_index(r, c);
      out.set(r, c, in(sr, sc));
    }
  }
  return out;
}

}  // namespace detail

inline std::pair<Image, Mask> spatial_transform(const Image& img, const Mask& m,
                                                const SpatialStep& step, std::uint64_t seed) {
  require_same_shape(img, m);
  const int w = img.width();
  const int h = img.height();
  const double cy = (h - 1) / 2.0;
  const double cx = (w - 1) / 2.0;

  if (std::holds_alternative<FlipH>(step)) {
    auto src = [w](int r, int c) { return std::pair{r, w - 1 - c}; };
    return {detail::permute(img, src), detail::permute(m, src)};
  }
  if (std::holds_alternative<FlipV>(step)) {
    auto src = [h](int r, int c) { return std::pair{h - 1 - r, c}; };
    return {detail::permute(img, src), detail::permute(m, src)};
  }
  if (const auto* rot = std::get_if<Rotate>(&step)) {
    if (!std::isfinite(rot->degrees)) throw Error(Errc::InvalidParameter, "rotation angle");
    const auto [s, co] = detail::exact_sin_cos(rot->degrees);
    return detail::warp(img, m, [=](int r, int c) {
      const double dy = r - cy;
      const double dx = c - cx;
      return std::pair{cy + co * dy - s * dx, cx + s * dy + co * dx};
    });
  }
  if (const auto* sc = std::get_if<Scale>(&step)) {
    if (!(sc->factor > 0.0) || !std::isfinite(sc->factor)) {
      throw Error(Errc::InvalidParameter, "scale factor must be positive");
    }
    const double inv = 1.0 / sc->factor;
    return detail::warp(img, m, [=](int r, int c) {
      return std::pair{cy + (r - cy) * inv, cx + (c - cx) * inv};
    });
  }
  const auto& el = std::get<Elastic>(step);
  if (!(el.alpha >= 0.0) || !(el.sigma > 0.0)) {
    throw Error(Errc::InvalidParameter, "elastic alpha must be >= 0 and sigma > 0");
  }
  CounterRng rng(seed, 0);
  RealMap fy(w, h), fx(w, h);
  for (std::size_t i = 0; i < fy.size(); ++i) fy.at(i) = rng.uniform(-1.0, 1.0);
  for (std::size_t i = 0; i < fx.size(); ++i) fx.at(i) = rng.uniform(-1.0, 1.0);
  fy = loss::gaussian_smooth(fy, el.sigma);
  fx = loss::gaussian_smooth(fx, el.sigma);
  double peak = 0.0;
  for (std::size_t i = 0; i < fy.size(); ++i) {
    peak = std::max(peak, std::hypot(fy[i], fx[i]));
  }
  const double gain = peak > 0.0 ? el.alpha / peak : 0.0;
  return detail::warp(img, m, [&](int r, int c) {
    const std::size_t i = img.index(r, c);
    return std::pair{r + gain * fy[i], c + gain * fx[i]};
  });
}

// ---------------------------------------------------------------------------
// Bounding boxes
// ---------------------------------------------------------------------------

/// Shifts the box centre by up to max_shift_frac of its size and rescales
/// each side by a factor in [1 - max_scale_frac, 1 + max_scale_frac]; the
/// result is rounded and clamped to the image.
inline BoundingBox jitter_bbox(const BoundingBox& b, double max_shift_frac, double max_scale_frac,
                               CounterRng& rng, int img_w, int img_h) {
  if (!(max_shift_frac >= 0.0) || !(max_scale_frac >= 0.0) || !std::isfinite(max_shift_frac) ||
      !std::isfinite(max_scale_frac)) {
    throw Error(Errc::InvalidParameter, "jitter fractions must be finite and non-negative");
  }
  if (!b.valid_in(img_w, img_h)) throw Error(Errc::InvalidParameter, "box outside image");

  const double bw = b.width();
  const double bh = b.height();
  const double ccx = (b.x_min + b.x_max) / 2.0 + rng.uniform(-1.0, 1.0) * max_shift_frac * bw;
  const double ccy = (b.y_min + b.y_max) / 2.0 + rng.uniform(-1.0, 1.0) * max_shift_frac * bh;
  const double nw = std::max(1.0, bw * (1.0 + rng.uniform(-1.0, 1.0) * max_scale_frac));
  const double nh = std::max(1.0, bh * (1.0 + rng.uniform(-1.0, 1.0) * max_scale_frac));

  auto span = [](double centre, double size, int extent) {
    int lo = static_cast<int>(std::lround(centre - (size - 1.0) / 2.0));
    int hi = static_cast<int>(std::lround(centre + (size - 1.0) / 2.0));
    lo = std::clamp(lo, 0, extent - 1);
    hi = std::clamp(hi, 0, extent - 1);
    if (hi < lo) std::swap(lo, hi);
    return std::pair{lo, hi};
  };
  const auto [x0, x1] = span(ccx, nw, img_w);
  const auto [y0, y1] = span(ccy, nh, img_h);
  return BoundingBox{x0, y0, x1, y1};
}

inline BoundingBox jitter_bbox(const BoundingBox& b, double max_shift_frac, double max_scale_frac,
                               std::uint64_t seed, int img_w, int img_h) {
  CounterRng rng(seed, 0);
  return jitter_bbox(b, max_shift_frac, max_scale_frac, rng, img_w, img_h);
}

}  // namespace scarbench::augment
