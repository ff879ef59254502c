#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "scarbench/error.hpp"
#include "scarbench/types.hpp"

namespace scarbench::morphology {

enum class Connectivity { Four = 4, Eight = 8 };

inline Connectivity connectivity_from_int(int c) {
  if (c == 4) return Connectivity::Four;
  if (c == 8) return Connectivity::Eight;
  throw Error(Errc::InvalidParameter, "connectivity must be 4 or 8");
}

/// Component labels, 0 for background and 1..count otherwise. Labels are
/// assigned in raster order of each component's first pixel.
struct Labeling {
  int count = 0;
  std::vector<int> labels;
};

inline Labeling connected_components(const Mask& m, Connectivity conn = Connectivity::Eight) {
  Labeling out;
  out.labels.assign(m.size(), 0);
  std::vector<std::pair<int, int>> stack;
  const bool diag = conn == Connectivity::Eight;
  for (int r0 = 0; r0 < m.height(); ++r0) {
    for (int c0 = 0; c0 < m.width(); ++c0) {
      if (!m(r0, c0) || out.labels[m.index(r0, c0)] != 0) continue;
      const int label = ++out.count;
      out.labels[m.index(r0, c0)] = label;
      stack.assign(1, {r0, c0});
      while (!stack.empty()) {
        const auto [r, c] = stack.back();
        stack.pop_back();
        for (int dr = -1; dr <= 1; ++dr) {
          for (int dc = -1; dc <= 1; ++dc) {
            if ((dr == 0 && dc == 0) || (!diag && dr != 0 && dc != 0)) continue;
            const int nr = r + dr;
            const int nc = c + dc;
            if (!m.contains(nr, nc) || !m(nr, nc)) continue;
            int& l = out.labels[m.index(nr, nc)];
            if (l == 0) {
              l = label;
              stack.emplace_back(nr, nc);
            }
          }
        }
      }
    }
  }
  return out;
}

/// Crack length: exposed pixel edges. Top/bottom edges measure spacing_x,
/// left/right edges spacing_y.
inline double perimeter_length(const Mask& m, const PixelGeometry& g = PixelGeometry::unit()) {
  std::size_t horizontal = 0, vertical = 0;
  auto bg = [&](int r, int c) { return !m.contains(r, c) || !m(r, c); };
  for (int r = 0; r < m.height(); ++r) {
    for (int c = 0; c < m.width(); ++c) {
      if (!m(r, c)) continue;
      horizontal += bg(r - 1, c) + bg(r + 1, c);
      vertical += bg(r, c - 1) + bg(r, c + 1);
    }
  }
  return horizontal * g.spacing_x + vertical * g.spacing_y;
}

// ---------------------------------------------------------------------------
// Convex hull on pixel centres
// ---------------------------------------------------------------------------

struct GridPoint {
  std::int64_t x;
  std::int64_t y;
  friend auto operator<=>(const GridPoint&, const GridPoint&) = default;
};

inline std::int64_t cross(const GridPoint& o, const GridPoint& a, const GridPoint& b) noexcept {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

/// Monotone-chain hull, counter-clockwise, without collinear vertices. A
/// degenerate input yields one or two vertices.
inline std::vector<GridPoint> convex_hull(std::vector<GridPoint> pts) {
  std::sort(pts.begin(), pts.end());
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  if (pts.size() < 3) return pts;
  std::vector<GridPoint> hull(2 * pts.size());
  std::size_t k = 0;
  for (const auto& p : pts) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], p) <= 0) --k;
    hull[k++] = p;
  }
  for (std::size_t i = pts.size() - 1, lower = k + 1; i-- > 0;) {
    while (k >= lower && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);
  return hull;
}

/// Inside-or-on test for a hull from convex_hull(), including its one- and
/// two-vertex degenerate forms.
inline bool in_hull(const std::vector<GridPoint>& hull, const GridPoint& p) noexcept {
  if (hull.size() == 1) return p == hull[0];
  if (hull.size() == 2) {
    const auto& a = hull[0];
    const auto& b = hull[1];
    return cross(a, b, p) == 0 && std::min(a.x, b.x) <= p.x && p.x <= std::max(a.x, b.x) &&
           std::min(a.y, b.y) <= p.y && p.y <= std::max(a.y, b.y);
  }
  for (std::size_t i = 0; i < hull.size(); ++i) {
    if (cross(hull[i], hull[(i + 1) % hull.size()], p) < 0) return false;
  }
  return true;
}

/// Number of pixel centres inside or on the hull of the given pixels.
inline std::size_t rasterized_hull_area(std::span<const GridPoint> pixels) {
  if (pixels.empty()) return 0;
  const auto hull = convex_hull({pixels.begin(), pixels.end()});
  std::int64_t x0 = pixels[0].x, x1 = x0, y0 = pixels[0].y, y1 = y0;
  for (const auto& p : pixels) {
    x0 = std::min(x0, p.x);
    x1 = std::max(x1, p.x);
    y0 = std::min(y0, p.y);
    y1 = std::max(y1, p.y);
  }
  std::size_t n = 0;
  for (auto y = y0; y <= y1; ++y) {
    for (auto x = x0; x <= x1; ++x) n += in_hull(hull, {x, y});
  }
  return n;
}

/// Area-weighted mean over components of pixel area / rasterized hull area.
inline double solidity(const Mask& m, Connectivity conn = Connectivity::Eight) {
  if (m.empty()) throw Error(Errc::EmptyMask, "solidity of an empty mask");
  const auto lab = connected_components(m, conn);
  std::vector<std::vector<GridPoint>> comps(lab.count);
  for (int r = 0; r < m.height(); ++r) {
    for (int c = 0; c < m.width(); ++c) {
      const int l = lab.labels[m.index(r, c)];
      if (l > 0) comps[l - 1].push_back({c, r});
    }
  }
  if (comps.size() == 1) {
    return static_cast<double>(comps[0].size()) / static_cast<double>(rasterized_hull_area(comps[0]));
  }
  double weighted = 0.0;
  double total = 0.0;
  for (const auto& comp : comps) {
    const double area = static_cast<double>(comp.size());
    weighted += area * (area / static_cast<double>(rasterized_hull_area(comp)));
    total += area;
  }
  return weighted / total;
}

/// 4 pi A / P^2 over the whole foreground, with A in physical units and P the
/// crack-length perimeter.
inline double circularity(const Mask& m, const PixelGeometry& g = PixelGeometry::unit()) {
  if (m.empty()) throw Error(Errc::EmptyMask, "circularity of an empty mask");
  const double area = static_cast<double>(m.count()) * g.spacing_x * g.spacing_y;
  const double p = perimeter_length(m, g);
  return 4.0 * std::numbers::pi * area / (p * p);
}

inline constexpr double kMyocardialDensity = 1.05;  // g/mL

struct SliceMask {
  const Mask* mask;
  PixelGeometry geometry;
};

/// Sum of foreground volume over slices, converted mm^3 -> mL, times density.
inline double scar_mass(std::span<const SliceMask> slices, double density = kMyocardialDensity) {
  if (!(density > 0.0) || !std::isfinite(density)) {
    throw Error(Errc::InvalidParameter, "density must be positive");
  }
  double mm3 = 0.0;
  for (const auto& s : slices) {
    if (!s.geometry.valid()) throw Error(Errc::InvalidParameter, "invalid slice geometry");
    mm3 += static_cast<double>(s.mask->count()) * s.geometry.spacing_x * s.geometry.spacing_y *
           s.geometry.slice_thickness;
  }
  return mm3 / 1000.0 * density;
}

struct FeatureVector {
  std::size_t scar_size_px = 0;
  double scar_area_mm2 = 0.0;
  int n_components = 0;
  std::optional<double> solidity;
  std::optional<double> circularity;
  double perimeter_mm = 0.0;
};

inline FeatureVector feature_vector(const Mask& m, const PixelGeometry& g,
                                    Connectivity conn = Connectivity::Eight) {
  g.validate();
  FeatureVector f;
  f.scar_size_px = m.count();
  f.scar_area_mm2 = static_cast<double>(f.scar_size_px) * g.spacing_x * g.spacing_y;
  f.n_components = connected_components(m, conn).count;
  f.perimeter_mm = perimeter_length(m, g);
  if (f.scar_size_px > 0) {
    f.solidity = solidity(m, conn);
    f.circularity = circularity(m, g);
  }
  return f;
}

}  // namespace scarbench::morphology
