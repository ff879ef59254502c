#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <vector>

#include "scarbench/error.hpp"
#include "scarbench/types.hpp"

namespace scarbench::metrics {

/// Foreground pixels with at least one 4-neighbour in the background. The
/// image border counts as background.
inline Mask extract_boundary(const Mask& m) {
  Mask out(m.width(), m.height());
  for (int r = 0; r < m.height(); ++r) {
    for (int c = 0; c < m.width(); ++c) {
      if (!m(r, c)) continue;
      const bool exposed = r == 0 || c == 0 || r == m.height() - 1 || c == m.width() - 1 ||
                           !m(r - 1, c) || !m(r + 1, c) || !m(r, c - 1) || !m(r, c + 1);
      if (exposed) out.set(r, c, true);
    }
  }
  return out;
}

namespace detail {

// 1 - |a - b| / (a + b), with 1 for a = b = 0.
inline double count_similarity(std::size_t a, std::size_t b) noexcept {
  if (a + b == 0) return 1.0;
  const double diff = a > b ? static_cast<double>(a - b) : static_cast<double>(b - a);
  return 1.0 - diff / static_cast<double>(a + b);
}

struct Point {
  double x;
  double y;
};

inline std::vector<Point> boundary_points(const Mask& m, const PixelGeometry& g) {
  const Mask b = extract_boundary(m);
  std::vector<Point> pts;
  for (int r = 0; r < b.height(); ++r) {
    for (int c = 0; c < b.width(); ++c) {
      if (b(r, c)) pts.push_back({c * g.spacing_x, r * g.spacing_y});
    }
  }
  return pts;
}

// max over a of min over b of |a - b|, squared. Breaks out of the inner scan
// as soon as a point cannot raise the running maximum.
inline double directed_hausdorff_sq(const std::vector<Point>& from, const std::vector<Point>& to) {
  double worst = 0.0;
  for (const auto& p : from) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& q : to) {
      const double dx = p.x - q.x;
      const double dy = p.y - q.y;
      best = std::min(best, dx * dx + dy * dy);
      if (best <= worst) break;
    }
    worst = std::max(worst, best);
  }
  return worst;
}

}  // namespace detail

/// Dice similarity coefficient; two empty masks agree perfectly (1).
inline double dsc(const Mask& pred, const Mask& gt) {
  require_same_shape(pred, gt);
  std::size_t inter = 0, np = 0, ng = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    np += pred[i];
    ng += gt[i];
    inter += pred[i] & gt[i];
  }
  if (np + ng == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(np + ng);
}

/// Symmetric Hausdorff distance between boundary-pixel centres, in the units
/// of the geometry's spacing (mm). Throws EmptyMask when either side is
/// empty.
inline double hausdorff(const Mask& pred, const Mask& gt, const PixelGeometry& g) {
  require_same_shape(pred, gt);
  g.validate();
  if (pred.empty() || gt.empty()) {
    throw Error(Errc::EmptyMask, "Hausdorff distance is undefined for an empty mask");
  }
  const auto a = detail::boundary_points(pred, g);
  const auto b = detail::boundary_points(gt, g);
  return std::sqrt(std::max(detail::directed_hausdorff_sq(a, b), detail::directed_hausdorff_sq(b, a)));
}

/// Pixel-unit Hausdorff distance.
inline double hausdorff(const Mask& pred, const Mask& gt) {
  return hausdorff(pred, gt, PixelGeometry::unit());
}

inline double area_similarity(const Mask& pred, const Mask& gt) {
  require_same_shape(pred, gt);
  return detail::count_similarity(pred.count(), gt.count());
}

/// Area similarity applied to boundary pixel counts.
inline double perimeter_similarity(const Mask& pred, const Mask& gt) {
  require_same_shape(pred, gt);
  return detail::count_similarity(extract_boundary(pred).count(), extract_boundary(gt).count());
}

struct MetricReport {
  double dsc = 0.0;
  std::optional<double> hd_mm;  // absent when either mask is empty
  double area_similarity = 0.0;
  double perimeter_similarity = 0.0;
  const CaseRecord* case_record = nullptr;
};

inline MetricReport evaluate(const Mask& pred, const Mask& gt, const PixelGeometry& g) {
  MetricReport rep;
  rep.dsc = dsc(pred, gt);
  rep.area_similarity = area_similarity(pred, gt);
  rep.perimeter_similarity = perimeter_similarity(pred, gt);
  if (!pred.empty() && !gt.empty()) rep.hd_mm = hausdorff(pred, gt, g);
  return rep;
}

}  // namespace scarbench::metrics
