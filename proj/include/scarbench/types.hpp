#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "scarbench/error.hpp"

namespace scarbench {

namespace detail {

// Row-major 2-D storage shared by Mask, Image and ScoreMap. Value checks
// belong to the derived types.
template <typename T>
class Raster {
 public:
  using value_type = T;

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  std::size_t size() const noexcept { return data_.size(); }

  std::size_t index(int row, int col) const noexcept {
    return static_cast<std::size_t>(row) * static_cast<std::size_t>(width_) +
           static_cast<std::size_t>(col);
  }
  bool contains(int row, int col) const noexcept {
    return row >= 0 && col >= 0 && row < height_ && col < width_;
  }

  T operator()(int row, int col) const noexcept { return data_[index(row, col)]; }
  T operator[](std::size_t i) const noexcept { return data_[i]; }

  std::span<const T> data() const noexcept { return data_; }

  bool same_shape(const Raster& other) const noexcept {
    return width_ == other.width_ && height_ == other.height_;
  }

  friend bool operator==(const Raster& a, const Raster& b) {
    return a.width_ == b.width_ && a.height_ == b.height_ && a.data_ == b.data_;
  }

 protected:
  Raster(int width, int height, T fill) : width_(width), height_(height) {
    check_dims();
    data_.assign(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), fill);
  }
  Raster(int width, int height, std::vector<T> data)
      : width_(width), height_(height), data_(std::move(data)) {
    check_dims();
    if (data_.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height)) {
      throw Error(Errc::DimensionMismatch, "data length " + std::to_string(data_.size()) +
                                               " does not match " + std::to_string(width) + "x" +
                                               std::to_string(height));
    }
  }

  T& mut(std::size_t i) noexcept { return data_[i]; }

  int width_;
  int height_;
  std::vector<T> data_;

 private:
  void check_dims() const {
    if (width_ <= 0 || height_ <= 0) {
      throw Error(Errc::InvalidParameter, "raster dimensions must be positive, got " +
                                              std::to_string(width_) + "x" +
                                              std::to_string(height_));
    }
  }
};

}  // namespace detail

/// Binary pixel grid. Values are exactly 0 (background) or 1 (foreground).
class Mask : public detail::Raster<std::uint8_t> {
 public:
  Mask(int width, int height) : Raster(width, height, std::uint8_t{0}) {}
  Mask(int width, int height, std::vector<std::uint8_t> data)
      : Raster(width, height, std::move(data)) {
    for (auto v : data_) {
      if (v > 1) throw Error(Errc::InvalidParameter, "mask values must be 0 or 1");
    }
  }

  void set(int row, int col, bool on) noexcept { mut(index(row, col)) = on ? 1 : 0; }
  void set(std::size_t i, bool on) noexcept { mut(i) = on ? 1 : 0; }

  std::size_t count() const noexcept {
    std::size_t n = 0;
    for (auto v : data_) n += v;
    return n;
  }
  bool empty() const noexcept { return count() == 0; }
};

/// Intensity image normalized to [0,1].
class Image : public detail::Raster<double> {
 public:
  Image(int width, int height, double fill = 0.0) : Raster(width, height, fill) {
    check_value(fill);
  }
  Image(int width, int height, std::vector<double> data) : Raster(width, height, std::move(data)) {
    for (double v : data_) check_value(v);
  }

  void set(int row, int col, double v) {
    check_value(v);
    mut(index(row, col)) = v;
  }
  void set(std::size_t i, double v) {
    check_value(v);
    mut(i) = v;
  }

 private:
  static void check_value(double v) {
    if (!(v >= 0.0 && v <= 1.0)) {
      throw Error(Errc::InvalidParameter, "image intensity outside [0,1]: " + std::to_string(v));
    }
  }
};

/// Pre-sigmoid per-pixel prediction scores.
class ScoreMap : public detail::Raster<double> {
 public:
  ScoreMap(int width, int height, double fill = 0.0) : Raster(width, height, fill) {
    check_value(fill);
  }
  ScoreMap(int width, int height, std::vector<double> data)
      : Raster(width, height, std::move(data)) {
    for (double v : data_) check_value(v);
  }

  void set(int row, int col, double v) {
    check_value(v);
    mut(index(row, col)) = v;
  }
  void set(std::size_t i, double v) {
    check_value(v);
    mut(i) = v;
  }

 private:
  static void check_value(double v) {
    if (!std::isfinite(v)) throw Error(Errc::InvalidParameter, "score is not finite");
  }
};

/// Unconstrained real-valued map (smoothed masks, gradients, displacement fields).
class RealMap : public detail::Raster<double> {
 public:
  RealMap(int width, int height, double fill = 0.0) : Raster(width, height, fill) {}
  RealMap(int width, int height, std::vector<double> data)
      : Raster(width, height, std::move(data)) {}

  double& at(std::size_t i) noexcept { return mut(i); }
  double& at(int row, int col) noexcept { return mut(index(row, col)); }
  using Raster::operator();
  using Raster::operator[];
};

struct PixelGeometry {
  double spacing_x = 1.0;  // mm per column
  double spacing_y = 1.0;  // mm per row
  double slice_thickness = 1.0;

  bool valid() const noexcept {
    auto ok = [](double v) { return std::isfinite(v) && v > 0.0; };
    return ok(spacing_x) && ok(spacing_y) && ok(slice_thickness);
  }
  void validate() const {
    if (!valid()) {
      throw Error(Errc::InvalidGeometry, "spacing and slice thickness must be positive and finite");
    }
  }

  static PixelGeometry unit() noexcept { return {}; }

  friend bool operator==(const PixelGeometry&, const PixelGeometry&) = default;
};

/// Inclusive pixel-index box.
struct BoundingBox {
  int x_min = 0;
  int y_min = 0;
  int x_max = 0;
  int y_max = 0;

  int width() const noexcept { return x_max - x_min + 1; }
  int height() const noexcept { return y_max - y_min + 1; }

  bool valid_in(int img_w, int img_h) const noexcept {
    return 0 <= x_min && x_min <= x_max && x_max < img_w && 0 <= y_min && y_min <= y_max &&
           y_max < img_h;
  }

  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

/// Tight box around the foreground, or nullopt for an empty mask.
inline std::optional<BoundingBox> bounding_box(const Mask& m) {
  std::optional<BoundingBox> box;
  for (int r = 0; r < m.height(); ++r) {
    for (int c = 0; c < m.width(); ++c) {
      if (!m(r, c)) continue;
      if (!box) {
        box = BoundingBox{c, r, c, r};
      } else {
        box->x_min = std::min(box->x_min, c);
        box->x_max = std::max(box->x_max, c);
        box->y_min = std::min(box->y_min, r);
        box->y_max = std::max(box->y_max, r);
      }
    }
  }
  return box;
}

struct CaseRecord {
  std::string patient_id;
  std::string cohort_id;
  int slice_index = 0;
  std::filesystem::path image_path;
  std::filesystem::path mask_path;
  std::optional<std::filesystem::path> pred_path;
  std::optional<std::filesystem::path> scores_path;
  PixelGeometry geometry;
};

template <typename A, typename B>
void require_same_shape(const A& a, const B& b) {
  if (a.width() != b.width() || a.height() != b.height()) {
    throw Error(Errc::DimensionMismatch,
                std::to_string(a.width()) + "x" + std::to_string(a.height()) + " vs " +
                    std::to_string(b.width()) + "x" + std::to_string(b.height()));
  }
}

}  // namespace scarbench
