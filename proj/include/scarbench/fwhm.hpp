#pragma once

#include <algorithm>
#include <cmath>

#include "scarbench/error.hpp"
#include "scarbench/types.hpp"

namespace scarbench::fwhm {

struct LabelingInputs {
  Image image;
  Mask myocardium;  // between the epicardial and endocardial contours
  Mask core_roi;    // placed on the brightest scar core
};

inline void validate(const LabelingInputs& in) {
  require_same_shape(in.image, in.myocardium);
  require_same_shape(in.image, in.core_roi);
  if (in.core_roi.empty()) throw Error(Errc::EmptyROI, "scar-core ROI has no pixels");
  for (std::size_t i = 0; i < in.core_roi.size(); ++i) {
    if (in.core_roi[i] && !in.myocardium[i]) {
      throw Error(Errc::ROIOutsideMyocardium,
                  "ROI pixel " + std::to_string(i) + " lies outside the myocardium");
    }
  }
}

/// Half-maximum thresholding: myocardial pixels at or above
/// fraction * max(intensity over core_roi) are scar.
inline Mask fwhm_segment(const LabelingInputs& in, double fraction = 0.5) {
  if (!(fraction > 0.0) || !(fraction <= 1.0)) {
    throw Error(Errc::InvalidParameter, "threshold fraction must be in (0, 1]");
  }
  validate(in);
  double peak = 0.0;
  for (std::size_t i = 0; i < in.core_roi.size(); ++i) {
    if (in.core_roi[i]) peak = std::max(peak, in.image[i]);
  }
  const double threshold = fraction * peak;
  Mask out(in.image.width(), in.image.height());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (in.myocardium[i] && in.image[i] >= threshold) out.set(i, true);
  }
  return out;
}

}  // namespace scarbench::fwhm
