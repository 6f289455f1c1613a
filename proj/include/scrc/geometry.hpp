#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

#include "scrc/error.hpp"

namespace scrc {

/// Continuous pixel rectangle, origin at the top-left corner.
struct BoundingBox {
  double x_min = 0, y_min = 0, x_max = 0, y_max = 0;

  double width() const noexcept { return x_max - x_min; }
  double height() const noexcept { return y_max - y_min; }
  double area() const noexcept { return width() * height(); }

  bool valid() const noexcept {
    return std::isfinite(x_min) && std::isfinite(y_min) &&
           std::isfinite(x_max) && std::isfinite(y_max) && x_max > x_min &&
           y_max > y_min;
  }

  std::string str() const {
    return "[" + std::to_string(x_min) + "," + std::to_string(y_min) + "," +
           std::to_string(x_max) + "," + std::to_string(y_max) + "]";
  }

  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

struct ImageSize {
  double width = 0, height = 0;
};

inline constexpr std::size_t kSpatialDim = 8;

/// [x_min, y_min, x_max, y_max, x_center, y_center, w_box, h_box] with the
/// image mapped onto [-1, 1] x [-1, 1].
using SpatialFeature = std::array<double, kSpatialDim>;

inline void validate_box(const BoundingBox& box, const ImageSize& img) {
  if (!(img.width > 0) || !(img.height > 0) || !std::isfinite(img.width) ||
      !std::isfinite(img.height))
    throw InputError("image size must be positive");
  if (!box.valid())
    throw InputError("degenerate or non-finite box " + box.str());
  if (box.x_min < 0 || box.y_min < 0 || box.x_max > img.width ||
      box.y_max > img.height)
    throw InputError("box " + box.str() + " exceeds image " +
                     std::to_string(img.width) + "x" +
                     std::to_string(img.height));
}

inline SpatialFeature encode_spatial(const BoundingBox& box,
                                     const ImageSize& img) {
  validate_box(box, img);
  const double x0 = 2.0 * box.x_min / img.width - 1.0;
  const double y0 = 2.0 * box.y_min / img.height - 1.0;
  const double x1 = 2.0 * box.x_max / img.width - 1.0;
  const double y1 = 2.0 * box.y_max / img.height - 1.0;
  return {x0, y0, x1, y1, (x0 + x1) / 2.0, (y0 + y1) / 2.0, x1 - x0, y1 - y0};
}

inline double iou(const BoundingBox& a, const BoundingBox& b) {
  const double iw =
      std::max(0.0, std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min));
  const double ih =
      std::max(0.0, std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min));
  const double inter = iw * ih;
  if (inter <= 0.0) return 0.0;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? std::min(1.0, inter / uni) : 0.0;
}

inline constexpr double kHitIou = 0.5;

inline bool is_hit(const BoundingBox& candidate, const BoundingBox& gt) {
  return iou(candidate, gt) >= kHitIou;
}

}  // namespace scrc
