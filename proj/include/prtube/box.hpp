#pragma once

#include <algorithm>

namespace prtube {

/// Axis-aligned box in corner form. Detection geometry is normalized to the
/// unit square; the IoU helpers work for any consistent unit.
template <typename Scalar>
struct BasicBox {
  Scalar x_min{0};
  Scalar y_min{0};
  Scalar x_max{0};
  Scalar y_max{0};

  Scalar width() const { return x_max - x_min; }
  Scalar height() const { return y_max - y_min; }
  Scalar area() const { return width() * height(); }
  bool degenerate() const { return !(x_min < x_max && y_min < y_max); }

  friend bool operator==(const BasicBox&, const BasicBox&) = default;
};

using Box = BasicBox<double>;

template <typename Scalar>
Scalar intersection_area(const BasicBox<Scalar>& a, const BasicBox<Scalar>& b) {
  const Scalar w = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const Scalar h = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  if (w <= Scalar(0) || h <= Scalar(0)) return Scalar(0);
  return w * h;
}

/// Intersection over union; 0 when both boxes are empty.
template <typename Scalar>
Scalar box_iou(const BasicBox<Scalar>& a, const BasicBox<Scalar>& b) {
  const Scalar inter = intersection_area(a, b);
  const Scalar uni = a.area() + b.area() - inter;
  if (uni <= Scalar(0)) return Scalar(0);
  return inter / uni;
}

/// Box of the given size centered at (cx, cy).
template <typename Scalar>
BasicBox<Scalar> box_from_center(Scalar cx, Scalar cy, Scalar w, Scalar h) {
  return {cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2};
}

}  // namespace prtube
