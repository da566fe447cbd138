#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "layoutdetr/core/errors.hpp"

namespace layoutdetr {

// Smallest admissible normalized height/width. Degenerate boxes are clamped
// up to this floor instead of rejected.
inline constexpr double kBoxEpsilon = 1e-4;

// A layout box in center+size form, every field a fraction of the
// background's height (cy, h) or width (cx, w). Edges are derived.
struct NormalizedBox {
  double cy = 0.5;
  double cx = 0.5;
  double h = kBoxEpsilon;
  double w = kBoxEpsilon;

  double top() const { return cy - h / 2; }
  double bottom() const { return cy + h / 2; }
  double left() const { return cx - w / 2; }
  double right() const { return cx + w / 2; }
  double area() const { return h * w; }

  std::array<double, 4> params() const { return {cy, cx, h, w}; }

  friend bool operator==(const NormalizedBox&, const NormalizedBox&) = default;
};

inline NormalizedBox clamp_box(NormalizedBox b) {
  b.cy = std::clamp(b.cy, 0.0, 1.0);
  b.cx = std::clamp(b.cx, 0.0, 1.0);
  b.h = std::clamp(b.h, kBoxEpsilon, 1.0);
  b.w = std::clamp(b.w, kBoxEpsilon, 1.0);
  return b;
}

inline NormalizedBox box_from_params(double cy, double cx, double h, double w) {
  return clamp_box({cy, cx, h, w});
}

inline bool is_valid_box(const NormalizedBox& b) {
  auto in01 = [](double v) { return std::isfinite(v) && v >= 0.0 && v <= 1.0; };
  return in01(b.cy) && in01(b.cx) && in01(b.h) && in01(b.w) && b.h >= kBoxEpsilon &&
         b.w >= kBoxEpsilon;
}

inline NormalizedBox box_from_edges(double top, double left, double bottom, double right) {
  return clamp_box({(top + bottom) / 2, (left + right) / 2, bottom - top, right - left});
}

// Pixel-space box in the same center+size parameterization.
struct PixelBox {
  long y = 0;
  long x = 0;
  long h = 1;
  long w = 1;
  friend bool operator==(const PixelBox&, const PixelBox&) = default;
};

inline NormalizedBox normalize_box(double y, double x, double h, double w, double image_h,
                                   double image_w) {
  if (!(image_h > 0) || !(image_w > 0))
    throw DimensionError("normalize_box: image height and width must be positive");
  return clamp_box({y / image_h, x / image_w, h / image_h, w / image_w});
}

inline PixelBox denormalize_box(const NormalizedBox& b, double image_h, double image_w) {
  if (!(image_h > 0) || !(image_w > 0))
    throw DimensionError("denormalize_box: image height and width must be positive");
  auto round_half_up = [](double v) { return static_cast<long>(std::floor(v + 0.5)); };
  return {round_half_up(b.cy * image_h), round_half_up(b.cx * image_w),
          std::max(1L, round_half_up(b.h * image_h)), std::max(1L, round_half_up(b.w * image_w))};
}

// Ordered boxes, parallel to the conditioning foreground order.
struct Layout {
  std::vector<NormalizedBox> boxes;
  std::vector<std::string> element_ids;

  std::size_t size() const { return boxes.size(); }
  bool empty() const { return boxes.empty(); }

  static Layout from_boxes(std::vector<NormalizedBox> boxes) {
    Layout l;
    l.element_ids.reserve(boxes.size());
    for (std::size_t i = 0; i < boxes.size(); ++i) l.element_ids.push_back(std::to_string(i));
    l.boxes = std::move(boxes);
    return l;
  }

  friend bool operator==(const Layout&, const Layout&) = default;
};

inline void validate_layout(const Layout& l) {
  if (l.boxes.size() != l.element_ids.size())
    throw ValidationError("layout: boxes and element_ids differ in length");
  for (std::size_t i = 0; i < l.boxes.size(); ++i) {
    if (!is_valid_box(l.boxes[i]))
      throw ValidationError("layout: box " + std::to_string(i) + " violates [0,1] range");
    for (std::size_t j = 0; j < i; ++j)
      if (l.element_ids[i] == l.element_ids[j])
        throw ValidationError("layout: duplicate element id '" + l.element_ids[i] + "'");
  }
}

inline double intersection_area(const NormalizedBox& a, const NormalizedBox& b) {
  const double ih = std::min(a.bottom(), b.bottom()) - std::max(a.top(), b.top());
  const double iw = std::min(a.right(), b.right()) - std::max(a.left(), b.left());
  return (ih > 0 && iw > 0) ? ih * iw : 0.0;
}

// Area from the derived edges, so that it agrees bit-for-bit with
// intersections of identical or nested boxes.
inline double edge_area(const NormalizedBox& b) { return (b.bottom() - b.top()) * (b.right() - b.left()); }

inline double box_iou(const NormalizedBox& a0, const NormalizedBox& b0) {
  const NormalizedBox a = clamp_box(a0), b = clamp_box(b0);
  const double inter = intersection_area(a, b);
  const double uni = edge_area(a) + edge_area(b) - inter;
  return inter / uni;
}

inline double box_giou(const NormalizedBox& a0, const NormalizedBox& b0) {
  const NormalizedBox a = clamp_box(a0), b = clamp_box(b0);
  const double inter = intersection_area(a, b);
  const double uni = edge_area(a) + edge_area(b) - inter;
  const double hull = (std::max(a.bottom(), b.bottom()) - std::min(a.top(), b.top())) *
                      (std::max(a.right(), b.right()) - std::min(a.left(), b.left()));
  return inter / uni - (hull - uni) / hull;
}

// gIoU together with its analytic gradient with respect to
// (a.cy, a.cx, a.h, a.w, b.cy, b.cx, b.h, b.w). Boxes are assumed to be
// inside the clamp region; at edge ties the one-sided derivative of the
// first argument is taken.
struct GiouWithGrad {
  double value = 0;
  std::array<double, 8> grad{};
};

inline GiouWithGrad box_giou_with_grad(const NormalizedBox& a, const NormalizedBox& b) {
  // Per-axis interval bookkeeping: lo/hi edges and their derivative
  // routing to (center, size) of each box.
  struct Axis {
    double ih = 0, hull = 0;
    // d ih / d(lo_a, hi_a, lo_b, hi_b), d hull / d(...)
    std::array<double, 4> d_ih{}, d_hull{};
  };
  auto axis = [](double lo_a, double hi_a, double lo_b, double hi_b) {
    Axis ax;
    const double hi_min = std::min(hi_a, hi_b), lo_max = std::max(lo_a, lo_b);
    const double raw = hi_min - lo_max;
    ax.ih = raw > 0 ? raw : 0.0;
    if (raw > 0) {
      (hi_a <= hi_b ? ax.d_ih[1] : ax.d_ih[3]) = 1.0;
      (lo_a >= lo_b ? ax.d_ih[0] : ax.d_ih[2]) = -1.0;
    }
    ax.hull = std::max(hi_a, hi_b) - std::min(lo_a, lo_b);
    (hi_a >= hi_b ? ax.d_hull[1] : ax.d_hull[3]) = 1.0;
    (lo_a <= lo_b ? ax.d_hull[0] : ax.d_hull[2]) = -1.0;
    return ax;
  };
  const Axis vy = axis(a.top(), a.bottom(), b.top(), b.bottom());
  const Axis vx = axis(a.left(), a.right(), b.left(), b.right());

  const double inter = vy.ih * vx.ih;
  const double area_a = a.h * a.w, area_b = b.h * b.w;
  const double uni = area_a + area_b - inter;
  const double hull = vy.hull * vx.hull;

  GiouWithGrad out;
  out.value = inter / uni + uni / hull - 1.0;

  const double g_inter = 1.0 / uni + inter / (uni * uni) - 1.0 / hull;
  const double g_area = -inter / (uni * uni) + 1.0 / hull;
  const double g_hull = -uni / (hull * hull);

  // Edge gradients: d/d(lo, hi) of each box on each axis.
  auto edge_grads = [&](const Axis& ax, double other_ih, double other_hull) {
    std::array<double, 4> g{};
    for (int k = 0; k < 4; ++k)
      g[k] = g_inter * ax.d_ih[k] * other_ih + g_hull * ax.d_hull[k] * other_hull;
    return g;
  };
  const auto gy = edge_grads(vy, vx.ih, vx.hull);
  const auto gx = edge_grads(vx, vy.ih, vy.hull);

  // lo = c - s/2, hi = c + s/2.
  out.grad[0] = gy[0] + gy[1];
  out.grad[2] = 0.5 * (gy[1] - gy[0]) + g_area * a.w;
  out.grad[1] = gx[0] + gx[1];
  out.grad[3] = 0.5 * (gx[1] - gx[0]) + g_area * a.h;
  out.grad[4] = gy[2] + gy[3];
  out.grad[6] = 0.5 * (gy[3] - gy[2]) + g_area * b.w;
  out.grad[5] = gx[2] + gx[3];
  out.grad[7] = 0.5 * (gx[3] - gx[2]) + g_area * b.h;
  return out;
}

// Fraction of `a` covered by `b`; asymmetric on purpose.
inline double overlap_fraction(const NormalizedBox& a0, const NormalizedBox& b0) {
  const NormalizedBox a = clamp_box(a0), b = clamp_box(b0);
  return intersection_area(a, b) / edge_area(a);
}

enum class AlignmentKind { left = 0, hcenter, right, top, vcenter, bottom };
inline constexpr int kAlignmentKinds = 6;

// |left|, |cx|, |right|, |top|, |cy|, |bottom| differences.
inline std::array<double, 6> alignment_deltas(const NormalizedBox& a, const NormalizedBox& b) {
  return {std::abs(a.left() - b.left()), std::abs(a.cx - b.cx), std::abs(a.right() - b.right()),
          std::abs(a.top() - b.top()),   std::abs(a.cy - b.cy), std::abs(a.bottom() - b.bottom())};
}

}  // namespace layoutdetr
