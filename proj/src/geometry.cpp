#include "fusionvit/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <tuple>

#include "fusionvit/errors.hpp"

namespace fvit {

double wrap_angle(double theta) {
  constexpr double kTwoPi = 2.0 * kPi;
  double wrapped = theta - kTwoPi * std::floor((theta + kPi) / kTwoPi);
  // floor() rounding can land exactly on +pi.
  if (wrapped >= kPi) wrapped -= kTwoPi;
  if (wrapped < -kPi) wrapped += kTwoPi;
  return wrapped;
}

bool Box3D::contains(const Eigen::Vector3d& p, double margin) const {
  const double dx = p.x() - cx;
  const double dy = p.y() - cy;
  const double c = std::cos(theta);
  const double s = std::sin(theta);
  const double local_x = c * dx + s * dy;
  const double local_y = -s * dx + c * dy;
  return std::abs(local_x) <= l / 2 + margin && std::abs(local_y) <= w / 2 + margin &&
         std::abs(p.z() - cz) <= h / 2 + margin;
}

Eigen::Vector3d corner_sign(int k) {
  static constexpr std::array<std::array<double, 2>, 4> kFace = {{{1, 1}, {-1, 1}, {-1, -1}, {1, -1}}};
  const auto& f = kFace[static_cast<std::size_t>(k % 4)];
  return {f[0], f[1], k < 4 ? -1.0 : 1.0};
}

CornerSet corners_of(const Box3D& box) {
  if (!box.valid()) {
    throw InvalidBoxError("corners_of: box extents must be positive");
  }
  const double c = std::cos(box.theta);
  const double s = std::sin(box.theta);
  CornerSet out;
  for (int k = 0; k < 8; ++k) {
    const Eigen::Vector3d sign = corner_sign(k);
    const double x = sign.x() * box.l / 2;
    const double y = sign.y() * box.w / 2;
    const double z = sign.z() * box.h / 2;
    out[static_cast<std::size_t>(k)] = {box.cx + c * x - s * y, box.cy + s * x + c * y, box.cz + z};
  }
  return out;
}

Box3D box_from_corners(const CornerSet& corners) {
  Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
  for (const auto& p : corners) centroid += p;
  centroid /= 8.0;
  const Eigen::Vector3d along = corners[0] - corners[1];
  Box3D box;
  box.cx = centroid.x();
  box.cy = centroid.y();
  box.cz = centroid.z();
  box.l = along.norm();
  box.w = (corners[0] - corners[3]).norm();
  box.h = (corners[4] - corners[0]).norm();
  box.theta = wrap_angle(std::atan2(along.y(), along.x()));
  return box;
}

std::array<Eigen::Vector2d, 4> bev_footprint(const Box3D& box) {
  const double c = std::cos(box.theta);
  const double s = std::sin(box.theta);
  std::array<Eigen::Vector2d, 4> out;
  for (int k = 0; k < 4; ++k) {
    const Eigen::Vector3d sign = corner_sign(k);
    const double x = sign.x() * box.l / 2;
    const double y = sign.y() * box.w / 2;
    out[static_cast<std::size_t>(k)] = {box.cx + c * x - s * y, box.cy + s * x + c * y};
  }
  return out;
}

namespace {

double cross(const Eigen::Vector2d& a, const Eigen::Vector2d& b, const Eigen::Vector2d& p) {
  return (b.x() - a.x()) * (p.y() - a.y()) - (b.y() - a.y()) * (p.x() - a.x());
}

Eigen::Vector2d line_intersection(const Eigen::Vector2d& a, const Eigen::Vector2d& b,
                                  const Eigen::Vector2d& s, const Eigen::Vector2d& e) {
  const double ds = cross(a, b, s);
  const double de = cross(a, b, e);
  const double t = ds / (ds - de);
  return s + t * (e - s);
}

// Orders a pair canonically so pairwise metrics are bit-identical under swap.
bool box_less(const Box3D& a, const Box3D& b) {
  return std::tie(a.cx, a.cy, a.cz, a.l, a.w, a.h, a.theta) <
         std::tie(b.cx, b.cy, b.cz, b.l, b.w, b.h, b.theta);
}

}  // namespace

Polygon clip_convex(const Polygon& subject, const Polygon& clip) {
  Polygon output = subject;
  if (clip.empty()) return output;
  Eigen::Vector2d a = clip.back();
  for (const auto& b : clip) {
    if (output.empty()) break;
    const Polygon input = std::move(output);
    output.clear();
    // Relative tolerance keeps shared edges from flickering in and out.
    const double scale = std::max(1.0, (b - a).norm());
    const double eps = 1e-12 * scale * scale;
    Eigen::Vector2d s = input.back();
    for (const auto& e : input) {
      const bool e_in = cross(a, b, e) >= -eps;
      const bool s_in = cross(a, b, s) >= -eps;
      if (e_in) {
        if (!s_in) output.push_back(line_intersection(a, b, s, e));
        output.push_back(e);
      } else if (s_in) {
        output.push_back(line_intersection(a, b, s, e));
      }
      s = e;
    }
    a = b;
  }
  return output;
}

double polygon_area(const Polygon& poly) {
  if (poly.size() < 3) return 0.0;
  double twice = 0.0;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    twice += poly[j].x() * poly[i].y() - poly[i].x() * poly[j].y();
  }
  return std::abs(twice) / 2.0;
}

double bev_intersection_area(const Box3D& a_in, const Box3D& b_in) {
  const bool swap = box_less(b_in, a_in);
  const Box3D& a = swap ? b_in : a_in;
  const Box3D& b = swap ? a_in : b_in;
  // Cheap reject on circumscribed circles.
  const double ra = 0.5 * std::hypot(a.l, a.w);
  const double rb = 0.5 * std::hypot(b.l, b.w);
  if (std::hypot(a.cx - b.cx, a.cy - b.cy) > ra + rb) return 0.0;

  const auto fa = bev_footprint(a);
  const auto fb = bev_footprint(b);
  const Polygon pa(fa.begin(), fa.end());
  const Polygon pb(fb.begin(), fb.end());
  const double area = polygon_area(clip_convex(pa, pb));
  return std::min({area, a.l * a.w, b.l * b.w});
}

double iou_bev(const Box3D& a, const Box3D& b) {
  const double inter = bev_intersection_area(a, b);
  if (inter <= 0.0) return 0.0;
  const double uni = a.l * a.w + b.l * b.w - inter;
  return std::clamp(inter / uni, 0.0, 1.0);
}

double iou_3d(const Box3D& a, const Box3D& b) {
  const double z_lo = std::max(a.cz - a.h / 2, b.cz - b.h / 2);
  const double z_hi = std::min(a.cz + a.h / 2, b.cz + b.h / 2);
  const double dz = z_hi - z_lo;
  if (dz <= 0.0) return 0.0;
  const double inter = bev_intersection_area(a, b) * dz;
  if (inter <= 0.0) return 0.0;
  const double uni = a.volume() + b.volume() - inter;
  return std::clamp(inter / uni, 0.0, 1.0);
}

double iou_2d(const Box2D& a, const Box2D& b) {
  const double ix = std::min(a.cx + a.w / 2, b.cx + b.w / 2) - std::max(a.cx - a.w / 2, b.cx - b.w / 2);
  const double iy = std::min(a.cy + a.h / 2, b.cy + b.h / 2) - std::max(a.cy - a.h / 2, b.cy - b.h / 2);
  if (ix <= 0.0 || iy <= 0.0) return 0.0;
  const double inter = ix * iy;
  return std::clamp(inter / (a.area() + b.area() - inter), 0.0, 1.0);
}

std::vector<std::size_t> nms_3d(std::span<const Box3D> boxes, std::span<const double> confidence,
                                double iou_threshold, std::size_t max_out) {
  return nms_indices(boxes, confidence, iou_threshold, max_out,
                     [](const Box3D& a, const Box3D& b) { return iou_3d(a, b); });
}

std::vector<std::size_t> nms_2d(std::span<const Box2D> boxes, std::span<const double> confidence,
                                double iou_threshold, std::size_t max_out) {
  return nms_indices(boxes, confidence, iou_threshold, max_out,
                     [](const Box2D& a, const Box2D& b) { return iou_2d(a, b); });
}

}  // namespace fvit
