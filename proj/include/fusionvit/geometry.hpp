#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace fvit {

inline constexpr double kPi = 3.14159265358979323846;

/// Wraps an angle to [-pi, pi).
double wrap_angle(double theta);

/// Oriented 3D box in the lidar frame: center, extent along heading / lateral /
/// vertical, and yaw about +z.
struct Box3D {
  double cx = 0, cy = 0, cz = 0;
  double l = 1, w = 1, h = 1;
  double theta = 0;

  bool operator==(const Box3D&) const = default;

  double volume() const { return l * w * h; }
  bool valid() const { return l > 0 && w > 0 && h > 0; }
  bool contains(const Eigen::Vector3d& p, double margin = 0.0) const;
};

/// Axis-aligned image box, center + size in pixels.
struct Box2D {
  double cx = 0, cy = 0, w = 1, h = 1;

  bool operator==(const Box2D&) const = default;

  double area() const { return w * h; }
  bool valid() const { return w > 0 && h > 0; }
};

/// Eight corners of a Box3D. Canonical order, box-frame signs of (l, w, h):
///   0 (+,+,-)  1 (-,+,-)  2 (-,-,-)  3 (+,-,-)    bottom face, counter-clockwise
///   4 (+,+,+)  5 (-,+,+)  6 (-,-,+)  7 (+,-,+)    top face, same winding
/// Corner k+4 sits directly above corner k.
using CornerSet = std::array<Eigen::Vector3d, 8>;

/// Box-frame sign pattern of corner k, each entry +-1.
Eigen::Vector3d corner_sign(int k);

/// Throws InvalidBoxError on non-positive extent.
CornerSet corners_of(const Box3D& box);

/// Recovers (center, extents, heading) from a canonical corner set. Heading
/// comes from the 1 -> 0 edge, so it is exact up to the l-axis direction.
Box3D box_from_corners(const CornerSet& corners);

/// Bottom-face footprint, counter-clockwise.
std::array<Eigen::Vector2d, 4> bev_footprint(const Box3D& box);

using Polygon = std::vector<Eigen::Vector2d>;

/// Sutherland-Hodgman clip of `subject` against the convex counter-clockwise
/// polygon `clip`.
Polygon clip_convex(const Polygon& subject, const Polygon& clip);

/// Absolute shoelace area.
double polygon_area(const Polygon& poly);

double bev_intersection_area(const Box3D& a, const Box3D& b);

double iou_bev(const Box3D& a, const Box3D& b);
double iou_3d(const Box3D& a, const Box3D& b);
double iou_2d(const Box2D& a, const Box2D& b);

/// Greedy non-maximum suppression. Candidates are visited by descending
/// confidence, ties by ascending index; a candidate survives when its IoU with
/// every earlier survivor is <= iou_threshold. Returns surviving indices in
/// visiting order, at most max_out of them.
template <class Box, class IouFn>
std::vector<std::size_t> nms_indices(std::span<const Box> boxes, std::span<const double> confidence,
                                     double iou_threshold, std::size_t max_out, IouFn&& iou);

std::vector<std::size_t> nms_3d(std::span<const Box3D> boxes, std::span<const double> confidence,
                                double iou_threshold, std::size_t max_out);
std::vector<std::size_t> nms_2d(std::span<const Box2D> boxes, std::span<const double> confidence,
                                double iou_threshold, std::size_t max_out);

}  // namespace fvit

#include "fusionvit/detail/nms_impl.hpp"
