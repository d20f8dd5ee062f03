#include <algorithm>
#include <array>
#include <cmath>

#include "fusionvit/harness.hpp"

namespace fvit {

namespace {

using Rgb = std::array<std::uint8_t, 3>;

constexpr Rgb kGtColor{40, 220, 60};
constexpr Rgb kPredColor{235, 40, 40};

void put_pixel(Rgb8Image& img, int x, int y, const Rgb& c) {
  if (x < 0 || y < 0 || x >= img.width || y >= img.height) return;
  for (int k = 0; k < 3; ++k) img.at(y, x, k) = c[static_cast<std::size_t>(k)];
}

// Liang-Barsky clip to the image rectangle, then Bresenham.
void draw_line(Rgb8Image& img, double x0, double y0, double x1, double y1, const Rgb& c) {
  double t0 = 0, t1 = 1;
  const double dx = x1 - x0, dy = y1 - y0;
  const double p[4] = {-dx, dx, -dy, dy};
  const double q[4] = {x0, img.width - 1 - x0, y0, img.height - 1 - y0};
  for (int i = 0; i < 4; ++i) {
    if (p[i] == 0) {
      if (q[i] < 0) return;
      continue;
    }
    const double t = q[i] / p[i];
    if (p[i] < 0) {
      t0 = std::max(t0, t);
    } else {
      t1 = std::min(t1, t);
    }
  }
  if (t0 > t1) return;
  int ax = static_cast<int>(std::lround(x0 + t0 * dx));
  int ay = static_cast<int>(std::lround(y0 + t0 * dy));
  const int bx = static_cast<int>(std::lround(x0 + t1 * dx));
  const int by = static_cast<int>(std::lround(y0 + t1 * dy));
  const int sx = ax < bx ? 1 : -1;
  const int sy = ay < by ? 1 : -1;
  const int ex = std::abs(bx - ax);
  const int ey = -std::abs(by - ay);
  int err = ex + ey;
  while (true) {
    put_pixel(img, ax, ay, c);
    if (ax == bx && ay == by) break;
    const int e2 = 2 * err;
    if (e2 >= ey) {
      err += ey;
      ax += sx;
    }
    if (e2 <= ex) {
      err += ex;
      ay += sy;
    }
  }
}

struct BevCanvas {
  const VoxelGeometry& range;
  double px_per_m;

  Eigen::Vector2d to_pixel(double x, double y) const {
    return {(range.range_max.y() - y) * px_per_m, (range.range_max.x() - x) * px_per_m};
  }
};

void draw_bev_box(Rgb8Image& img, const BevCanvas& canvas, const Box3D& box, const Rgb& c) {
  const auto fp = bev_footprint(box);
  for (std::size_t i = 0; i < 4; ++i) {
    const Eigen::Vector2d a = canvas.to_pixel(fp[i].x(), fp[i].y());
    const Eigen::Vector2d b = canvas.to_pixel(fp[(i + 1) % 4].x(), fp[(i + 1) % 4].y());
    draw_line(img, a.x(), a.y(), b.x(), b.y(), c);
  }
  const Eigen::Vector2d centre = canvas.to_pixel(box.cx, box.cy);
  const Eigen::Vector2d front = canvas.to_pixel(box.cx + std::cos(box.theta) * box.l / 2,
                                                box.cy + std::sin(box.theta) * box.l / 2);
  draw_line(img, centre.x(), centre.y(), front.x(), front.y(), c);
}

void draw_camera_box(Rgb8Image& img, const Calibration& calib, const Box3D& box, const Rgb& c) {
  static constexpr int kEdges[12][2] = {{0, 1}, {1, 2}, {2, 3}, {3, 0}, {4, 5}, {5, 6},
                                        {6, 7}, {7, 4}, {0, 4}, {1, 5}, {2, 6}, {3, 7}};
  std::array<Eigen::Vector3d, 8> uv;
  const CornerSet corners = corners_of(box);
  for (std::size_t k = 0; k < 8; ++k) {
    const auto p = calib.project(corners[k]);
    if (!p) return;
    uv[k] = *p;
  }
  for (const auto& e : kEdges) {
    const auto& a = uv[static_cast<std::size_t>(e[0])];
    const auto& b = uv[static_cast<std::size_t>(e[1])];
    draw_line(img, a.x(), a.y(), b.x(), b.y(), c);
  }
}

void draw_rect(Rgb8Image& img, const Box2D& b, const Rgb& c) {
  const double x0 = b.cx - b.w / 2, x1 = b.cx + b.w / 2, y0 = b.cy - b.h / 2, y1 = b.cy + b.h / 2;
  draw_line(img, x0, y0, x1, y0, c);
  draw_line(img, x1, y0, x1, y1, c);
  draw_line(img, x1, y1, x0, y1, c);
  draw_line(img, x0, y1, x0, y0, c);
}

}  // namespace

RenderResult render_scene(const FusionViT* model, const SceneSample& s, const EvalConfig& cfg,
                          const VoxelGeometry& range, const std::filesystem::path& out_dir, double min_score) {
  DetectionSet dets;
  std::vector<std::size_t> shown;
  if (model != nullptr) {
    dets = model->predict(s, kEvalSampleSeed, cfg.nms_threshold, cfg.max_detections);
    for (Eigen::Index i = 0; i < dets.size(); ++i) {
      if (dets.confidence(i) >= min_score) shown.push_back(static_cast<std::size_t>(i));
    }
  }
  const BevCanvas canvas{range, 8.0};
  Rgb8Image bev{static_cast<int>(std::ceil((range.range_max.x() - range.range_min.x()) * canvas.px_per_m)),
                static_cast<int>(std::ceil((range.range_max.y() - range.range_min.y()) * canvas.px_per_m)),
                {}};
  bev.pixels.assign(static_cast<std::size_t>(bev.width) * bev.height * 3, 20);
  for (const auto& p : s.cloud.points) {
    if (!range.in_range(p)) continue;
    const Eigen::Vector2d px = canvas.to_pixel(p.x(), p.y());
    put_pixel(bev, static_cast<int>(px.x()), static_cast<int>(px.y()), {200, 200, 200});
  }
  Rgb8Image cam = s.image;
  for (Eigen::Index m = 0; m < s.gt.size(); ++m) {
    const Box3D box = to_box3d(s.gt.boxes.row(m));
    draw_bev_box(bev, canvas, box, kGtColor);
    const bool camera_only = model != nullptr && model->box_mode() == BoxMode::Planar2D;
    if (!camera_only) draw_camera_box(cam, s.calib, box, kGtColor);
  }
  if (model != nullptr && model->box_mode() == BoxMode::Planar2D) {
    for (const auto& b : s.boxes_2d) {
      if (b.valid()) draw_rect(cam, b, kGtColor);
    }
  }
  for (std::size_t i : shown) {
    const auto row = static_cast<Eigen::Index>(i);
    if (dets.mode == BoxMode::Spatial3D) {
      const Box3D box = dets.box3d(row);
      draw_bev_box(bev, canvas, box, kPredColor);
      draw_camera_box(cam, s.calib, box, kPredColor);
    } else {
      draw_rect(cam, dets.box2d(row), kPredColor);
    }
  }
  RenderResult r;
  r.bev = out_dir / (s.scene_id + "_bev.png");
  r.camera = out_dir / (s.scene_id + "_camera.png");
  r.predictions_drawn = static_cast<int>(shown.size());
  write_png(r.bev, bev);
  write_png(r.camera, cam);
  return r;
}

}  // namespace fvit
