#include "fusionvit/data.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "fusionvit/errors.hpp"

namespace fvit {

const char* class_name(int label) {
  switch (label) {
    case 0:
      return "Car";
    case 1:
      return "Pedestrian";
    default:
      return "DontCare";
  }
}

std::optional<int> class_from_kitti(const std::string& type) {
  if (type == "Car") return 0;
  if (type == "Pedestrian") return 1;
  return std::nullopt;
}

Eigen::Vector3d Calibration::lidar_to_rect(const Eigen::Vector3d& p) const {
  const Eigen::Vector3d cam = velo_to_cam.leftCols<3>() * p + velo_to_cam.col(3);
  return r0_rect * cam;
}

Eigen::Vector3d Calibration::rect_to_lidar(const Eigen::Vector3d& p) const {
  const Eigen::Vector3d cam = r0_rect.inverse() * p;
  return Eigen::Matrix3d(velo_to_cam.leftCols<3>()).inverse() * (cam - velo_to_cam.col(3));
}

std::optional<Eigen::Vector3d> Calibration::project(const Eigen::Vector3d& lidar_point) const {
  const Eigen::Vector3d rect = lidar_to_rect(lidar_point);
  if (rect.z() <= 1e-6) return std::nullopt;
  const Eigen::Vector3d uvw = p2.leftCols<3>() * rect + p2.col(3);
  return Eigen::Vector3d(uvw.x() / uvw.z(), uvw.y() / uvw.z(), rect.z());
}

Calibration Calibration::synthetic(int image_width, int image_height) {
  Calibration c;
  const double f = image_width / 2.0;
  c.p2 << f, 0, image_width / 2.0, 0,  //
      0, f, image_height / 2.0, 0,     //
      0, 0, 1, 0;
  // x_cam = -y_lidar, y_cam = -z_lidar, z_cam = x_lidar
  c.velo_to_cam << 0, -1, 0, 0,  //
      0, 0, -1, 0,               //
      1, 0, 0, 0;
  return c;
}

GroundTruth SceneSample::gt_2d() const {
  GroundTruth out{BoxMode::Planar2D, Matrix(0, 4), {}, gt.num_classes};
  std::vector<Eigen::RowVectorXd> rows;
  for (std::size_t m = 0; m < boxes_2d.size(); ++m) {
    if (!boxes_2d[m].valid()) continue;
    rows.push_back(to_row(boxes_2d[m]));
    out.labels.push_back(gt.labels[m]);
  }
  out.boxes.resize(static_cast<Eigen::Index>(rows.size()), 4);
  for (std::size_t r = 0; r < rows.size(); ++r) out.boxes.row(static_cast<Eigen::Index>(r)) = rows[r];
  return out;
}

std::vector<int> count_points_in_boxes(const PointCloud& cloud, const GroundTruth& gt, double margin) {
  std::vector<int> counts(static_cast<std::size_t>(gt.size()), 0);
  for (Eigen::Index m = 0; m < gt.size(); ++m) {
    const Box3D box = to_box3d(gt.boxes.row(m));
    for (const auto& p : cloud.points) {
      if (box.contains(p, margin)) ++counts[static_cast<std::size_t>(m)];
    }
  }
  return counts;
}

void SynthConfig::validate() const {
  if (!(surface_density > 0)) throw ConfigError("synth: surface density must be positive");
  if (image_width <= 0 || image_height <= 0) throw ConfigError("synth: image size must be positive");
  if (!(min_x < max_x)) throw ConfigError("synth: empty forward range");
  for (const auto& c : classes) {
    if (c.min_count < 0 || c.max_count < c.min_count) throw ConfigError("synth: bad class count range");
  }
}

namespace {

constexpr double kContainMargin = 0.01;

std::vector<Eigen::Vector2d> convex_hull(std::vector<Eigen::Vector2d> pts) {
  std::sort(pts.begin(), pts.end(), [](const auto& a, const auto& b) {
    return a.x() < b.x() || (a.x() == b.x() && a.y() < b.y());
  });
  if (pts.size() < 3) return pts;
  auto turn = [](const Eigen::Vector2d& o, const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
    return (a.x() - o.x()) * (b.y() - o.y()) - (a.y() - o.y()) * (b.x() - o.x());
  };
  std::vector<Eigen::Vector2d> hull(2 * pts.size());
  std::size_t k = 0;
  for (const auto& p : pts) {
    while (k >= 2 && turn(hull[k - 2], hull[k - 1], p) <= 0) --k;
    hull[k++] = p;
  }
  for (std::size_t i = pts.size() - 1, t = k + 1; i-- > 0;) {
    while (k >= t && turn(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);
  return hull;
}

bool inside_convex(const std::vector<Eigen::Vector2d>& hull, const Eigen::Vector2d& p) {
  if (hull.size() < 3) return false;
  for (std::size_t i = 0, j = hull.size() - 1; i < hull.size(); j = i++) {
    const Eigen::Vector2d& a = hull[j];
    const Eigen::Vector2d& b = hull[i];
    if ((b.x() - a.x()) * (p.y() - a.y()) - (b.y() - a.y()) * (p.x() - a.x()) < 0) return false;
  }
  return true;
}

// Image-space footprint of a box, clipped to the image. Invalid (zero size)
// when any corner is behind the camera or nothing remains after clipping.
Box2D project_box(const Box3D& box, const Calibration& calib, int width, int height,
                  std::vector<Eigen::Vector2d>* projected = nullptr) {
  double u0 = 1e300, v0 = 1e300, u1 = -1e300, v1 = -1e300;
  for (const auto& c : corners_of(box)) {
    const auto uvz = calib.project(c);
    if (!uvz) return {0, 0, 0, 0};
    if (projected != nullptr) projected->emplace_back(uvz->x(), uvz->y());
    u0 = std::min(u0, uvz->x());
    u1 = std::max(u1, uvz->x());
    v0 = std::min(v0, uvz->y());
    v1 = std::max(v1, uvz->y());
  }
  u0 = std::clamp(u0, 0.0, static_cast<double>(width));
  u1 = std::clamp(u1, 0.0, static_cast<double>(width));
  v0 = std::clamp(v0, 0.0, static_cast<double>(height));
  v1 = std::clamp(v1, 0.0, static_cast<double>(height));
  if (u1 - u0 < 1.0 || v1 - v0 < 1.0) return {0, 0, 0, 0};
  return {(u0 + u1) / 2, (v0 + v1) / 2, u1 - u0, v1 - v0};
}

void sample_box_surface(const Box3D& box, double density, std::mt19937_64& rng, std::vector<Eigen::Vector3d>& out) {
  std::uniform_real_distribution<double> unit(-0.5, 0.5);
  const double c = std::cos(box.theta);
  const double s = std::sin(box.theta);
  auto emit = [&](double lx, double ly, double lz) {
    out.emplace_back(box.cx + c * lx - s * ly, box.cy + s * lx + c * ly, box.cz + lz);
  };
  auto count = [&](double area) { return std::max(1, static_cast<int>(std::lround(density * area))); };
  // Top face and the four sides; the bottom rests on the ground.
  for (int i = 0, n = count(box.l * box.w); i < n; ++i) emit(unit(rng) * box.l, unit(rng) * box.w, box.h / 2);
  for (int side : {-1, 1}) {
    for (int i = 0, n = count(box.l * box.h); i < n; ++i) emit(unit(rng) * box.l, side * box.w / 2, unit(rng) * box.h);
    for (int i = 0, n = count(box.w * box.h); i < n; ++i) emit(side * box.l / 2, unit(rng) * box.w, unit(rng) * box.h);
  }
}

std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

Rgb8Image render_synthetic_image(const SynthConfig& cfg, const Calibration& calib, const GroundTruth& gt,
                                 std::uint64_t seed) {
  const int w = cfg.image_width;
  const int h = cfg.image_height;
  Rgb8Image img{h, w, std::vector<std::uint8_t>(static_cast<std::size_t>(w) * h * 3)};
  const double horizon = calib.p2(1, 2);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::uint64_t noise = mix(seed ^ (static_cast<std::uint64_t>(y) << 32) ^ static_cast<std::uint64_t>(x));
      const int jitter = static_cast<int>(noise % 17) - 8;
      std::array<int, 3> rgb = y < horizon ? std::array<int, 3>{150, 185, 215} : std::array<int, 3>{95, 100, 92};
      if (y >= horizon && ((x / 8 + y / 4) % 2 == 0)) rgb = {105, 108, 98};
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = static_cast<std::uint8_t>(std::clamp(rgb[c] + jitter, 0, 255));
    }
  }

  std::vector<Eigen::Index> order(static_cast<std::size_t>(gt.size()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  auto dist = [&](Eigen::Index m) { return std::hypot(gt.boxes(m, 0), gt.boxes(m, 1)); };
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return dist(a) > dist(b); });

  static constexpr std::array<std::array<int, 3>, kNumClasses> kColors = {{{40, 80, 210}, {215, 55, 45}}};
  for (Eigen::Index m : order) {
    std::vector<Eigen::Vector2d> projected;
    const Box2D bb = project_box(to_box3d(gt.boxes.row(m)), calib, w, h, &projected);
    if (!bb.valid()) continue;
    const auto hull = convex_hull(projected);
    const double shade = std::clamp(1.15 - dist(m) / 60.0, 0.5, 1.0);
    const auto& color = kColors[static_cast<std::size_t>(gt.labels[static_cast<std::size_t>(m)])];
    const int y0 = std::max(0, static_cast<int>(std::floor(bb.cy - bb.h / 2)));
    const int y1 = std::min(h - 1, static_cast<int>(std::ceil(bb.cy + bb.h / 2)));
    const int x0 = std::max(0, static_cast<int>(std::floor(bb.cx - bb.w / 2)));
    const int x1 = std::min(w - 1, static_cast<int>(std::ceil(bb.cx + bb.w / 2)));
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        if (!inside_convex(hull, {x + 0.5, y + 0.5})) continue;
        for (int c = 0; c < 3; ++c) img.at(y, x, c) = static_cast<std::uint8_t>(std::lround(color[c] * shade));
      }
    }
  }
  return img;
}

SceneSample generate_scene(const SynthConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);

  SceneSample s;
  s.scene_id = std::to_string(seed);
  s.calib = Calibration::synthetic(cfg.image_width, cfg.image_height);

  std::vector<Box3D> boxes;
  std::vector<int> labels;
  for (int cls = 0; cls < kNumClasses; ++cls) {
    const ClassPrior& prior = cfg.classes[static_cast<std::size_t>(cls)];
    std::uniform_int_distribution<int> count_dist(prior.min_count, prior.max_count);
    const int wanted = count_dist(rng);
    for (int k = 0; k < wanted; ++k) {
      bool placed = false;
      for (int trial = 0; trial < 1000 && !placed; ++trial) {
        Box3D b;
        b.l = prior.size_mean[0] + prior.size_jitter[0] * (2 * unit(rng) - 1);
        b.w = prior.size_mean[1] + prior.size_jitter[1] * (2 * unit(rng) - 1);
        b.h = prior.size_mean[2] + prior.size_jitter[2] * (2 * unit(rng) - 1);
        b.cx = cfg.min_x + (cfg.max_x - cfg.min_x) * unit(rng);
        const double y_lim = std::min(cfg.max_abs_y, cfg.lateral_fov * b.cx);
        b.cy = y_lim * (2 * unit(rng) - 1);
        b.cz = cfg.ground_z + b.h / 2;
        b.theta = wrap_angle(2 * kPi * unit(rng) - kPi);
        bool clear = true;
        for (const Box3D& other : boxes) {
          if (iou_bev(b, other) >= 0.05) {
            clear = false;
            break;
          }
        }
        if (!clear) continue;
        if (!project_box(b, s.calib, cfg.image_width, cfg.image_height).valid()) continue;
        boxes.push_back(b);
        labels.push_back(cls);
        placed = true;
      }
      if (!placed) s.placement_shortfall = true;
    }
  }

  s.gt = GroundTruth{BoxMode::Spatial3D, Matrix(static_cast<Eigen::Index>(boxes.size()), 7), labels, kNumClasses};
  for (std::size_t m = 0; m < boxes.size(); ++m) s.gt.boxes.row(static_cast<Eigen::Index>(m)) = to_row(boxes[m]);

  auto in_any_box = [&](const Eigen::Vector3d& p, double margin) {
    return std::any_of(boxes.begin(), boxes.end(), [&](const Box3D& b) { return b.contains(p, margin); });
  };

  auto& pts = s.cloud.points;
  for (const Box3D& b : boxes) sample_box_surface(b, cfg.surface_density, rng, pts);
  const VoxelGeometry& range = cfg.range;
  for (int i = 0; i < cfg.ground_points; ++i) {
    const Eigen::Vector3d p(range.range_min.x() + (range.range_max.x() - range.range_min.x()) * unit(rng),
                            range.range_min.y() + (range.range_max.y() - range.range_min.y()) * unit(rng),
                            cfg.ground_z + cfg.ground_noise * normal(rng));
    if (!in_any_box(p, 0.05)) pts.push_back(p);
  }
  for (int k = 0; k < cfg.clutter_poles; ++k) {
    const double px = cfg.min_x + (cfg.max_x - cfg.min_x) * unit(rng);
    const double py = cfg.max_abs_y * (2 * unit(rng) - 1);
    for (int i = 0; i < cfg.points_per_pole; ++i) {
      const Eigen::Vector3d p(px + 0.05 * normal(rng), py + 0.05 * normal(rng), cfg.ground_z + 2.5 * unit(rng));
      if (!in_any_box(p, 0.05)) pts.push_back(p);
    }
  }
  std::shuffle(pts.begin(), pts.end(), rng);

  for (const Box3D& b : boxes) s.boxes_2d.push_back(project_box(b, s.calib, cfg.image_width, cfg.image_height));
  s.point_counts = count_points_in_boxes(s.cloud, s.gt, kContainMargin);
  s.image = render_synthetic_image(cfg, s.calib, s.gt, mix(seed));
  return s;
}

SceneSample flip_scene(const SceneSample& in) {
  SceneSample s = in;
  for (auto& p : s.cloud.points) p.y() = -p.y();
  for (Eigen::Index m = 0; m < s.gt.size(); ++m) {
    s.gt.boxes(m, 1) = -s.gt.boxes(m, 1);
    s.gt.boxes(m, 6) = wrap_angle(-s.gt.boxes(m, 6));
  }
  const int w = s.image.width;
  for (int y = 0; y < s.image.height; ++y) {
    for (int x = 0; x < w / 2; ++x) {
      for (int c = 0; c < 3; ++c) std::swap(s.image.at(y, x, c), s.image.at(y, w - 1 - x, c));
    }
  }
  for (auto& b : s.boxes_2d) {
    if (b.valid()) b.cx = w - b.cx;
  }
  return s;
}

SceneSample augment_scene(const SceneSample& in, const AugmentConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  // Every draw happens regardless of the outcome so one switch does not shift
  // the random stream of the others.
  const bool do_flip = unit(rng) < cfg.flip_prob;
  const bool do_rotate = unit(rng) < cfg.rotate_prob;
  const double angle = cfg.rotate_max * (2 * unit(rng) - 1);
  const bool do_scale = unit(rng) < cfg.scale_prob;
  const double factor = cfg.scale_min + (cfg.scale_max - cfg.scale_min) * unit(rng);
  const bool do_translate = unit(rng) < cfg.translate_prob;
  const Eigen::Vector3d shift(cfg.translate_std * normal(rng), cfg.translate_std * normal(rng),
                              cfg.translate_std * normal(rng));

  SceneSample s = do_flip ? flip_scene(in) : in;
  auto transform = [&](Eigen::Vector3d p) {
    if (do_rotate) {
      const double c = std::cos(angle), sn = std::sin(angle);
      p = Eigen::Vector3d(c * p.x() - sn * p.y(), sn * p.x() + c * p.y(), p.z());
    }
    if (do_scale) p *= factor;
    if (do_translate) p += shift;
    return p;
  };
  for (auto& p : s.cloud.points) p = transform(p);
  for (Eigen::Index m = 0; m < s.gt.size(); ++m) {
    const Eigen::Vector3d c = transform(Eigen::Vector3d(s.gt.boxes(m, 0), s.gt.boxes(m, 1), s.gt.boxes(m, 2)));
    s.gt.boxes(m, 0) = c.x();
    s.gt.boxes(m, 1) = c.y();
    s.gt.boxes(m, 2) = c.z();
    if (do_scale) {
      for (int k = 3; k < 6; ++k) s.gt.boxes(m, k) *= factor;
    }
    if (do_rotate) s.gt.boxes(m, 6) = wrap_angle(s.gt.boxes(m, 6) + angle);
  }
  if (cfg.shuffle_points) std::shuffle(s.cloud.points.begin(), s.cloud.points.end(), rng);
  return s;
}

}  // namespace fvit
