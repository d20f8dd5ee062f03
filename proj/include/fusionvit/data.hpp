#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/LU>

#include "fusionvit/camera.hpp"
#include "fusionvit/detection.hpp"
#include "fusionvit/lidar.hpp"

namespace fvit {

inline constexpr int kNumClasses = 2;
/// Class 0 is vehicle-like (KITTI "Car"), class 1 pedestrian-like.
const char* class_name(int label);
std::optional<int> class_from_kitti(const std::string& type);

/// KITTI-style camera model: rectified projection P2, rectification R0_rect
/// and the lidar-to-camera rigid transform Tr_velo_to_cam.
struct Calibration {
  Eigen::Matrix<double, 3, 4> p2 = Eigen::Matrix<double, 3, 4>::Zero();
  Eigen::Matrix3d r0_rect = Eigen::Matrix3d::Identity();
  Eigen::Matrix<double, 3, 4> velo_to_cam = Eigen::Matrix<double, 3, 4>::Zero();

  Eigen::Vector3d lidar_to_rect(const Eigen::Vector3d& p) const;
  Eigen::Vector3d rect_to_lidar(const Eigen::Vector3d& p) const;
  /// (u, v, depth) of a lidar-frame point; nullopt behind the camera.
  std::optional<Eigen::Vector3d> project(const Eigen::Vector3d& lidar_point) const;

  /// Forward-looking pinhole at the lidar origin, focal = width / 2.
  static Calibration synthetic(int image_width, int image_height);
};

struct SceneSample {
  std::string scene_id;
  Rgb8Image image;
  PointCloud cloud;
  Calibration calib;
  GroundTruth gt;                 // 3D boxes in the lidar frame
  std::vector<Box2D> boxes_2d;    // image-space box per gt row
  std::vector<int> point_counts;  // lidar points inside each gt box
  bool placement_shortfall = false;

  /// 2D ground truth restricted to boxes visible in the image.
  GroundTruth gt_2d() const;
};

/// Points of `cloud` inside each gt box, inflated by `margin`.
std::vector<int> count_points_in_boxes(const PointCloud& cloud, const GroundTruth& gt, double margin = 0.0);

struct ClassPrior {
  int min_count = 0;
  int max_count = 0;
  std::array<double, 3> size_mean{1, 1, 1};  // l, w, h
  std::array<double, 3> size_jitter{0, 0, 0};
};

struct SynthConfig {
  std::array<ClassPrior, kNumClasses> classes{
      ClassPrior{1, 3, {4.0, 1.8, 1.55}, {0.4, 0.15, 0.15}},
      ClassPrior{0, 2, {0.8, 0.7, 1.75}, {0.1, 0.08, 0.1}},
  };
  double surface_density = 12.0;  // points per square metre of box surface
  int ground_points = 400;
  int clutter_poles = 3;
  int points_per_pole = 20;
  double ground_noise = 0.02;
  double ground_z = -1.7;
  double min_x = 6.0;
  double max_x = 32.0;
  double max_abs_y = 16.0;
  /// Lateral placement limit as a fraction of the forward distance.
  double lateral_fov = 0.6;
  int image_width = 128;
  int image_height = 64;
  VoxelGeometry range{{1.0, 1.0, 1.0}, {0.0, -20.0, -3.0}, {40.0, 20.0, 1.0}};

  void validate() const;
};

/// Deterministic per (cfg, seed).
SceneSample generate_scene(const SynthConfig& cfg, std::uint64_t seed);

/// Painter's-order render of the ground-truth boxes as filled convex quads.
Rgb8Image render_synthetic_image(const SynthConfig& cfg, const Calibration& calib, const GroundTruth& gt,
                                 std::uint64_t seed);

// --- KITTI formats --------------------------------------------------------

struct KittiLabel {
  std::string type;
  double truncation = 0;
  int occlusion = 0;
  double alpha = 0;
  std::array<double, 4> bbox{0, 0, 0, 0};  // left, top, right, bottom
  double height = 0, width = 0, length = 0;
  double x = 0, y = 0, z = 0;  // bottom centre, rectified camera frame
  double rotation_y = 0;

  bool operator==(const KittiLabel&) const = default;
};

std::vector<KittiLabel> read_kitti_labels(const std::filesystem::path& path);
void write_kitti_labels(const std::filesystem::path& path, const std::vector<KittiLabel>& labels);

/// float32 little-endian (x, y, z, intensity) records; intensity dropped.
PointCloud read_velodyne(const std::filesystem::path& path);
void write_velodyne(const std::filesystem::path& path, const PointCloud& cloud);

Calibration read_calibration(const std::filesystem::path& path);
void write_calibration(const std::filesystem::path& path, const Calibration& calib);

Rgb8Image read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Rgb8Image& img);

Box3D label_to_lidar_box(const KittiLabel& label, const Calibration& calib);
KittiLabel lidar_box_to_label(const Box3D& box, int label, const Box2D& box2d, const Calibration& calib);

/// Reads one KITTI frame; classes other than Car / Pedestrian are dropped.
SceneSample load_kitti(const std::filesystem::path& velodyne, const std::filesystem::path& label,
                       const std::filesystem::path& calib, const std::filesystem::path& image);

/// root/{velodyne,label_2,calib,image_2}/<id>.{bin,txt,txt,png}
struct KittiLayout {
  std::filesystem::path root;

  std::filesystem::path velodyne(const std::string& id) const { return root / "velodyne" / (id + ".bin"); }
  std::filesystem::path label(const std::string& id) const { return root / "label_2" / (id + ".txt"); }
  std::filesystem::path calib(const std::string& id) const { return root / "calib" / (id + ".txt"); }
  std::filesystem::path image(const std::string& id) const { return root / "image_2" / (id + ".png"); }

  /// Frame ids with a velodyne file, sorted.
  std::vector<std::string> frame_ids() const;
  SceneSample load(const std::string& id) const;
  void write(const SceneSample& sample) const;
};

// --- augmentation ---------------------------------------------------------

struct AugmentConfig {
  double flip_prob = 0.5;
  double rotate_prob = 0.5;
  double rotate_max = 0.7853981633974483;  // pi / 4
  double scale_prob = 0.5;
  double scale_min = 0.95;
  double scale_max = 1.05;
  double translate_prob = 0.5;
  double translate_std = 0.2;
  bool shuffle_points = true;
};

/// Mirror about the x-axis (y -> -y, heading -> -heading) plus a horizontal
/// image flip.
SceneSample flip_scene(const SceneSample& s);

/// Applies the configured random flip, yaw rotation, scale and translation to
/// points and boxes together, then shuffles point order.
SceneSample augment_scene(const SceneSample& s, const AugmentConfig& cfg, std::uint64_t seed);

}  // namespace fvit
