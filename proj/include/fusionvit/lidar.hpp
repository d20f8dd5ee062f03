#pragma once

#include <compare>
#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "fusionvit/camera.hpp"
#include "fusionvit/encoder.hpp"

namespace fvit {

struct PointCloud {
  std::vector<Eigen::Vector3d> points;

  std::size_t size() const { return points.size(); }
};

/// Axis-aligned detection range [min, max) and per-axis cell side lengths.
struct VoxelGeometry {
  Eigen::Vector3d voxel_size{0.16, 0.16, 0.16};
  Eigen::Vector3d range_min{2.0, -30.08, -3.0};
  Eigen::Vector3d range_max{46.8, 30.08, 1.0};

  bool in_range(const Eigen::Vector3d& p) const;
};

struct CellIndex {
  int i = 0, j = 0, k = 0;
  auto operator<=>(const CellIndex&) const = default;
};

CellIndex cell_of(const VoxelGeometry& geometry, const Eigen::Vector3d& p);

/// Non-empty cells only, keyed (and therefore ordered) lexicographically.
struct VoxelGrid {
  VoxelGeometry geometry;
  std::map<CellIndex, std::vector<Eigen::Vector3d>> cells;

  std::size_t size() const { return cells.size(); }
};

/// Bins in-range points by floor((p - range_min) / voxel_size); drops the rest.
VoxelGrid voxelize(const PointCloud& cloud, const VoxelGeometry& geometry);

/// Cells holding more than `cap` points keep a uniform random subset of exactly
/// `cap` (original relative order kept); smaller cells are untouched.
VoxelGrid sample_points(const VoxelGrid& grid, int cap, std::uint64_t seed);

/// t x 6 rows (x, y, z, x - cx, y - cy, z - cz) around the cell centroid.
/// Throws ContractError on an empty cell.
Matrix augment(std::span<const Eigen::Vector3d> points);

/// Augmented points of several voxels stacked row-wise; segment[r] names the
/// voxel of row r.
struct VoxelBatch {
  Matrix points;
  std::vector<int> segment;
  std::vector<CellIndex> cells;
  std::vector<int> original_counts;

  int num_voxels() const { return static_cast<int>(cells.size()); }
};

struct LidarConfig {
  VoxelGeometry geometry;
  int max_points_per_voxel = 64;
  int max_voxels = 1024;
  std::vector<int> point_mlp_widths{256, 512, 512};
  int vfe_layers = 6;
  int vfe_width = 64;
  /// Normalize VFE activations with each scene's own statistics in eval mode
  /// as well, instead of the running averages.
  bool vfe_scene_statistics = false;
  EncoderConfig encoder{.depth = 12, .width = 768, .heads = 12, .mlp_hidden = 3072, .dropout = 0.3};
};

/// voxelize -> sample -> cap the voxel count (fewest-point voxels dropped first)
/// -> augment, in lexicographic cell order.
VoxelBatch prepare_voxels(const PointCloud& cloud, const LidarConfig& cfg, std::uint64_t seed);

/// Shared per-point MLP followed by K rounds of
/// {Linear + BatchNorm + SiLU, per-voxel max, concat pooled onto each point},
/// then a per-voxel max and a projection to the token width.
class VoxelFeatureEncoder {
 public:
  VoxelFeatureEncoder() = default;
  VoxelFeatureEncoder(ParamStore& store, const std::string& name, const LidarConfig& cfg);

  /// Returns num_voxels x width.
  Var operator()(Context& ctx, const Matrix& points, const std::vector<int>& segment, int num_voxels) const;
  /// Single voxel given as t x 6 augmented rows.
  Var encode_voxel(Context& ctx, const Matrix& voxel) const;

 private:
  Mlp point_mlp_;
  std::vector<Linear> fcn_;
  std::vector<BatchNorm> bn_;
  Linear projection_;
};

class LidarViT {
 public:
  LidarViT(ParamStore& store, const std::string& name, const LidarConfig& cfg, bool ablate_encoder = false);

  /// Throws EmptySceneError when no point falls inside the range.
  BranchOutput encode(Context& ctx, const PointCloud& cloud, std::uint64_t sample_seed) const;
  BranchOutput encode(Context& ctx, const VoxelBatch& batch) const;
  const VoxelFeatureEncoder& vfe() const { return vfe_; }
  const LidarConfig& config() const { return cfg_; }

 private:
  LidarConfig cfg_;
  VoxelFeatureEncoder vfe_;
  TokenEmbedding embed_;
  EncoderStage encoder_;
  LayerNorm norm_;
};

}  // namespace fvit
