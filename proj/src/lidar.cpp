#include "fusionvit/lidar.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "fusionvit/errors.hpp"

namespace fvit {

bool VoxelGeometry::in_range(const Eigen::Vector3d& p) const {
  for (int a = 0; a < 3; ++a) {
    if (!(p[a] >= range_min[a] && p[a] < range_max[a])) return false;
  }
  return true;
}

CellIndex cell_of(const VoxelGeometry& g, const Eigen::Vector3d& p) {
  return {static_cast<int>(std::floor((p.x() - g.range_min.x()) / g.voxel_size.x())),
          static_cast<int>(std::floor((p.y() - g.range_min.y()) / g.voxel_size.y())),
          static_cast<int>(std::floor((p.z() - g.range_min.z()) / g.voxel_size.z()))};
}

VoxelGrid voxelize(const PointCloud& cloud, const VoxelGeometry& geometry) {
  if ((geometry.voxel_size.array() <= 0.0).any()) throw ConfigError("voxel sizes must be positive");
  VoxelGrid grid{geometry, {}};
  for (const auto& p : cloud.points) {
    if (!geometry.in_range(p)) continue;
    grid.cells[cell_of(geometry, p)].push_back(p);
  }
  return grid;
}

VoxelGrid sample_points(const VoxelGrid& grid, int cap, std::uint64_t seed) {
  if (cap < 1) throw ConfigError("sampling cap T must be >= 1");
  VoxelGrid out{grid.geometry, {}};
  std::mt19937_64 rng(seed);
  for (const auto& [cell, pts] : grid.cells) {
    if (static_cast<int>(pts.size()) <= cap) {
      out.cells.emplace(cell, pts);
      continue;
    }
    std::vector<Eigen::Vector3d> picked;
    picked.reserve(static_cast<std::size_t>(cap));
    std::sample(pts.begin(), pts.end(), std::back_inserter(picked), cap, rng);
    out.cells.emplace(cell, std::move(picked));
  }
  return out;
}

Matrix augment(std::span<const Eigen::Vector3d> points) {
  if (points.empty()) throw ContractError("augment: empty voxel");
  Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
  for (const auto& p : points) centroid += p;
  centroid /= static_cast<double>(points.size());
  Matrix out(static_cast<Eigen::Index>(points.size()), 6);
  for (std::size_t r = 0; r < points.size(); ++r) {
    const auto row = static_cast<Eigen::Index>(r);
    out.block<1, 3>(row, 0) = points[r].transpose();
    out.block<1, 3>(row, 3) = (points[r] - centroid).transpose();
  }
  return out;
}

VoxelBatch prepare_voxels(const PointCloud& cloud, const LidarConfig& cfg, std::uint64_t seed) {
  const VoxelGrid raw = voxelize(cloud, cfg.geometry);
  std::vector<std::pair<CellIndex, int>> counts;
  counts.reserve(raw.size());
  for (const auto& [cell, pts] : raw.cells) counts.emplace_back(cell, static_cast<int>(pts.size()));

  VoxelGrid grid = raw;
  if (static_cast<int>(counts.size()) > cfg.max_voxels) {
    std::vector<std::size_t> order(counts.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    // Most points first; lexicographic cell order breaks ties.
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return counts[a].second > counts[b].second; });
    for (std::size_t r = static_cast<std::size_t>(cfg.max_voxels); r < order.size(); ++r) {
      grid.cells.erase(counts[order[r]].first);
    }
  }
  grid = sample_points(grid, cfg.max_points_per_voxel, seed);

  VoxelBatch batch;
  Eigen::Index total = 0;
  for (const auto& [_, pts] : grid.cells) total += static_cast<Eigen::Index>(pts.size());
  batch.points.resize(total, 6);
  Eigen::Index at = 0;
  int v = 0;
  for (const auto& [cell, pts] : grid.cells) {
    const Matrix aug = augment(pts);
    batch.points.middleRows(at, aug.rows()) = aug;
    at += aug.rows();
    batch.segment.insert(batch.segment.end(), pts.size(), v++);
    batch.cells.push_back(cell);
    batch.original_counts.push_back(static_cast<int>(raw.cells.at(cell).size()));
  }
  return batch;
}

VoxelFeatureEncoder::VoxelFeatureEncoder(ParamStore& store, const std::string& name, const LidarConfig& cfg) {
  if (cfg.point_mlp_widths.empty()) throw ConfigError("lidar point MLP needs at least one width");
  if (cfg.vfe_layers < 1 || cfg.vfe_width < 1) throw ConfigError("VFE needs K >= 1 layers of positive width");
  std::vector<int> hidden(cfg.point_mlp_widths.begin(), cfg.point_mlp_widths.end() - 1);
  point_mlp_ = Mlp(store, name + ".point_mlp", 6, hidden, cfg.point_mlp_widths.back(), Activation::Gelu,
                   cfg.encoder.dropout);
  Eigen::Index in = cfg.point_mlp_widths.back();
  for (int k = 0; k < cfg.vfe_layers; ++k) {
    const std::string p = name + ".fcn" + std::to_string(k);
    fcn_.emplace_back(store, p + ".linear", in, cfg.vfe_width);
    bn_.emplace_back(store, p + ".bn", cfg.vfe_width, cfg.vfe_scene_statistics);
    in = 2 * cfg.vfe_width;
  }
  projection_ = Linear(store, name + ".projection", in, cfg.encoder.width);
}

Var VoxelFeatureEncoder::operator()(Context& ctx, const Matrix& points, const std::vector<int>& segment,
                                    int num_voxels) const {
  if (num_voxels < 1 || points.rows() == 0) throw ContractError("vfe: no voxels to encode");
  Var h = ag::gelu(point_mlp_(ctx, ctx.tape.constant(points)));
  for (std::size_t k = 0; k < fcn_.size(); ++k) {
    const Var f = ag::silu(bn_[k](ctx, fcn_[k](ctx, h)));
    const Var pooled = ag::segment_max(f, segment, num_voxels);
    h = ag::concat_cols({f, ag::gather_rows(pooled, segment)});
  }
  return projection_(ctx, ag::segment_max(h, segment, num_voxels));
}

Var VoxelFeatureEncoder::encode_voxel(Context& ctx, const Matrix& voxel) const {
  if (voxel.rows() == 0) throw ContractError("vfe: empty voxel");
  return (*this)(ctx, voxel, std::vector<int>(static_cast<std::size_t>(voxel.rows()), 0), 1);
}

LidarViT::LidarViT(ParamStore& store, const std::string& name, const LidarConfig& cfg, bool ablate_encoder)
    : cfg_(cfg),
      vfe_(store, name + ".vfe", cfg),
      embed_(store, name + ".embed", cfg.encoder.width, cfg.encoder.width, cfg.max_voxels),
      encoder_(store, name + ".encoder", cfg.encoder, ablate_encoder),
      norm_(store, name + ".norm", cfg.encoder.width) {}

BranchOutput LidarViT::encode(Context& ctx, const PointCloud& cloud, std::uint64_t sample_seed) const {
  return encode(ctx, prepare_voxels(cloud, cfg_, sample_seed));
}

BranchOutput LidarViT::encode(Context& ctx, const VoxelBatch& batch) const {
  if (batch.num_voxels() == 0) throw EmptySceneError("lidar: no points inside the detection range");
  const Var features = vfe_(ctx, batch.points, batch.segment, batch.num_voxels());
  const TokenSequence z = encoder_(ctx, embed_(ctx, features));
  return {sequence_features(ctx, z, norm_), readout(ctx, z, norm_)};
}

}  // namespace fvit
