#pragma once

#include <memory>
#include <optional>

#include "fusionvit/camera.hpp"
#include "fusionvit/config.hpp"
#include "fusionvit/data.hpp"
#include "fusionvit/detection.hpp"
#include "fusionvit/fusion.hpp"
#include "fusionvit/lidar.hpp"

namespace fvit {

/// Camera branch with a 2D head, lidar branch with a 3D head, or both
/// branches fused by MixViT with a 3D head, depending on the mode. Parameter
/// names are prefixed camera., lidar., mix. and head.
class FusionViT {
 public:
  FusionViT(const ModelConfig& cfg, TrainMode mode, std::uint64_t seed);

  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }
  const ModelConfig& config() const { return cfg_; }
  TrainMode mode() const { return mode_; }
  BoxMode box_mode() const { return head_.mode(); }
  const BoxCoder& coder() const { return box_mode() == BoxMode::Spatial3D ? cfg_.coder3d : cfg_.coder2d; }

  /// Raw head outputs for one scene. `sample_seed` drives the per-voxel point
  /// sampling.
  HeadOutput forward(Context& ctx, const SceneSample& s, std::uint64_t sample_seed) const;

  /// Training targets for the model's box mode (2D targets are the visible
  /// boxes only).
  GroundTruth targets(const SceneSample& s) const;
  /// In-box point counts aligned with targets(s).
  std::vector<int> target_point_counts(const SceneSample& s) const;

  /// Eval-mode inference followed by per-class NMS.
  DetectionSet predict(const SceneSample& s, std::uint64_t sample_seed, double nms_threshold, int max_out) const;

 private:
  ModelConfig cfg_;
  TrainMode mode_;
  ParamStore store_;
  std::optional<CameraViT> camera_;
  std::optional<LidarViT> lidar_;
  std::optional<MixViT> mix_;
  DetectionHead head_;
};

ImageTensor prepare_image(const Rgb8Image& img, const CameraConfig& cfg);

}  // namespace fvit
