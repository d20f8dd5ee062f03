#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "fusionvit/camera.hpp"
#include "fusionvit/data.hpp"
#include "fusionvit/detection.hpp"
#include "fusionvit/fusion.hpp"
#include "fusionvit/lidar.hpp"
#include "fusionvit/metrics.hpp"

namespace fvit {

enum class TrainMode { Camera2d, Lidar3d, Fusion, FusionPretrained };

const char* to_string(TrainMode m);
TrainMode train_mode_from_string(const std::string& s);

/// Components replaced by a width-preserving linear stand-in.
struct ComponentRemoval {
  bool camera = false;
  bool lidar = false;
  bool mix = false;
};

struct ModelConfig {
  CameraConfig camera;
  LidarConfig lidar;
  FusionConfig fusion;
  std::vector<int> head_hidden{512};
  int proposals = 256;
  double init_std = 0.02;
  /// Draw Linear weights with deviation 1 / sqrt(fan_in) instead of init_std.
  bool init_fan_in = false;
  BoxCoder coder3d{BoxMode::Spatial3D, {24.4, 0.0, -1.0}, {22.4, 30.0, 2.0}, {2.4, 1.25, 1.65}};
  BoxCoder coder2d{BoxMode::Planar2D, {621.0, 187.5}, {621.0, 187.5}, {60.0, 60.0}};
  ComponentRemoval removal;
};

struct OptimizerConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// Global gradient-norm clip; 0 disables.
  double grad_clip = 0.0;
  /// "constant", or "cosine" decay from lr to 0 over the step budget.
  std::string schedule = "constant";
  /// Linear ramp from 0 over this many steps.
  int warmup_steps = 0;

  /// Learning rate of optimizer step `step` (1-based) out of `total`.
  double lr_at(int step, int total) const;
};

struct DatasetConfig {
  std::string kind = "synthetic";  // synthetic | kitti
  std::filesystem::path root;      // kitti layout root
  int num_scenes = 20;             // synthetic scene count
  std::uint64_t scene_seed = 1000;
  /// Fraction of frames kept, drawn with `seed`; 1 keeps all.
  double subsample = 1.0;
  SynthConfig synth;
};

struct EvalConfig {
  EvalThresholds thresholds;
  double nms_threshold = 0.3;
  int max_detections = 256;
};

struct RunConfig {
  ModelConfig model;
  LossConfig loss;
  OptimizerConfig optimizer;
  DatasetConfig dataset;
  bool augment = false;
  AugmentConfig augmentation;
  EvalConfig eval;
  int steps = 1000;
  int batch_size = 1;
  std::uint64_t seed = 0;
  /// Evaluate on the training scenes every this many steps; 0 disables.
  int eval_every = 0;
  /// Stop early once the 3D (or 2D) overall mAP at `target_threshold` reaches
  /// `target_map`; 0 disables.
  double target_map = 0.0;
  double target_threshold = 0.5;

  /// Throws ConfigError on inconsistent widths or out-of-range values.
  void validate() const;
  bool operator==(const RunConfig& o) const;
};

nlohmann::json to_json(const RunConfig& cfg);
RunConfig run_config_from_json(const nlohmann::json& j);

RunConfig load_run_config(const std::filesystem::path& path);
void save_run_config(const std::filesystem::path& path, const RunConfig& cfg);

/// Reduced dimensions for single-CPU runs on the synthetic scenes.
RunConfig desk_config();

}  // namespace fvit
