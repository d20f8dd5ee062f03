#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"

#include "fusionvit/config.hpp"
#include "fusionvit/metrics.hpp"
#include "fusionvit/model.hpp"

namespace fvit {

/// Synthetic scenes scene_seed, scene_seed + 1, ... or the frames of a KITTI
/// layout, optionally subsampled with the run seed.
std::vector<SceneSample> load_dataset(const DatasetConfig& cfg, std::uint64_t seed);

/// Adam with bias correction over the trainable parameters of a store.
class Adam {
 public:
  explicit Adam(const OptimizerConfig& cfg) : cfg_(cfg) {}
  /// Returns the global gradient norm before clipping.
  double step(ParamStore& store, double lr);
  long long steps_taken() const { return t_; }

 private:
  struct Moments {
    Matrix m;
    Matrix v;
  };
  OptimizerConfig cfg_;
  std::map<std::string, Moments> moments_;
  long long t_ = 0;
};

// --- checkpoints ----------------------------------------------------------

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct LoadedCheckpoint {
  RunConfig config;
  int step = 0;
  std::unique_ptr<FusionViT> model;
};

/// Binary: magic, version, mode, step, embedded JSON config, then every
/// parameter (name, shape, trainable flag, raw little-endian doubles).
void save_checkpoint(const std::filesystem::path& path, const FusionViT& model, const RunConfig& cfg, int step);
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

// --- training -------------------------------------------------------------

struct EvalPoint {
  int step = 0;
  double map = 0;
};

struct StepRecord {
  int step = 0;
  double loss = 0;
  LossBreakdown breakdown;  // summed over the batch, divided by batch size
};

struct TrainOptions {
  /// Branch initializers for TrainMode::FusionPretrained.
  std::filesystem::path camera_checkpoint;
  std::filesystem::path lidar_checkpoint;
  /// Where a diagnostic dump goes when the loss turns non-finite.
  std::filesystem::path dump_dir = ".";
  std::function<void(const StepRecord&)> on_step;
  std::function<void(const EvalPoint&)> on_eval;
};

struct TrainResult {
  std::unique_ptr<FusionViT> model;
  std::vector<StepRecord> steps;
  std::vector<EvalPoint> evals;
  /// First evaluated step whose mAP reached cfg.target_map, -1 if never.
  int steps_to_target = -1;
};

TrainResult train(const RunConfig& cfg, TrainMode mode, const std::vector<SceneSample>& scenes,
                  const TrainOptions& opts = {});

/// Point-sampling seed used for every inference pass.
inline constexpr std::uint64_t kEvalSampleSeed = 0;

EvalReport evaluate(const FusionViT& model, const std::vector<SceneSample>& scenes, const EvalConfig& cfg);

/// Overall mAP of the model's primary overlap (3D, or image overlap for the
/// camera-only model) with every class threshold set to `threshold`.
double target_map(const FusionViT& model, const std::vector<SceneSample>& scenes, const EvalConfig& cfg,
                  double threshold);

nlohmann::json to_json(const EvalReport& r);
std::string format_report(const EvalReport& r);

// --- ablations ------------------------------------------------------------

enum class AblationKind { FusionStrategy, ComponentRemoval };

const char* to_string(AblationKind k);
AblationKind ablation_kind_from_string(const std::string& s);

struct AblationRow {
  std::string name;
  EvalReport report;
};

struct AblationReport {
  AblationKind kind = AblationKind::FusionStrategy;
  std::vector<AblationRow> rows;
};

/// Trains and evaluates every variant from the same seed and step budget.
AblationReport run_ablation(AblationKind kind, const RunConfig& cfg, const std::vector<SceneSample>& scenes);

/// Rows of per-class 3D AP / APH (overall bin) plus mAP_BEV and mAP_3D.
std::string format_ablation(const AblationReport& r);
nlohmann::json to_json(const AblationReport& r);

// --- rendering ------------------------------------------------------------

struct RenderResult {
  std::filesystem::path bev;
  std::filesystem::path camera;
  int predictions_drawn = 0;
};

/// Bird's-eye point plot and camera image, ground truth in green and
/// post-NMS predictions scoring at least `min_score` in red. `model` may be
/// null (ground truth only). The bird's-eye raster covers `range` at 8 px/m.
RenderResult render_scene(const FusionViT* model, const SceneSample& s, const EvalConfig& cfg,
                          const VoxelGeometry& range, const std::filesystem::path& out_dir, double min_score = 0.5);

}  // namespace fvit
