#pragma once

#include <span>
#include <string>
#include <vector>

#include "fusionvit/detection.hpp"

namespace fvit {

enum class OverlapKind { Bev, Spatial, Planar };

const char* to_string(OverlapKind k);

/// Ground truth with fewer in-box points than `min_points` is ignored: it
/// counts neither as a miss nor, when matched, as a true positive.
struct Difficulty {
  std::string name;
  int min_points = 0;
};

/// easy >= 100, moderate >= 30, hard >= 10 points, plus an unfiltered bin.
std::vector<Difficulty> default_difficulties();

struct ScoredBox {
  Eigen::RowVectorXd box;
  int label = 0;
  double score = 0;
};

/// Real-class detections of a (post-NMS) set.
std::vector<ScoredBox> scored_boxes(const DetectionSet& dets);

struct SceneResult {
  std::vector<ScoredBox> detections;
  GroundTruth gt;
  std::vector<int> point_counts;  // per gt row; empty means "all counted"
};

struct PrCurve {
  std::vector<double> recall;
  std::vector<double> precision;
  /// Precision with every true positive weighted by its heading accuracy.
  std::vector<double> heading_precision;
};

struct ApResult {
  double ap = 0;
  double aph = 0;
  int num_gt = 0;
  int true_positives = 0;
  int false_positives = 0;
  PrCurve curve;
};

/// Mean of the interpolated precision max{p(r') : r' >= r} at r = 1/40 .. 40/40.
double interpolated_ap_r40(std::span<const double> recall, std::span<const double> precision);

/// 1 - |wrap(pred - gt)| / pi.
double heading_accuracy(double pred_theta, double gt_theta);

/// Greedy matching in descending score order (ties by scene, then detection
/// index): each detection takes the unmatched same-class gt of highest
/// overlap at or above `threshold`.
ApResult average_precision(std::span<const SceneResult> scenes, int cls, OverlapKind kind, double threshold,
                           int min_points = 0);

struct MetricCell {
  OverlapKind kind = OverlapKind::Spatial;
  std::string difficulty;
  int cls = 0;
  double threshold = 0;
  ApResult result;
};

struct EvalReport {
  std::vector<MetricCell> cells;
  int num_scenes = 0;
  double inference_ms = 0;  // mean per scene

  const MetricCell* find(OverlapKind kind, const std::string& difficulty, int cls) const;
  /// Mean AP (or APH) over classes that have ground truth in the bin.
  double mean_ap(OverlapKind kind, const std::string& difficulty, bool heading = false) const;
  bool operator==(const EvalReport&) const;
};

struct EvalThresholds {
  std::vector<double> per_class{0.7, 0.5};
  std::vector<Difficulty> difficulties = default_difficulties();
};

/// AP/APH for every class, difficulty and overlap kind suited to the box mode
/// (BEV and 3D for spatial boxes, image overlap for planar ones).
EvalReport evaluate_scenes(std::span<const SceneResult> scenes, int num_classes, const EvalThresholds& thresholds);

}  // namespace fvit
