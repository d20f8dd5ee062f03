#include "fusionvit/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <tuple>

#include "fusionvit/errors.hpp"

namespace fvit {

const char* to_string(OverlapKind k) {
  switch (k) {
    case OverlapKind::Bev:
      return "bev";
    case OverlapKind::Spatial:
      return "3d";
    case OverlapKind::Planar:
      return "2d";
  }
  return "?";
}

std::vector<Difficulty> default_difficulties() {
  return {{"easy", 100}, {"moderate", 30}, {"hard", 10}, {"overall", 0}};
}

std::vector<ScoredBox> scored_boxes(const DetectionSet& dets) {
  std::vector<ScoredBox> out;
  out.reserve(static_cast<std::size_t>(dets.size()));
  for (Eigen::Index i = 0; i < dets.size(); ++i) {
    out.push_back({dets.boxes.row(i), dets.label(i), dets.confidence(i)});
  }
  return out;
}

double interpolated_ap_r40(std::span<const double> recall, std::span<const double> precision) {
  if (recall.size() != precision.size()) throw ContractError("recall/precision length mismatch");
  // Suffix maximum of precision, so interp(r) is one lookup per sample point.
  std::vector<double> best(precision.size() + 1, 0.0);
  for (std::size_t i = precision.size(); i-- > 0;) best[i] = std::max(best[i + 1], precision[i]);
  double sum = 0;
  std::size_t pos = 0;
  for (int k = 1; k <= 40; ++k) {
    const double r = k / 40.0;
    while (pos < recall.size() && recall[pos] < r - 1e-12) ++pos;
    sum += best[pos];
  }
  return sum / 40.0;
}

double heading_accuracy(double pred_theta, double gt_theta) {
  return 1.0 - std::abs(wrap_angle(pred_theta - gt_theta)) / kPi;
}

namespace {

double overlap(OverlapKind kind, const Eigen::RowVectorXd& a, const Eigen::RowVectorXd& b) {
  switch (kind) {
    case OverlapKind::Bev:
      return iou_bev(to_box3d(a), to_box3d(b));
    case OverlapKind::Spatial:
      return iou_3d(to_box3d(a), to_box3d(b));
    case OverlapKind::Planar:
      return iou_2d(to_box2d(a), to_box2d(b));
  }
  return 0;
}

}  // namespace

ApResult average_precision(std::span<const SceneResult> scenes, int cls, OverlapKind kind, double threshold,
                           int min_points) {
  struct Candidate {
    double score;
    std::size_t scene;
    std::size_t index;
  };
  std::vector<Candidate> order;
  std::vector<std::vector<bool>> ignored(scenes.size());
  std::vector<std::vector<bool>> taken(scenes.size());
  ApResult res;
  for (std::size_t s = 0; s < scenes.size(); ++s) {
    const SceneResult& sc = scenes[s];
    ignored[s].assign(static_cast<std::size_t>(sc.gt.size()), false);
    taken[s].assign(static_cast<std::size_t>(sc.gt.size()), false);
    for (std::size_t m = 0; m < static_cast<std::size_t>(sc.gt.size()); ++m) {
      if (sc.gt.labels[m] != cls) continue;
      ignored[s][m] = !sc.point_counts.empty() && sc.point_counts[m] < min_points;
      if (!ignored[s][m]) ++res.num_gt;
    }
    for (std::size_t i = 0; i < sc.detections.size(); ++i) {
      if (sc.detections[i].label == cls) order.push_back({sc.detections[i].score, s, i});
    }
  }
  std::sort(order.begin(), order.end(), [](const Candidate& a, const Candidate& b) {
    return std::tie(b.score, a.scene, a.index) < std::tie(a.score, b.scene, b.index);
  });

  double tp = 0, fp = 0, weighted_tp = 0;
  for (const Candidate& c : order) {
    const SceneResult& sc = scenes[c.scene];
    const ScoredBox& det = sc.detections[c.index];
    double best = threshold;
    int best_m = -1;
    for (Eigen::Index m = 0; m < sc.gt.size(); ++m) {
      const auto mi = static_cast<std::size_t>(m);
      if (sc.gt.labels[mi] != cls || taken[c.scene][mi]) continue;
      const double o = overlap(kind, det.box, sc.gt.boxes.row(m));
      if (o >= best) {
        if (best_m < 0 || o > best) {
          best = o;
          best_m = static_cast<int>(m);
        }
      }
    }
    if (best_m >= 0) {
      const auto mi = static_cast<std::size_t>(best_m);
      taken[c.scene][mi] = true;
      if (ignored[c.scene][mi]) continue;
      tp += 1;
      weighted_tp += kind == OverlapKind::Planar ? 1.0 : heading_accuracy(det.box(6), sc.gt.boxes(best_m, 6));
    } else {
      fp += 1;
    }
    res.curve.recall.push_back(res.num_gt > 0 ? tp / res.num_gt : 0.0);
    res.curve.precision.push_back(tp / (tp + fp));
    res.curve.heading_precision.push_back(weighted_tp / (tp + fp));
  }
  res.true_positives = static_cast<int>(tp);
  res.false_positives = static_cast<int>(fp);
  if (res.num_gt > 0) {
    res.ap = interpolated_ap_r40(res.curve.recall, res.curve.precision);
    res.aph = interpolated_ap_r40(res.curve.recall, res.curve.heading_precision);
  }
  return res;
}

const MetricCell* EvalReport::find(OverlapKind kind, const std::string& difficulty, int cls) const {
  for (const auto& c : cells) {
    if (c.kind == kind && c.difficulty == difficulty && c.cls == cls) return &c;
  }
  return nullptr;
}

double EvalReport::mean_ap(OverlapKind kind, const std::string& difficulty, bool heading) const {
  double sum = 0;
  int n = 0;
  for (const auto& c : cells) {
    if (c.kind != kind || c.difficulty != difficulty || c.result.num_gt == 0) continue;
    sum += heading ? c.result.aph : c.result.ap;
    ++n;
  }
  return n > 0 ? sum / n : 0.0;
}

bool EvalReport::operator==(const EvalReport& o) const {
  if (num_scenes != o.num_scenes || cells.size() != o.cells.size()) return false;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const auto& a = cells[i];
    const auto& b = o.cells[i];
    if (a.kind != b.kind || a.difficulty != b.difficulty || a.cls != b.cls || a.threshold != b.threshold) return false;
    const auto& x = a.result;
    const auto& y = b.result;
    if (x.ap != y.ap || x.aph != y.aph || x.num_gt != y.num_gt || x.true_positives != y.true_positives ||
        x.false_positives != y.false_positives || x.curve.recall != y.curve.recall ||
        x.curve.precision != y.curve.precision || x.curve.heading_precision != y.curve.heading_precision) {
      return false;
    }
  }
  return true;
}

EvalReport evaluate_scenes(std::span<const SceneResult> scenes, int num_classes, const EvalThresholds& thresholds) {
  if (scenes.empty()) throw ContractError("evaluation needs at least one scene");
  if (static_cast<int>(thresholds.per_class.size()) < num_classes) {
    throw ConfigError("one IoU threshold per class required");
  }
  const bool planar = scenes.front().gt.mode == BoxMode::Planar2D;
  const std::vector<OverlapKind> kinds =
      planar ? std::vector<OverlapKind>{OverlapKind::Planar} : std::vector<OverlapKind>{OverlapKind::Bev, OverlapKind::Spatial};
  EvalReport report;
  report.num_scenes = static_cast<int>(scenes.size());
  for (OverlapKind kind : kinds) {
    for (const Difficulty& d : thresholds.difficulties) {
      for (int cls = 0; cls < num_classes; ++cls) {
        const double thr = thresholds.per_class[static_cast<std::size_t>(cls)];
        report.cells.push_back({kind, d.name, cls, thr, average_precision(scenes, cls, kind, thr, d.min_points)});
      }
    }
  }
  return report;
}

}  // namespace fvit
