#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "fusionvit/geometry.hpp"
#include "fusionvit/nn.hpp"

namespace fvit {

enum class BoxMode { Planar2D, Spatial3D };

/// Field count O per box: 7 (cx, cy, cz, l, w, h, theta) or 4 (cx, cy, w, h).
int box_fields(BoxMode mode);

/// Maps raw head outputs to box parameters:
///   center  = offset + scale * raw
///   size    = prior * exp(raw)
///   heading = raw (wrapped when stored in a DetectionSet)
struct BoxCoder {
  BoxMode mode = BoxMode::Spatial3D;
  std::vector<double> center_offset{0, 0, 0};
  std::vector<double> center_scale{1, 1, 1};
  std::vector<double> size_prior{1, 1, 1};

  int fields() const { return box_fields(mode); }
  int center_dims() const { return mode == BoxMode::Spatial3D ? 3 : 2; }
  int size_dims() const { return mode == BoxMode::Spatial3D ? 3 : 2; }
  bool has_heading() const { return mode == BoxMode::Spatial3D; }

  Matrix decode(const Matrix& raw) const;
  Matrix encode(const Matrix& boxes) const;
  void validate() const;
};

Box3D to_box3d(const Eigen::Ref<const Eigen::RowVectorXd>& row);
Box2D to_box2d(const Eigen::Ref<const Eigen::RowVectorXd>& row);
Eigen::RowVectorXd to_row(const Box3D& b);
Eigen::RowVectorXd to_row(const Box2D& b);

/// N predicted boxes with class probabilities over C + 1 classes; the last
/// column is "no object".
struct DetectionSet {
  BoxMode mode = BoxMode::Spatial3D;
  Matrix boxes;
  Matrix class_probs;

  Eigen::Index size() const { return boxes.rows(); }
  int num_classes() const { return static_cast<int>(class_probs.cols()) - 1; }
  Box3D box3d(Eigen::Index i) const { return to_box3d(boxes.row(i)); }
  Box2D box2d(Eigen::Index i) const { return to_box2d(boxes.row(i)); }
  /// Highest real-class probability and its class.
  double confidence(Eigen::Index i) const;
  int label(Eigen::Index i) const;
  DetectionSet select(std::span<const std::size_t> rows) const;
};

struct GroundTruth {
  BoxMode mode = BoxMode::Spatial3D;
  Matrix boxes;             // M x O
  std::vector<int> labels;  // class index in [0, C)
  int num_classes = 2;

  Eigen::Index size() const { return boxes.rows(); }
  Matrix one_hot() const;
};

/// Per-class greedy NMS over real-class confidences; survivors ordered by
/// confidence. Empty input gives empty output.
DetectionSet nms(const DetectionSet& dets, double iou_threshold, std::size_t max_out);

struct HeadOutput {
  Var box_raw;  // N x O
  Var logits;   // N x (C + 1)
};

/// Box and class MLP heads on a pooled readout vector.
class DetectionHead {
 public:
  DetectionHead() = default;
  DetectionHead(ParamStore& store, const std::string& name, Eigen::Index in, const std::vector<int>& hidden,
                int proposals, int num_classes, BoxMode mode);

  HeadOutput operator()(Context& ctx, const Var& readout) const;
  int proposals() const { return proposals_; }
  int num_classes() const { return num_classes_; }
  BoxMode mode() const { return mode_; }

 private:
  Mlp box_mlp_;
  Mlp class_mlp_;
  int proposals_ = 0;
  int num_classes_ = 0;
  BoxMode mode_ = BoxMode::Spatial3D;
};

/// Softmaxed class probabilities and decoded boxes, headings wrapped.
DetectionSet predict_heads(const Matrix& box_raw, const Matrix& logits, const BoxCoder& coder);

struct MatchWeights {
  double class_weight = 1.0;
  double box_weight = 1.0;
};

/// Minimum-cost assignment of every row to a distinct column (rows <= cols).
/// Returns the column of each row.
std::vector<int> hungarian(const Matrix& cost);

/// M x N cost: class_weight * (-p[label]) + box_weight * L1(box params), the
/// heading difference wrapped first.
Matrix matching_cost(const DetectionSet& preds, const GroundTruth& gt, const MatchWeights& w);

/// assignment[m] = prediction matched to ground-truth row m.
std::vector<int> match(const DetectionSet& preds, const GroundTruth& gt, const MatchWeights& w);

struct LossConfig {
  double lambda_cls = 1.0;     // lambda1
  double lambda_reg = 1.0;     // lambda2
  double lambda_corner = 0.1;  // lambda3
  double gamma = 2.0;
  double laplace_scale = 1.0;
  double no_object_weight = 0.1;
  double prob_clamp = 1e-7;
  bool corner_heading_flip = false;
  MatchWeights match;
};

/// Sum over entries of -[v (1-p)^g log p + (1-v) p^g log(1-p)], each row scaled
/// by row_weights (default 1), divided by `normalizer`. Probabilities are
/// clamped to [clamp, 1 - clamp]. When `grad` is given it receives dL/dp
/// (zero where the clamp is active).
double focal_loss(const Matrix& probs, const Matrix& targets, double gamma, std::span<const double> row_weights = {},
                  double normalizer = 1.0, double clamp = 1e-7, Matrix* grad = nullptr);

/// KL(Laplace(gt, b) || Laplace(pred, b)) = exp(-|d|/b) + |d|/b - 1, d = pred - gt.
double laplace_kl(double pred, double gt, double scale);
/// d/d(pred) of laplace_kl.
double laplace_kl_grad(double pred, double gt, double scale);
/// Same with d wrapped to [-pi, pi).
double laplace_kl_angle(double pred, double gt, double scale);
double laplace_kl_angle_grad(double pred, double gt, double scale);

/// Sum of distances between same-index canonical corners. `grad` receives the
/// derivative with respect to the seven predicted box fields.
double corner_loss(const Box3D& pred, const Box3D& gt, std::array<double, 7>* grad = nullptr);
/// Minimum of corner_loss against gt and gt with heading + pi.
double corner_loss_flip(const Box3D& pred, const Box3D& gt, std::array<double, 7>* grad = nullptr);

struct LossBreakdown {
  double total = 0;
  double cls = 0;
  double center = 0;
  double size = 0;
  double heading = 0;
  double corner = 0;
  double lambda1 = 0;
  double lambda2 = 0;
  double lambda3 = 0;
};

struct LossGradients {
  Matrix box_raw;
  Matrix logits;
};

/// Composite set-prediction loss on raw head outputs. Classification covers all
/// N rows (unmatched target "no object", down-weighted); regression and corner
/// terms cover matched pairs. Every term is divided by max(1, M).
LossBreakdown total_loss(const Matrix& box_raw, const Matrix& logits, const GroundTruth& gt,
                         std::span<const int> assignment, const BoxCoder& coder, const LossConfig& cfg,
                         LossGradients* grads = nullptr);

/// Matches on the current predictions, then records total_loss as a scalar
/// node whose backward feeds box_raw and logits.
Var detection_loss(const Var& box_raw, const Var& logits, const GroundTruth& gt, const BoxCoder& coder,
                   const LossConfig& cfg, LossBreakdown* breakdown = nullptr, std::vector<int>* assignment = nullptr);

}  // namespace fvit
