#include "fusionvit/detection.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "fusionvit/errors.hpp"

namespace fvit {

int box_fields(BoxMode mode) { return mode == BoxMode::Spatial3D ? 7 : 4; }

void BoxCoder::validate() const {
  const auto c = static_cast<std::size_t>(center_dims());
  const auto s = static_cast<std::size_t>(size_dims());
  if (center_offset.size() != c || center_scale.size() != c || size_prior.size() != s) {
    throw ConfigError("box coder: per-field vectors do not match the box mode");
  }
  for (double p : size_prior) {
    if (!(p > 0)) throw ConfigError("box coder: size priors must be positive");
  }
}

Matrix BoxCoder::decode(const Matrix& raw) const {
  if (raw.cols() != fields()) throw ConfigError("box coder: raw width != box fields");
  Matrix out(raw.rows(), raw.cols());
  const int c = center_dims();
  const int s = size_dims();
  for (Eigen::Index r = 0; r < raw.rows(); ++r) {
    for (int k = 0; k < c; ++k) out(r, k) = center_offset[k] + center_scale[k] * raw(r, k);
    for (int k = 0; k < s; ++k) out(r, c + k) = size_prior[k] * std::exp(raw(r, c + k));
    if (has_heading()) out(r, c + s) = raw(r, c + s);
  }
  return out;
}

Matrix BoxCoder::encode(const Matrix& boxes) const {
  Matrix out(boxes.rows(), boxes.cols());
  const int c = center_dims();
  const int s = size_dims();
  for (Eigen::Index r = 0; r < boxes.rows(); ++r) {
    for (int k = 0; k < c; ++k) out(r, k) = (boxes(r, k) - center_offset[k]) / center_scale[k];
    for (int k = 0; k < s; ++k) out(r, c + k) = std::log(boxes(r, c + k) / size_prior[k]);
    if (has_heading()) out(r, c + s) = boxes(r, c + s);
  }
  return out;
}

Box3D to_box3d(const Eigen::Ref<const Eigen::RowVectorXd>& r) { return {r(0), r(1), r(2), r(3), r(4), r(5), r(6)}; }
Box2D to_box2d(const Eigen::Ref<const Eigen::RowVectorXd>& r) { return {r(0), r(1), r(2), r(3)}; }

Eigen::RowVectorXd to_row(const Box3D& b) {
  Eigen::RowVectorXd r(7);
  r << b.cx, b.cy, b.cz, b.l, b.w, b.h, b.theta;
  return r;
}

Eigen::RowVectorXd to_row(const Box2D& b) {
  Eigen::RowVectorXd r(4);
  r << b.cx, b.cy, b.w, b.h;
  return r;
}

double DetectionSet::confidence(Eigen::Index i) const {
  return class_probs.row(i).head(class_probs.cols() - 1).maxCoeff();
}

int DetectionSet::label(Eigen::Index i) const {
  Eigen::Index best = 0;
  class_probs.row(i).head(class_probs.cols() - 1).maxCoeff(&best);
  return static_cast<int>(best);
}

DetectionSet DetectionSet::select(std::span<const std::size_t> rows) const {
  DetectionSet out{mode, Matrix(static_cast<Eigen::Index>(rows.size()), boxes.cols()),
                   Matrix(static_cast<Eigen::Index>(rows.size()), class_probs.cols())};
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.boxes.row(static_cast<Eigen::Index>(i)) = boxes.row(static_cast<Eigen::Index>(rows[i]));
    out.class_probs.row(static_cast<Eigen::Index>(i)) = class_probs.row(static_cast<Eigen::Index>(rows[i]));
  }
  return out;
}

Matrix GroundTruth::one_hot() const {
  Matrix v = Matrix::Zero(size(), num_classes);
  for (std::size_t m = 0; m < labels.size(); ++m) v(static_cast<Eigen::Index>(m), labels[m]) = 1.0;
  return v;
}

DetectionSet nms(const DetectionSet& dets, double iou_threshold, std::size_t max_out) {
  std::map<int, std::vector<std::size_t>> by_class;
  for (Eigen::Index i = 0; i < dets.size(); ++i) by_class[dets.label(i)].push_back(static_cast<std::size_t>(i));

  std::vector<std::size_t> kept;
  for (const auto& [_, rows] : by_class) {
    std::vector<double> conf;
    for (std::size_t r : rows) conf.push_back(dets.confidence(static_cast<Eigen::Index>(r)));
    std::vector<std::size_t> local;
    if (dets.mode == BoxMode::Spatial3D) {
      std::vector<Box3D> boxes;
      for (std::size_t r : rows) boxes.push_back(dets.box3d(static_cast<Eigen::Index>(r)));
      local = nms_3d(boxes, conf, iou_threshold, max_out);
    } else {
      std::vector<Box2D> boxes;
      for (std::size_t r : rows) boxes.push_back(dets.box2d(static_cast<Eigen::Index>(r)));
      local = nms_2d(boxes, conf, iou_threshold, max_out);
    }
    for (std::size_t l : local) kept.push_back(rows[l]);
  }
  std::stable_sort(kept.begin(), kept.end(), [&](std::size_t a, std::size_t b) {
    const double ca = dets.confidence(static_cast<Eigen::Index>(a));
    const double cb = dets.confidence(static_cast<Eigen::Index>(b));
    return ca > cb || (ca == cb && a < b);
  });
  if (kept.size() > max_out) kept.resize(max_out);
  return dets.select(kept);
}

DetectionHead::DetectionHead(ParamStore& store, const std::string& name, Eigen::Index in,
                             const std::vector<int>& hidden, int proposals, int num_classes, BoxMode mode)
    : box_mlp_(store, name + ".box", in, hidden, static_cast<Eigen::Index>(proposals) * box_fields(mode)),
      class_mlp_(store, name + ".class", in, hidden, static_cast<Eigen::Index>(proposals) * (num_classes + 1)),
      proposals_(proposals),
      num_classes_(num_classes),
      mode_(mode) {
  if (proposals < 1 || num_classes < 1) throw ConfigError("detection head needs N >= 1 and C >= 1");
}

HeadOutput DetectionHead::operator()(Context& ctx, const Var& readout) const {
  if (readout.rows() != 1) throw ConfigError("detection head expects a single readout vector");
  return {ag::reshape(box_mlp_(ctx, readout), proposals_, box_fields(mode_)),
          ag::reshape(class_mlp_(ctx, readout), proposals_, num_classes_ + 1)};
}

namespace {

Matrix softmax(const Matrix& logits) {
  Matrix p(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double m = logits.row(r).maxCoeff();
    p.row(r) = (logits.row(r).array() - m).exp();
    p.row(r) /= p.row(r).sum();
  }
  return p;
}

}  // namespace

DetectionSet predict_heads(const Matrix& box_raw, const Matrix& logits, const BoxCoder& coder) {
  DetectionSet out{coder.mode, coder.decode(box_raw), softmax(logits)};
  if (coder.has_heading()) {
    for (Eigen::Index r = 0; r < out.boxes.rows(); ++r) out.boxes(r, 6) = wrap_angle(out.boxes(r, 6));
  }
  return out;
}

namespace {

std::vector<int> solve_assignment(const Matrix& cost) {
  const int n = static_cast<int>(cost.rows());
  const int m = static_cast<int>(cost.cols());
  if (n > m) throw ContractError("hungarian: more rows than columns");
  if (n == 0) return {};
  constexpr double kInf = std::numeric_limits<double>::infinity();
  // Potentials formulation, 1-based with a virtual column 0.
  std::vector<double> u(static_cast<std::size_t>(n) + 1, 0.0), v(static_cast<std::size_t>(m) + 1, 0.0);
  std::vector<int> p(static_cast<std::size_t>(m) + 1, 0), way(static_cast<std::size_t>(m) + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(static_cast<std::size_t>(m) + 1, kInf);
    std::vector<char> used(static_cast<std::size_t>(m) + 1, 0);
    do {
      used[static_cast<std::size_t>(j0)] = 1;
      const int i0 = p[static_cast<std::size_t>(j0)];
      double delta = kInf;
      int j1 = 0;
      for (int j = 1; j <= m; ++j) {
        if (used[static_cast<std::size_t>(j)]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[static_cast<std::size_t>(i0)] - v[static_cast<std::size_t>(j)];
        if (cur < minv[static_cast<std::size_t>(j)]) {
          minv[static_cast<std::size_t>(j)] = cur;
          way[static_cast<std::size_t>(j)] = j0;
        }
        if (minv[static_cast<std::size_t>(j)] < delta) {
          delta = minv[static_cast<std::size_t>(j)];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[static_cast<std::size_t>(j)]) {
          u[static_cast<std::size_t>(p[static_cast<std::size_t>(j)])] += delta;
          v[static_cast<std::size_t>(j)] -= delta;
        } else {
          minv[static_cast<std::size_t>(j)] -= delta;
        }
      }
      j0 = j1;
    } while (p[static_cast<std::size_t>(j0)] != 0);
    do {
      const int j1 = way[static_cast<std::size_t>(j0)];
      p[static_cast<std::size_t>(j0)] = p[static_cast<std::size_t>(j1)];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> assignment(static_cast<std::size_t>(n), -1);
  for (int j = 1; j <= m; ++j) {
    if (p[static_cast<std::size_t>(j)] != 0) assignment[static_cast<std::size_t>(p[static_cast<std::size_t>(j)] - 1)] = j - 1;
  }
  return assignment;
}

double assignment_cost(const Matrix& cost, const std::vector<int>& cols) {
  double total = 0.0;
  for (std::size_t r = 0; r < cols.size(); ++r) total += cost(static_cast<Eigen::Index>(r), cols[r]);
  return total;
}

}  // namespace

std::vector<int> hungarian(const Matrix& cost) {
  const Eigen::Index n = cost.rows();
  const Eigen::Index m = cost.cols();
  if (n > m) throw ContractError("hungarian: more rows than columns");
  if (!cost.allFinite()) throw ContractError("hungarian: non-finite cost");
  std::vector<int> result(static_cast<std::size_t>(n), -1);
  if (n == 0) return result;

  // Among all optimal assignments pick the lexicographically smallest column
  // sequence: fix rows in order, each to the lowest column that still admits
  // an optimal completion.
  std::vector<int> free_cols(static_cast<std::size_t>(m));
  for (Eigen::Index j = 0; j < m; ++j) free_cols[static_cast<std::size_t>(j)] = static_cast<int>(j);
  double remaining_opt = assignment_cost(cost, solve_assignment(cost));
  const double tol = 1e-9 * (1.0 + cost.cwiseAbs().maxCoeff());

  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::Index rest_rows = n - i - 1;
    bool fixed = false;
    for (std::size_t c = 0; c < free_cols.size() && !fixed; ++c) {
      const int j = free_cols[c];
      double completion = 0.0;
      if (rest_rows > 0) {
        Matrix sub(rest_rows, static_cast<Eigen::Index>(free_cols.size()) - 1);
        for (Eigen::Index r = 0; r < rest_rows; ++r) {
          Eigen::Index k = 0;
          for (std::size_t cc = 0; cc < free_cols.size(); ++cc) {
            if (cc != c) sub(r, k++) = cost(i + 1 + r, free_cols[cc]);
          }
        }
        completion = assignment_cost(sub, solve_assignment(sub));
      }
      const double candidate = cost(i, j) + completion;
      if (candidate <= remaining_opt + tol) {
        result[static_cast<std::size_t>(i)] = j;
        remaining_opt = completion;
        free_cols.erase(free_cols.begin() + static_cast<std::ptrdiff_t>(c));
        fixed = true;
      }
    }
    if (!fixed) throw std::logic_error("hungarian: tie-break lost the optimum");
  }
  return result;
}

Matrix matching_cost(const DetectionSet& preds, const GroundTruth& gt, const MatchWeights& w) {
  const int fields = box_fields(gt.mode);
  Matrix cost(gt.size(), preds.size());
  for (Eigen::Index m = 0; m < gt.size(); ++m) {
    for (Eigen::Index n = 0; n < preds.size(); ++n) {
      double l1 = 0.0;
      for (int k = 0; k < fields; ++k) {
        double d = preds.boxes(n, k) - gt.boxes(m, k);
        if (gt.mode == BoxMode::Spatial3D && k == 6) d = wrap_angle(d);
        l1 += std::abs(d);
      }
      cost(m, n) = -w.class_weight * preds.class_probs(n, gt.labels[static_cast<std::size_t>(m)]) + w.box_weight * l1;
    }
  }
  return cost;
}

std::vector<int> match(const DetectionSet& preds, const GroundTruth& gt, const MatchWeights& w) {
  if (gt.size() > preds.size()) throw ContractError("match: more ground truth objects than proposals");
  return hungarian(matching_cost(preds, gt, w));
}

double focal_loss(const Matrix& probs, const Matrix& targets, double gamma, std::span<const double> row_weights,
                  double normalizer, double clamp, Matrix* grad) {
  if (probs.rows() != targets.rows() || probs.cols() != targets.cols()) {
    throw ConfigError("focal_loss: probability and target shapes differ");
  }
  if (grad != nullptr) grad->setZero(probs.rows(), probs.cols());
  double total = 0.0;
  for (Eigen::Index r = 0; r < probs.rows(); ++r) {
    const double rw = row_weights.empty() ? 1.0 : row_weights[static_cast<std::size_t>(r)];
    for (Eigen::Index c = 0; c < probs.cols(); ++c) {
      const double raw = probs(r, c);
      const double p = std::clamp(raw, clamp, 1.0 - clamp);
      const double v = targets(r, c);
      const double pos = std::pow(1.0 - p, gamma) * std::log(p);
      const double neg = std::pow(p, gamma) * std::log(1.0 - p);
      total -= rw * (v * pos + (1.0 - v) * neg);
      if (grad != nullptr && raw > clamp && raw < 1.0 - clamp) {
        // d/dp of (1-p)^g log p and p^g log(1-p).
        double dpos = std::pow(1.0 - p, gamma) / p;
        double dneg = -std::pow(p, gamma) / (1.0 - p);
        if (gamma != 0.0) {
          dpos -= gamma * std::pow(1.0 - p, gamma - 1.0) * std::log(p);
          dneg += gamma * std::pow(p, gamma - 1.0) * std::log(1.0 - p);
        }
        (*grad)(r, c) = -rw * (v * dpos + (1.0 - v) * dneg) / normalizer;
      }
    }
  }
  return total / normalizer;
}

double laplace_kl(double pred, double gt, double scale) {
  if (!(scale > 0)) throw ConfigError("laplace_kl: scale must be positive");
  const double a = std::abs(pred - gt) / scale;
  // expm1 keeps the quadratic regime near zero accurate.
  return std::expm1(-a) + a;
}

double laplace_kl_grad(double pred, double gt, double scale) {
  if (!(scale > 0)) throw ConfigError("laplace_kl: scale must be positive");
  const double d = pred - gt;
  const double a = std::abs(d) / scale;
  const double mag = -std::expm1(-a) / scale;
  return d > 0 ? mag : (d < 0 ? -mag : 0.0);
}

double laplace_kl_angle(double pred, double gt, double scale) { return laplace_kl(wrap_angle(pred - gt), 0.0, scale); }

double laplace_kl_angle_grad(double pred, double gt, double scale) {
  return laplace_kl_grad(wrap_angle(pred - gt), 0.0, scale);
}

double corner_loss(const Box3D& pred, const Box3D& gt, std::array<double, 7>* grad) {
  const CornerSet a = corners_of(pred);
  const CornerSet b = corners_of(gt);
  const double c = std::cos(pred.theta);
  const double s = std::sin(pred.theta);
  double total = 0.0;
  if (grad != nullptr) grad->fill(0.0);
  for (int k = 0; k < 8; ++k) {
    const Eigen::Vector3d diff = a[static_cast<std::size_t>(k)] - b[static_cast<std::size_t>(k)];
    const double dist = diff.norm();
    total += dist;
    if (grad == nullptr || dist == 0.0) continue;
    const Eigen::Vector3d u = diff / dist;
    const Eigen::Vector3d sign = corner_sign(k);
    const double lx = sign.x() * pred.l / 2;
    const double ly = sign.y() * pred.w / 2;
    auto& g = *grad;
    g[0] += u.x();
    g[1] += u.y();
    g[2] += u.z();
    g[3] += (u.x() * c + u.y() * s) * sign.x() / 2;
    g[4] += (-u.x() * s + u.y() * c) * sign.y() / 2;
    g[5] += u.z() * sign.z() / 2;
    g[6] += u.x() * (-s * lx - c * ly) + u.y() * (c * lx - s * ly);
  }
  return total;
}

double corner_loss_flip(const Box3D& pred, const Box3D& gt, std::array<double, 7>* grad) {
  Box3D flipped = gt;
  flipped.theta = wrap_angle(gt.theta + kPi);
  std::array<double, 7> g_direct{};
  std::array<double, 7> g_flip{};
  const double direct = corner_loss(pred, gt, grad ? &g_direct : nullptr);
  const double flip = corner_loss(pred, flipped, grad ? &g_flip : nullptr);
  if (grad != nullptr) *grad = flip < direct ? g_flip : g_direct;
  return std::min(direct, flip);
}

LossBreakdown total_loss(const Matrix& box_raw, const Matrix& logits, const GroundTruth& gt,
                         std::span<const int> assignment, const BoxCoder& coder, const LossConfig& cfg,
                         LossGradients* grads) {
  const Eigen::Index n = box_raw.rows();
  const int classes = static_cast<int>(logits.cols()) - 1;
  if (logits.rows() != n) throw ConfigError("total_loss: box and class rows differ");
  if (static_cast<Eigen::Index>(assignment.size()) != gt.size()) throw ContractError("total_loss: assignment size");
  if (gt.num_classes != classes) throw ConfigError("total_loss: class count mismatch");

  const Matrix boxes = coder.decode(box_raw);
  const Matrix probs = softmax(logits);
  const double norm = std::max<double>(1.0, static_cast<double>(gt.size()));

  Matrix targets = Matrix::Zero(n, classes + 1);
  std::vector<double> row_weight(static_cast<std::size_t>(n), cfg.no_object_weight);
  std::vector<int> matched_gt(static_cast<std::size_t>(n), -1);
  for (std::size_t m = 0; m < assignment.size(); ++m) {
    const int p = assignment[m];
    if (p < 0 || p >= n || matched_gt[static_cast<std::size_t>(p)] != -1) {
      throw ContractError("total_loss: assignment is not an injection into the predictions");
    }
    matched_gt[static_cast<std::size_t>(p)] = static_cast<int>(m);
  }
  for (Eigen::Index r = 0; r < n; ++r) {
    const int m = matched_gt[static_cast<std::size_t>(r)];
    if (m >= 0) {
      targets(r, gt.labels[static_cast<std::size_t>(m)]) = 1.0;
      row_weight[static_cast<std::size_t>(r)] = 1.0;
    } else {
      targets(r, classes) = 1.0;
    }
  }

  LossBreakdown out;
  out.lambda1 = cfg.lambda_cls;
  out.lambda2 = cfg.lambda_reg;
  out.lambda3 = cfg.lambda_corner;
  Matrix dprob;
  out.cls = focal_loss(probs, targets, cfg.gamma, row_weight, norm, cfg.prob_clamp, grads ? &dprob : nullptr);

  // Gradients w.r.t. decoded boxes first, chained through the coder below.
  Matrix dbox = Matrix::Zero(n, box_raw.cols());
  const int cd = coder.center_dims();
  const int sd = coder.size_dims();
  const double b = cfg.laplace_scale;
  const double reg_w = cfg.lambda_reg / norm;
  for (std::size_t m = 0; m < assignment.size(); ++m) {
    const Eigen::Index p = assignment[m];
    const auto mi = static_cast<Eigen::Index>(m);
    for (int k = 0; k < cd; ++k) {
      out.center += laplace_kl(boxes(p, k), gt.boxes(mi, k), b);
      dbox(p, k) += reg_w * laplace_kl_grad(boxes(p, k), gt.boxes(mi, k), b);
    }
    for (int k = cd; k < cd + sd; ++k) {
      out.size += laplace_kl(boxes(p, k), gt.boxes(mi, k), b);
      dbox(p, k) += reg_w * laplace_kl_grad(boxes(p, k), gt.boxes(mi, k), b);
    }
    if (coder.has_heading()) {
      out.heading += laplace_kl_angle(boxes(p, 6), gt.boxes(mi, 6), b);
      dbox(p, 6) += reg_w * laplace_kl_angle_grad(boxes(p, 6), gt.boxes(mi, 6), b);
      std::array<double, 7> g{};
      const Box3D pb = to_box3d(boxes.row(p));
      const Box3D gb = to_box3d(gt.boxes.row(mi));
      out.corner += cfg.corner_heading_flip ? corner_loss_flip(pb, gb, &g) : corner_loss(pb, gb, &g);
      for (int k = 0; k < 7; ++k) dbox(p, k) += reg_w * cfg.lambda_corner * g[static_cast<std::size_t>(k)];
    }
  }
  out.center /= norm;
  out.size /= norm;
  out.heading /= norm;
  out.corner /= norm;
  out.total = cfg.lambda_cls * out.cls + cfg.lambda_reg * (out.center + out.size + out.heading + cfg.lambda_corner * out.corner);

  if (grads != nullptr) {
    const Matrix dp = dprob * cfg.lambda_cls;
    Eigen::VectorXd dots = dp.cwiseProduct(probs).rowwise().sum();
    grads->logits = probs.cwiseProduct(dp.colwise() - dots);
    grads->box_raw = dbox;
    for (Eigen::Index r = 0; r < n; ++r) {
      for (int k = 0; k < cd; ++k) grads->box_raw(r, k) *= coder.center_scale[static_cast<std::size_t>(k)];
      for (int k = cd; k < cd + sd; ++k) grads->box_raw(r, k) *= boxes(r, k);
    }
  }
  return out;
}

Var detection_loss(const Var& box_raw, const Var& logits, const GroundTruth& gt, const BoxCoder& coder,
                   const LossConfig& cfg, LossBreakdown* breakdown, std::vector<int>* assignment) {
  if (!box_raw.value().allFinite() || !logits.value().allFinite()) {
    // Nothing sensible to match against; surface a NaN loss for the caller.
    LossBreakdown nan;
    nan.total = std::numeric_limits<double>::quiet_NaN();
    if (breakdown != nullptr) *breakdown = nan;
    if (assignment != nullptr) assignment->clear();
    return box_raw.tape().constant(Matrix::Constant(1, 1, nan.total));
  }
  const DetectionSet preds = predict_heads(box_raw.value(), logits.value(), coder);
  const std::vector<int> assign = match(preds, gt, cfg.match);
  LossGradients grads;
  Tape& tape = box_raw.tape();
  const bool need_grad = tape.recording() && (tape.requires_grad(box_raw) || tape.requires_grad(logits));
  const LossBreakdown loss = total_loss(box_raw.value(), logits.value(), gt, assign, coder, cfg,
                                        need_grad ? &grads : nullptr);
  if (breakdown != nullptr) *breakdown = loss;
  if (assignment != nullptr) *assignment = assign;
  Matrix value(1, 1);
  value(0, 0) = loss.total;
  return tape.record(std::move(value), {box_raw, logits},
                     [box_raw, logits, grads = std::move(grads)](Tape& t, const Matrix& g, const Matrix&) {
                       t.accumulate(box_raw, grads.box_raw * g(0, 0));
                       t.accumulate(logits, grads.logits * g(0, 0));
                     });
}

}  // namespace fvit
