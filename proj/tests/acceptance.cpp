// Runs every acceptance criterion and prints one PASS/FAIL line per
// criterion. Pass criterion numbers as arguments to run a subset.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "fusionvit/harness.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace fvit;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// 1 ------------------------------------------------------------------------

Outcome gradient_fidelity() {
  const auto t0 = std::chrono::steady_clock::now();
  using fvit::testing::rel_err;
  double worst = 0;
  std::string where;
  auto note = [&](double e, const std::string& what) {
    if (e > worst) {
      worst = e;
      where = what;
    }
  };
  std::mt19937_64 rng(101);
  std::uniform_real_distribution<double> u(0.05, 0.95), d(-2, 2), s(0.3, 2);

  // Focal loss gradient with respect to probabilities.
  Matrix p(6, 3), t = Matrix::Zero(6, 3);
  for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] = u(rng);
  for (Eigen::Index r = 0; r < 6; ++r) t(r, r % 3) = 1;
  Matrix g;
  focal_loss(p, t, 2.0, {}, 2.0, 1e-7, &g);
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    Matrix up = p, down = p;
    up.data()[i] += 1e-6;
    down.data()[i] -= 1e-6;
    note(rel_err(g.data()[i], (focal_loss(up, t, 2.0, {}, 2.0) - focal_loss(down, t, 2.0, {}, 2.0)) / 2e-6),
         "focal");
  }
  // Laplace KL and its wrapped-angle form.
  for (int i = 0; i < 50; ++i) {
    const double a = d(rng), b = d(rng), sc = s(rng);
    note(rel_err(laplace_kl_grad(a, b, sc), (laplace_kl(a + 1e-6, b, sc) - laplace_kl(a - 1e-6, b, sc)) / 2e-6),
         "laplace_kl");
    note(rel_err(laplace_kl_angle_grad(a, b, sc),
                 (laplace_kl_angle(a + 1e-6, b, sc) - laplace_kl_angle(a - 1e-6, b, sc)) / 2e-6),
         "laplace_kl_angle");
  }
  // Corner loss.
  for (int i = 0; i < 30; ++i) {
    const Box3D gt{d(rng), d(rng), d(rng), 2 + u(rng), 1 + u(rng), 1 + u(rng), 3 * d(rng)};
    const Box3D pr{d(rng), d(rng), d(rng), 2 + u(rng), 1 + u(rng), 1 + u(rng), 3 * d(rng)};
    std::array<double, 7> cg{};
    corner_loss(pr, gt, &cg);
    const Eigen::RowVectorXd row = to_row(pr);
    for (int k = 0; k < 7; ++k) {
      Eigen::RowVectorXd a = row, b = row;
      a(k) += 1e-6;
      b(k) -= 1e-6;
      note(rel_err(cg[static_cast<std::size_t>(k)], (corner_loss(to_box3d(a), gt) - corner_loss(to_box3d(b), gt)) / 2e-6),
           "corner");
    }
  }
  // total_loss with each component isolated, then all together.
  const BoxCoder coder{BoxMode::Spatial3D, {10, 0, -1}, {10, 8, 1}, {4, 1.8, 1.5}};
  GroundTruth gt;
  gt.boxes.resize(2, 7);
  gt.boxes.row(0) = to_row(Box3D{12, 2, -0.8, 4, 1.8, 1.5, 0.3});
  gt.boxes.row(1) = to_row(Box3D{6, -3, -0.9, 0.8, 0.7, 1.7, -2.0});
  gt.labels = {0, 1};
  const Matrix raw = fvit::testing::random_matrix(6, 7, rng, 0.5);
  const Matrix logits = fvit::testing::random_matrix(6, 3, rng);
  const std::vector<int> assignment{4, 1};
  const std::array<std::array<double, 3>, 4> lambdas{{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {1, 1, 0.1}}};
  for (const auto& lam : lambdas) {
    LossConfig cfg;
    cfg.lambda_cls = lam[0];
    cfg.lambda_reg = lam[1];
    cfg.lambda_corner = lam[2];
    LossGradients lg;
    total_loss(raw, logits, gt, assignment, coder, cfg, &lg);
    for (int which = 0; which < 2; ++which) {
      const Matrix& base = which == 0 ? raw : logits;
      const Matrix& an = which == 0 ? lg.box_raw : lg.logits;
      for (Eigen::Index i = 0; i < base.size(); ++i) {
        Matrix a = base, b = base;
        a.data()[i] += 1e-6;
        b.data()[i] -= 1e-6;
        const double la = which == 0 ? total_loss(a, logits, gt, assignment, coder, cfg).total
                                     : total_loss(raw, a, gt, assignment, coder, cfg).total;
        const double lb = which == 0 ? total_loss(b, logits, gt, assignment, coder, cfg).total
                                     : total_loss(raw, b, gt, assignment, coder, cfg).total;
        note(rel_err(an.data()[i], (la - lb) / 2e-6), "total_loss");
      }
    }
  }
  // End to end through MixViT at D=16, L=2, two heads, N=6.
  RunConfig toy = fvit::testing::toy_config();
  FusionViT model(toy.model, TrainMode::Fusion, 3);
  const SceneSample scene = generate_scene(toy.dataset.synth, 41);
  auto loss = [&](Tape& tape) {
    Context ctx{tape, true, nullptr};
    const HeadOutput out = model.forward(ctx, scene, 5);
    return detection_loss(out.box_raw, out.logits, model.targets(scene), model.coder(), toy.loss);
  };
  const auto e2e = fvit::testing::check_param_grads(model.params(), loss);
  note(e2e.max_rel_err, "end-to-end " + e2e.worst);
  const double secs = seconds_since(t0);
  return {worst < 1e-4 && secs < 120,
          fmt("max rel err %.2e", worst) + " (worst: " + where + "), " + std::to_string(e2e.checked) +
              " model entries, " + fmt("%.1f s", secs)};
}

// 2 ------------------------------------------------------------------------

Outcome laplace_oracle() {
  std::mt19937_64 rng(202);
  std::uniform_real_distribution<double> d(-3, 3), s(0.1, 3);
  double worst = 0;
  for (int i = 0; i < 100; ++i) {
    const double gt = d(rng), pred = d(rng), b = s(rng);
    worst = std::max(worst, std::abs(laplace_kl(pred, gt, b) - oracle::laplace_kl_numeric(gt, pred, b)));
  }
  return {worst < 1e-6, fmt("max abs diff %.2e over 100 pairs", worst)};
}

// 3 ------------------------------------------------------------------------

Outcome focal_degeneration() {
  std::mt19937_64 rng(303);
  std::uniform_real_distribution<double> u(1e-4, 1 - 1e-4);
  double worst = 0;
  for (int i = 0; i < 1000; ++i) {
    Matrix p(1, 1), t(1, 1);
    p(0, 0) = u(rng);
    t(0, 0) = u(rng) < 0.5 ? 0.0 : 1.0;
    const double bce = -(t(0, 0) * std::log(p(0, 0)) + (1 - t(0, 0)) * std::log(1 - p(0, 0)));
    worst = std::max(worst, std::abs(focal_loss(p, t, 0.0) - bce));
  }
  return {worst < 1e-7, fmt("max abs diff %.2e over 1000 instances", worst)};
}

// 4 ------------------------------------------------------------------------

Outcome geometry_oracles() {
  std::mt19937_64 rng(404);
  std::uniform_real_distribution<double> pos(-1, 1), ext(0.5, 3), ang(-kPi, kPi);
  double worst_iou = 0;
  for (int i = 0; i < 50; ++i) {
    const Box3D a{pos(rng), pos(rng), pos(rng), ext(rng), ext(rng), ext(rng), ang(rng)};
    const Box3D b{a.cx + pos(rng), a.cy + pos(rng), a.cz + 0.5 * pos(rng), ext(rng), ext(rng), ext(rng), ang(rng)};
    worst_iou = std::max(worst_iou, std::abs(iou_3d(a, b) - oracle::monte_carlo_iou(a, b, 1000000, 1000 + i)));
  }
  int nms_mismatch = 0;
  std::uniform_real_distribution<double> field(-4, 4), conf(0, 1);
  std::uniform_int_distribution<int> count(0, 25);
  for (int set = 0; set < 100; ++set) {
    std::vector<Box3D> boxes;
    std::vector<double> c;
    const int n = count(rng);
    for (int i = 0; i < n; ++i) {
      boxes.push_back({field(rng), field(rng), 0.3 * pos(rng), ext(rng), ext(rng), ext(rng), ang(rng)});
      c.push_back(conf(rng));
    }
    const double thr = 0.1 + 0.1 * (set % 5);
    const std::size_t cap = set % 3 == 0 ? 5 : 100;
    const auto fast = nms_3d(boxes, c, thr, cap);
    const auto ref =
        oracle::brute_force_nms(boxes, c, thr, cap, [](const Box3D& x, const Box3D& y) { return iou_3d(x, y); });
    nms_mismatch += fast != ref;
  }
  const Box3D base{3, -1, 0.5, 4, 2, 1.5, 0.9};
  Box3D moved = base;
  moved.cx += 1;
  const double corner = corner_loss(moved, base);
  const bool pass = worst_iou < 0.005 && nms_mismatch == 0 && corner == 8.0;
  return {pass, fmt("iou vs MC max diff %.4f; ", worst_iou) + "NMS mismatches " + std::to_string(nms_mismatch) +
                    "/100; " + fmt("corner loss of unit x shift %.17g", corner)};
}

// 5 ------------------------------------------------------------------------

Outcome matching_oracle() {
  std::mt19937_64 rng(505);
  std::uniform_int_distribution<int> dm(1, 5);
  std::uniform_int_distribution<int> coarse(0, 3);
  int bad = 0;
  double worst = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const int m = dm(rng);
    const int n = std::uniform_int_distribution<int>(m, 8)(rng);
    Matrix cost = fvit::testing::random_matrix(m, n, rng);
    // Every fourth instance uses small integer costs so ties are common.
    if (trial % 4 == 0) {
      for (Eigen::Index i = 0; i < cost.size(); ++i) cost.data()[i] = coarse(rng);
    }
    const std::vector<int> a = hungarian(cost);
    // Exhaustive search over injective row -> column maps.
    double best = std::numeric_limits<double>::infinity();
    std::vector<int> cols(static_cast<std::size_t>(n));
    std::iota(cols.begin(), cols.end(), 0);
    std::function<void(int, double, std::vector<bool>&)> rec = [&](int r, double acc, std::vector<bool>& used) {
      if (r == m) {
        best = std::min(best, acc);
        return;
      }
      for (int c = 0; c < n; ++c) {
        if (used[static_cast<std::size_t>(c)]) continue;
        used[static_cast<std::size_t>(c)] = true;
        rec(r + 1, acc + cost(r, c), used);
        used[static_cast<std::size_t>(c)] = false;
      }
    };
    std::vector<bool> used(static_cast<std::size_t>(n), false);
    rec(0, 0.0, used);
    double got = 0;
    std::set<int> distinct;
    for (int r = 0; r < m; ++r) {
      got += cost(r, a[static_cast<std::size_t>(r)]);
      distinct.insert(a[static_cast<std::size_t>(r)]);
    }
    const double diff = std::abs(got - best);
    worst = std::max(worst, diff);
    bad += diff > 1e-9 || static_cast<int>(distinct.size()) != m;
  }
  return {bad == 0, std::to_string(bad) + "/200 suboptimal or invalid; " + fmt("max cost gap %.2e", worst)};
}

// 6 ------------------------------------------------------------------------

Outcome voxel_invariants() {
  std::mt19937_64 rng(606);
  LidarConfig cfg;
  cfg.geometry = VoxelGeometry{{0.5, 0.5, 0.5}, {0, -4, -1}, {8, 4, 1}};
  cfg.max_points_per_voxel = 8;
  cfg.point_mlp_widths = {16, 16};
  cfg.vfe_layers = 2;
  cfg.vfe_width = 12;
  cfg.encoder.width = 16;
  ParamStore store(606, 0.3);
  VoxelFeatureEncoder vfe(store, "vfe", cfg);
  std::uniform_real_distribution<double> ux(-1, 9), uy(-5, 5), uz(-1.5, 1.5);
  PointCloud cloud;
  for (int i = 0; i < 3000; ++i) cloud.points.emplace_back(ux(rng), uy(rng), uz(rng));

  // Train-mode passes populate the BatchNorm running statistics.
  const VoxelBatch batch = prepare_voxels(cloud, cfg, 1);
  {
    Tape t;
    std::mt19937_64 drop(1);
    Context train{t, true, &drop};
    vfe(train, batch.points, batch.segment, batch.num_voxels());
  }
  double worst_perm = 0;
  Tape tape(false);
  Context ctx{tape, false, nullptr};
  const Matrix ref = vfe(ctx, batch.points, batch.segment, batch.num_voxels()).value();
  for (int trial = 0; trial < 10; ++trial) {
    // Shuffle the points inside every voxel, keeping voxel membership.
    std::vector<Eigen::Index> order(static_cast<std::size_t>(batch.points.rows()));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::size_t start = 0;
    while (start < order.size()) {
      std::size_t end = start;
      while (end < order.size() && batch.segment[end] == batch.segment[start]) ++end;
      std::shuffle(order.begin() + static_cast<std::ptrdiff_t>(start), order.begin() + static_cast<std::ptrdiff_t>(end), rng);
      start = end;
    }
    Matrix perm(batch.points.rows(), batch.points.cols());
    for (std::size_t r = 0; r < order.size(); ++r) perm.row(static_cast<Eigen::Index>(r)) = batch.points.row(order[r]);
    const Matrix got = vfe(ctx, perm, batch.segment, batch.num_voxels()).value();
    worst_perm = std::max(worst_perm, (got - ref).cwiseAbs().maxCoeff());
  }

  // Independent recount of the voxel grid.
  const VoxelGrid grid = voxelize(cloud, cfg.geometry);
  std::map<std::array<long, 3>, int> recount;
  for (const auto& p : cloud.points) {
    bool inside = true;
    std::array<long, 3> idx{};
    for (int a = 0; a < 3; ++a) {
      const double rel = (p(a) - cfg.geometry.range_min(a)) / cfg.geometry.voxel_size(a);
      inside = inside && p(a) >= cfg.geometry.range_min(a) && p(a) < cfg.geometry.range_max(a);
      idx[static_cast<std::size_t>(a)] = static_cast<long>(std::floor(rel));
    }
    if (inside) ++recount[idx];
  }
  int count_mismatch = grid.size() != recount.size();
  for (const auto& [cell, pts] : grid.cells) {
    const auto it = recount.find({cell.i, cell.j, cell.k});
    count_mismatch += it == recount.end() || it->second != static_cast<int>(pts.size());
  }

  // Sampling: same seed, same result; every kept point comes from its cell.
  int sampling_bad = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const VoxelGrid a = sample_points(grid, cfg.max_points_per_voxel, seed);
    const VoxelGrid b = sample_points(grid, cfg.max_points_per_voxel, seed);
    for (const auto& [cell, pts] : a.cells) {
      sampling_bad += pts != b.cells.at(cell);
      const auto& src = grid.cells.at(cell);
      sampling_bad += static_cast<int>(pts.size()) != std::min<int>(cfg.max_points_per_voxel, static_cast<int>(src.size()));
      for (const auto& p : pts) sampling_bad += std::find(src.begin(), src.end(), p) == src.end();
    }
  }
  const bool pass = worst_perm < 1e-6 && count_mismatch == 0 && sampling_bad == 0;
  return {pass, fmt("permutation max diff %.2e; ", worst_perm) + "voxel count mismatches " +
                    std::to_string(count_mismatch) + "; sampling violations " + std::to_string(sampling_bad)};
}

// 7 and 8 ------------------------------------------------------------------

RunConfig overfit_config() {
  RunConfig c = desk_config();
  c.dataset.num_scenes = 20;
  c.steps = 2000;
  c.target_map = 0.8;
  c.target_threshold = 0.5;
  return c;
}

struct OverfitRun {
  int steps_to_target = -1;
  double best_map = 0;
  double seconds = 0;
};

OverfitRun run_to_target(const RunConfig& c, TrainMode mode, const std::vector<SceneSample>& scenes,
                         const TrainOptions& opts = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  const TrainResult r = train(c, mode, scenes, opts);
  OverfitRun out;
  out.steps_to_target = r.steps_to_target;
  for (const EvalPoint& e : r.evals) out.best_map = std::max(out.best_map, e.map);
  out.seconds = seconds_since(t0);
  return out;
}

int g_scratch_steps = -1;

Outcome overfit_target() {
  const RunConfig c = overfit_config();
  const auto scenes = load_dataset(c.dataset, c.seed);
  const OverfitRun r = run_to_target(c, TrainMode::Fusion, scenes);
  g_scratch_steps = r.steps_to_target;
  return {r.steps_to_target > 0, "steps to mAP_3D@0.5 >= 0.8: " + std::to_string(r.steps_to_target) +
                                     fmt(", best mAP %.3f", r.best_map) + fmt(", %.0f s", r.seconds)};
}

Outcome pretrain_finetune() {
  const RunConfig c = overfit_config();
  const auto scenes = load_dataset(c.dataset, c.seed);
  if (g_scratch_steps < 0) g_scratch_steps = run_to_target(c, TrainMode::Fusion, scenes).steps_to_target;
  const fs::path dir = fs::temp_directory_path() / "fvit_acceptance_pretrain";
  fs::create_directories(dir);
  RunConfig branch = c;
  branch.target_map = 0;
  branch.eval_every = 0;
  const TrainResult cam = train(branch, TrainMode::Camera2d, scenes);
  const TrainResult lid = train(branch, TrainMode::Lidar3d, scenes);
  save_checkpoint(dir / "camera.fvit", *cam.model, branch, branch.steps);
  save_checkpoint(dir / "lidar.fvit", *lid.model, branch, branch.steps);

  TrainOptions opts;
  opts.camera_checkpoint = dir / "camera.fvit";
  opts.lidar_checkpoint = dir / "lidar.fvit";
  // Bit-exact load: a zero-step run holds the branch parameters unchanged.
  RunConfig zero = c;
  zero.steps = 0;
  const TrainResult loaded = train(zero, TrainMode::FusionPretrained, scenes, opts);
  const LoadedCheckpoint cam_ck = load_checkpoint(opts.camera_checkpoint);
  const LoadedCheckpoint lid_ck = load_checkpoint(opts.lidar_checkpoint);
  int mismatched = 0, compared = 0;
  for (const auto& [name, p] : loaded.model->params().all()) {
    const bool is_cam = name.rfind("camera.", 0) == 0, is_lid = name.rfind("lidar.", 0) == 0;
    if (!is_cam && !is_lid) continue;
    ++compared;
    const Matrix& src = (is_cam ? cam_ck.model : lid_ck.model)->params().at(name).value;
    const Matrix& orig = (is_cam ? cam.model : lid.model)->params().at(name).value;
    mismatched += p.value != src || p.value != orig;
  }
  const OverfitRun fine = run_to_target(c, TrainMode::FusionPretrained, scenes, opts);
  const bool pass = mismatched == 0 && compared > 0 && fine.steps_to_target > 0 &&
                    (g_scratch_steps < 0 || fine.steps_to_target <= g_scratch_steps);
  return {pass, std::to_string(compared - mismatched) + "/" + std::to_string(compared) +
                    " branch tensors bit-exact; steps to target: pretrained " + std::to_string(fine.steps_to_target) +
                    ", scratch " + std::to_string(g_scratch_steps) + fmt(" (finetune %.0f s)", fine.seconds)};
}

// 9 ------------------------------------------------------------------------

Outcome ablation_harness() {
  RunConfig c = desk_config();
  c.dataset.num_scenes = 8;
  c.steps = 60;
  const auto scenes = load_dataset(c.dataset, c.seed);
  std::ostringstream detail;
  bool pass = true;
  for (AblationKind kind : {AblationKind::FusionStrategy, AblationKind::ComponentRemoval}) {
    const std::size_t expect_rows = kind == AblationKind::FusionStrategy ? 3 : 5;
    const AblationReport a = run_ablation(kind, c, scenes);
    const AblationReport b = run_ablation(kind, c, scenes);
    bool finite = true, same = a.rows.size() == b.rows.size();
    for (std::size_t i = 0; i < a.rows.size(); ++i) {
      for (const MetricCell& cell : a.rows[i].report.cells) {
        finite = finite && std::isfinite(cell.result.ap) && std::isfinite(cell.result.aph);
      }
      same = same && i < b.rows.size() && a.rows[i].report == b.rows[i].report && a.rows[i].name == b.rows[i].name;
    }
    const std::string table = format_ablation(a);
    const bool complete = a.rows.size() == expect_rows && table.find("APH") != std::string::npos;
    pass = pass && complete && finite && same;
    detail << to_string(kind) << ": " << a.rows.size() << " rows, " << (finite ? "finite" : "NON-FINITE") << ", "
           << (same ? "rerun identical" : "RERUN DIFFERS") << "; ";
  }
  return {pass, detail.str()};
}

// 10 -----------------------------------------------------------------------

Outcome metrics_oracle() {
  auto box = [](double x, double theta) { return to_row(Box3D{x, 0, 0, 4, 2, 1.5, theta}); };
  // Two scenes, 7 gt cars; a scripted detector with a known TP/FP order.
  std::vector<SceneResult> scenes(2);
  const std::vector<std::vector<double>> gts{{0, 10, 20, 30}, {0, 10, 20}};
  for (std::size_t s = 0; s < 2; ++s) {
    scenes[s].gt.boxes.resize(static_cast<Eigen::Index>(gts[s].size()), 7);
    for (std::size_t i = 0; i < gts[s].size(); ++i) scenes[s].gt.boxes.row(static_cast<Eigen::Index>(i)) = box(gts[s][i], 0);
    scenes[s].gt.labels.assign(gts[s].size(), 0);
  }
  struct Scripted {
    std::size_t scene;
    double x;
    bool tp;
  };
  const std::vector<Scripted> script{{0, 0, true},    {1, 100, false}, {1, 10, true}, {0, 10, true},
                                     {0, 10.05, false}, {1, 0, true},    {0, 200, false}, {0, 30, true},
                                     {1, 300, false}, {1, 400, false}};
  std::vector<bool> seq;
  for (std::size_t i = 0; i < script.size(); ++i) {
    scenes[script[i].scene].detections.push_back({box(script[i].x, 0), 0, 1.0 - 0.05 * static_cast<double>(i)});
    seq.push_back(script[i].tp);
  }
  const double expect = oracle::ap_from_sequence(seq, 7);
  const ApResult got = average_precision(scenes, 0, OverlapKind::Spatial, 0.7);
  const double ap_diff = std::abs(got.ap - expect);

  std::vector<SceneResult> flipped(1);
  flipped[0].gt.boxes.resize(5, 7);
  for (int i = 0; i < 5; ++i) {
    flipped[0].gt.boxes.row(i) = box(10.0 * i, 0.4 * i - 1);
    flipped[0].detections.push_back({box(10.0 * i, 0.4 * i - 1 + kPi), 0, 0.9 - 0.1 * i});
  }
  flipped[0].gt.labels.assign(5, 0);
  const ApResult f = average_precision(flipped, 0, OverlapKind::Spatial, 0.7);
  const bool pass = ap_diff < 1e-9 && f.ap == 1.0 && f.aph < 0.01;
  return {pass, fmt("AP diff vs hand PR curve %.2e; ", ap_diff) + fmt("flipped headings AP %.3f", f.ap) +
                    fmt(" APH %.4f", f.aph)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient fidelity", gradient_fidelity},  {"Laplace KL oracle", laplace_oracle},
      {"focal loss degeneration", focal_degeneration}, {"geometry oracles", geometry_oracles},
      {"matching oracle", matching_oracle},       {"voxel pipeline invariants", voxel_invariants},
      {"overfit target", overfit_target},         {"pretrain / finetune protocol", pretrain_finetune},
      {"ablation harness", ablation_harness},     {"metrics oracle", metrics_oracle},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::stoi(argv[i]));
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s criterion %d (%s): %s\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first.c_str(),
                o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
