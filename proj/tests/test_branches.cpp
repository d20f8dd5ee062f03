#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "fusionvit/errors.hpp"
#include "fusionvit/fusion.hpp"
#include "fusionvit/lidar.hpp"
#include "test_util.hpp"

using namespace fvit;
using fvit::testing::check_param_grads;
using fvit::testing::random_matrix;

namespace {

const EncoderConfig kToyEncoder{.depth = 2, .width = 16, .heads = 2, .mlp_hidden = 24, .dropout = 0.0};

PointCloud random_cloud(std::mt19937_64& rng, int n) {
  std::uniform_real_distribution<double> x(0, 6), y(-3, 3), z(-1, 1);
  PointCloud c;
  for (int i = 0; i < n; ++i) c.points.emplace_back(x(rng), y(rng), z(rng));
  return c;
}

LidarConfig toy_lidar() {
  LidarConfig cfg;
  cfg.geometry = VoxelGeometry{{1.0, 1.0, 1.0}, {0, -3, -1}, {6, 3, 1}};
  cfg.max_points_per_voxel = 5;
  cfg.max_voxels = 40;
  cfg.point_mlp_widths = {8, 8};
  cfg.vfe_layers = 2;
  cfg.vfe_width = 6;
  cfg.encoder = kToyEncoder;
  return cfg;
}

}  // namespace

// --- encoder --------------------------------------------------------------

TEST(Encoder, ValidateRejectsBadShapes) {
  EXPECT_THROW((EncoderConfig{.width = 10, .heads = 3}.validate()), ConfigError);
  EXPECT_THROW((EncoderConfig{.width = 8, .heads = 2, .dropout = 1.0}.validate()), ConfigError);
  EXPECT_NO_THROW(kToyEncoder.validate());
}

TEST(Encoder, EmbeddingPrependsClassTokenAndAddsPositions) {
  ParamStore store(1, 0.5);
  TokenEmbedding embed(store, "e", 3, 16, 8);
  Tape tape(false);
  Context ctx{tape, false, nullptr};
  std::mt19937_64 rng(1);
  const TokenSequence z = embed(ctx, tape.constant(random_matrix(5, 3, rng)));
  EXPECT_TRUE(z.has_class_token);
  EXPECT_EQ(z.length(), 6);
  const Matrix expect0 = embed.class_token->value + embed.positions->value.row(0);
  EXPECT_TRUE(z.tokens.value().row(0).isApprox(expect0));
  EXPECT_THROW(embed(ctx, tape.constant(Matrix::Zero(9, 3))), ConfigError);
}

TEST(Encoder, ZeroDepthIsIdentityAndShapesArePreserved) {
  ParamStore store(2, 0.3);
  TransformerEncoder none(store, "none", {.depth = 0, .width = 16, .heads = 2, .mlp_hidden = 8});
  TransformerEncoder two(store, "two", kToyEncoder);
  Tape tape(false);
  Context ctx{tape, false, nullptr};
  std::mt19937_64 rng(2);
  const TokenSequence in{tape.constant(random_matrix(7, 16, rng)), true};
  EXPECT_EQ(none(ctx, in).tokens.value(), in.tokens.value());
  const TokenSequence out = two(ctx, in);
  EXPECT_EQ(out.length(), 7);
  EXPECT_EQ(out.width(), 16);
  EXPECT_THROW(two(ctx, TokenSequence{tape.constant(Matrix::Zero(3, 8)), true}), ConfigError);
}

TEST(Encoder, NonClassTokensArePermutationEquivariantWithoutPositions) {
  ParamStore store(3, 0.3);
  TransformerEncoder enc(store, "enc", kToyEncoder);
  Tape tape(false);
  Context ctx{tape, false, nullptr};
  std::mt19937_64 rng(3);
  const Matrix x = random_matrix(5, 16, rng);
  Matrix swapped = x;
  swapped.row(1).swap(swapped.row(3));
  const Matrix a = enc(ctx, {tape.constant(x), true}).tokens.value();
  const Matrix b = enc(ctx, {tape.constant(swapped), true}).tokens.value();
  EXPECT_TRUE(a.row(0).isApprox(b.row(0), 1e-12));
  EXPECT_TRUE(a.row(1).isApprox(b.row(3), 1e-12));
}

TEST(Encoder, LinearStandInReplacesTheStack) {
  ParamStore store(4);
  EncoderStage stage(store, "s", kToyEncoder, true);
  EXPECT_TRUE(stage.is_stand_in());
  EXPECT_TRUE(store.contains("s.stand_in.weight"));
  EXPECT_FALSE(store.contains("s.block0.query.weight"));
}

TEST(Encoder, ReadoutNeedsClassToken) {
  ParamStore store;
  LayerNorm ln(store, "ln", 4);
  Tape tape(false);
  Context ctx{tape, false, nullptr};
  EXPECT_THROW(readout(ctx, {tape.constant(Matrix::Ones(3, 4)), false}, ln), ContractError);
  EXPECT_EQ(sequence_features(ctx, {tape.constant(Matrix::Ones(3, 4)), true}, ln).rows(), 2);
}

TEST(Encoder, GradientsThroughEmbedEncodeReadout) {
  ParamStore store(5, 0.3);
  TokenEmbedding embed(store, "e", 3, 16, 6);
  TransformerEncoder enc(store, "enc", kToyEncoder);
  LayerNorm ln(store, "ln", 16);
  std::mt19937_64 rng(5);
  const Matrix x = random_matrix(6, 3, rng);
  const Matrix w = random_matrix(1, 16, rng);
  auto loss = [&](Tape& tape) {
    Context ctx{tape, true, nullptr};
    return ag::sum(ag::mul(readout(ctx, enc(ctx, embed(ctx, tape.constant(x))), ln), tape.constant(w)));
  };
  const auto r = check_param_grads(store, loss);
  EXPECT_LT(r.max_rel_err, 1e-4) << r.worst;
}

// --- camera ---------------------------------------------------------------

TEST(Camera, PatchifyRoundTripsAndOrdersPatchesRowMajor) {
  ImageTensor img{4, 6, {}};
  img.data.resize(4 * 6 * 3);
  std::iota(img.data.begin(), img.data.end(), 0.0);
  const PatchGrid g = patchify(img, 2, 3);
  EXPECT_EQ(g.grid_rows, 2);
  EXPECT_EQ(g.grid_cols, 2);
  EXPECT_EQ(g.patches.rows(), 4);
  EXPECT_EQ(g.patches.cols(), 18);
  // Patch 1 starts at pixel (0, 3).
  EXPECT_EQ(g.patches(1, 0), img.at(0, 3, 0));
  // Second pixel row of patch 2 starts at pixel (3, 0).
  EXPECT_EQ(g.patches(2, 9), img.at(3, 0, 0));
  EXPECT_EQ(unpatchify(g), img);
  EXPECT_THROW(patchify(img, 3, 3), ContractError);
}

TEST(Camera, PaddingReplicatesEdges) {
  Rgb8Image img{3, 5, std::vector<std::uint8_t>(45)};
  for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = static_cast<std::uint8_t>(i);
  const Rgb8Image p = pad_to_multiple(img, 4, 4);
  EXPECT_EQ(p.height, 4);
  EXPECT_EQ(p.width, 8);
  EXPECT_EQ(p.at(3, 7, 1), img.at(2, 4, 1));
  EXPECT_EQ(p.at(1, 2, 2), img.at(1, 2, 2));
  EXPECT_EQ(pad_to_multiple(p, 4, 4), p);
  EXPECT_DOUBLE_EQ(normalize(img).at(0, 0, 2), 2.0 / 255.0);
}

TEST(Camera, EncodeShapesAndTokenCap) {
  CameraConfig cfg;
  cfg.patch_h = cfg.patch_w = 4;
  cfg.mlp_widths = {8, 16};
  cfg.max_tokens = 8;
  cfg.encoder = kToyEncoder;
  ParamStore store(6, 0.3);
  CameraViT cam(store, "cam", cfg);
  ImageTensor img{8, 16, std::vector<double>(8 * 16 * 3, 0.5)};
  Tape tape(false);
  Context ctx{tape, false, nullptr};
  const BranchOutput out = cam.encode(ctx, img);
  EXPECT_EQ(out.sequence.rows(), 8);
  EXPECT_EQ(out.sequence.cols(), 16);
  EXPECT_EQ(out.readout.rows(), 1);
  ImageTensor big{8, 20, std::vector<double>(8 * 20 * 3, 0.5)};
  EXPECT_THROW(cam.encode(ctx, big), ConfigError);
}

// --- lidar ----------------------------------------------------------------

TEST(Lidar, VoxelizeMatchesIndependentRecount) {
  std::mt19937_64 rng(7);
  PointCloud cloud = random_cloud(rng, 300);
  cloud.points.emplace_back(-1, 0, 0);  // out of range
  cloud.points.emplace_back(6, 0, 0);   // max is exclusive
  const LidarConfig cfg = toy_lidar();
  const VoxelGrid grid = voxelize(cloud, cfg.geometry);
  std::map<std::tuple<int, int, int>, int> recount;
  for (const auto& p : cloud.points) {
    if (p.x() < 0 || p.x() >= 6 || p.y() < -3 || p.y() >= 3 || p.z() < -1 || p.z() >= 1) continue;
    ++recount[{static_cast<int>(std::floor(p.x())), static_cast<int>(std::floor(p.y() + 3)),
               static_cast<int>(std::floor(p.z() + 1))}];
  }
  ASSERT_EQ(grid.size(), recount.size());
  std::size_t total = 0;
  for (const auto& [cell, pts] : grid.cells) {
    EXPECT_EQ(static_cast<int>(pts.size()), (recount[{cell.i, cell.j, cell.k}]));
    total += pts.size();
  }
  EXPECT_EQ(total, 300u);
}

TEST(Lidar, SamplingIsSeededAndASubset) {
  std::mt19937_64 rng(8);
  const VoxelGrid grid = voxelize(random_cloud(rng, 500), toy_lidar().geometry);
  const VoxelGrid a = sample_points(grid, 3, 11);
  const VoxelGrid b = sample_points(grid, 3, 11);
  const VoxelGrid c = sample_points(grid, 3, 12);
  bool any_difference = false;
  for (const auto& [cell, pts] : a.cells) {
    const auto& src = grid.cells.at(cell);
    EXPECT_EQ(pts.size(), std::min<std::size_t>(3, src.size()));
    EXPECT_EQ(pts, b.cells.at(cell));
    if (pts != c.cells.at(cell)) any_difference = true;
    // Subset in original relative order.
    auto it = src.begin();
    for (const auto& p : pts) {
      it = std::find(it, src.end(), p);
      ASSERT_NE(it, src.end());
      ++it;
    }
  }
  EXPECT_TRUE(any_difference);
}

TEST(Lidar, AugmentAddsCentroidOffsets) {
  const std::vector<Eigen::Vector3d> pts{{0, 0, 0}, {2, 0, 4}};
  const Matrix m = augment(pts);
  EXPECT_EQ(m.cols(), 6);
  EXPECT_EQ(m(0, 3), -1);
  EXPECT_EQ(m(1, 5), 2);
  EXPECT_THROW(augment(std::vector<Eigen::Vector3d>{}), ContractError);
}

TEST(Lidar, PrepareCapsVoxelsKeepingTheFullest) {
  LidarConfig cfg = toy_lidar();
  cfg.max_voxels = 2;
  PointCloud cloud;
  for (int i = 0; i < 3; ++i) cloud.points.emplace_back(0.5, 0.1 * i - 2.5, 0);
  for (int i = 0; i < 5; ++i) cloud.points.emplace_back(3.5, 0.1 * i, 0);
  cloud.points.emplace_back(5.5, 2.5, 0.5);
  const VoxelBatch b = prepare_voxels(cloud, cfg, 1);
  ASSERT_EQ(b.num_voxels(), 2);
  EXPECT_EQ(b.original_counts, (std::vector<int>{3, 5}));
  EXPECT_EQ(b.points.rows(), 3 + 5);
  EXPECT_EQ(b.segment.front(), 0);
  EXPECT_EQ(b.segment.back(), 1);
}

TEST(Lidar, VoxelFeaturesIgnorePointOrderInEval) {
  const LidarConfig cfg = toy_lidar();
  ParamStore store(9, 0.3);
  VoxelFeatureEncoder vfe(store, "vfe", cfg);
  // Give the BatchNorm buffers non-trivial running statistics.
  std::mt19937_64 rng(9);
  Matrix voxel = augment(random_cloud(rng, 7).points);
  {
    Tape t;
    Context train{t, true, nullptr};
    vfe.encode_voxel(train, voxel);
  }
  Tape tape(false);
  Context ctx{tape, false, nullptr};
  const Matrix ref = vfe.encode_voxel(ctx, voxel).value();
  std::vector<int> order(7);
  std::iota(order.begin(), order.end(), 0);
  for (int trial = 0; trial < 5; ++trial) {
    std::shuffle(order.begin(), order.end(), rng);
    Matrix perm(7, 6);
    for (int r = 0; r < 7; ++r) perm.row(r) = voxel.row(order[static_cast<std::size_t>(r)]);
    EXPECT_LT((vfe.encode_voxel(ctx, perm).value() - ref).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(Lidar, EncodeRejectsEmptyScenes) {
  ParamStore store(10, 0.3);
  LidarViT lidar(store, "lidar", toy_lidar());
  Tape tape(false);
  Context ctx{tape, false, nullptr};
  PointCloud far;
  far.points.emplace_back(100, 0, 0);
  EXPECT_THROW(lidar.encode(ctx, far, 0), EmptySceneError);
  std::mt19937_64 rng(10);
  const BranchOutput out = lidar.encode(ctx, random_cloud(rng, 200), 0);
  EXPECT_EQ(out.sequence.cols(), 16);
  EXPECT_LE(out.sequence.rows(), 40);
}

// --- fusion ---------------------------------------------------------------

namespace {

FusionConfig toy_fusion(FusionStrategy s) {
  FusionConfig f;
  f.strategy = s;
  f.input_width = 16;
  f.mlp_widths = {12};
  f.max_tokens = 12;
  f.camera_tokens = 4;
  f.lidar_tokens = 6;
  f.encoder = kToyEncoder;
  return f;
}

}  // namespace

TEST(Fusion, FusedTokenCounts) {
  EXPECT_EQ(toy_fusion(FusionStrategy::Concat).fused_tokens(4, 6), 10);
  EXPECT_EQ(toy_fusion(FusionStrategy::Concat).fused_tokens(4, 20), 12);
  EXPECT_EQ(toy_fusion(FusionStrategy::Sum).fused_tokens(4, 6), 6);
  EXPECT_EQ(toy_fusion(FusionStrategy::DirectConcat).fused_tokens(1, 1), 10);
  EXPECT_EQ(fusion_strategy_from_string("direct_concat"), FusionStrategy::DirectConcat);
  EXPECT_THROW(fusion_strategy_from_string("mean"), ConfigError);
}

TEST(Fusion, ConcatPermutesWithItsInputs) {
  ParamStore store(12, 0.3);
  MixViT mix(store, "mix", toy_fusion(FusionStrategy::Concat));
  std::mt19937_64 rng(12);
  const Matrix cam = random_matrix(4, 16, rng);
  const Matrix lid = random_matrix(6, 16, rng);
  Matrix cam_swapped = cam;
  cam_swapped.row(0).swap(cam_swapped.row(2));
  Tape tape(false);
  Context ctx{tape, false, nullptr};
  const Matrix a = mix.fuse(ctx, tape.constant(cam), tape.constant(lid)).value();
  const Matrix b = mix.fuse(ctx, tape.constant(cam_swapped), tape.constant(lid)).value();
  ASSERT_EQ(a.rows(), 10);
  EXPECT_TRUE(a.row(0).isApprox(b.row(2)));
  EXPECT_TRUE(a.row(2).isApprox(b.row(0)));
  EXPECT_TRUE(a.bottomRows(6).isApprox(b.bottomRows(6)));
  EXPECT_EQ(mix(ctx, tape.constant(cam), tape.constant(lid)).cols(), 16);
}

TEST(Fusion, RejectsMismatchedWidthsAndOverlongDirectInputs) {
  ParamStore store(13, 0.3);
  MixViT concat(store, "c", toy_fusion(FusionStrategy::Concat));
  MixViT direct(store, "d", toy_fusion(FusionStrategy::DirectConcat));
  Tape tape(false);
  Context ctx{tape, false, nullptr};
  EXPECT_THROW(concat.fuse(ctx, tape.constant(Matrix::Zero(2, 8)), tape.constant(Matrix::Zero(2, 16))), ConfigError);
  EXPECT_THROW(direct.fuse(ctx, tape.constant(Matrix::Zero(5, 16)), tape.constant(Matrix::Zero(2, 16))),
               ConfigError);
  EXPECT_EQ(direct.fuse(ctx, tape.constant(Matrix::Zero(3, 16)), tape.constant(Matrix::Zero(2, 16))).rows(), 10);
}

TEST(Fusion, GradientsThroughFuseAndEncode) {
  for (FusionStrategy s : {FusionStrategy::Sum, FusionStrategy::Concat, FusionStrategy::DirectConcat}) {
    ParamStore store(14, 0.3);
    MixViT mix(store, "mix", toy_fusion(s));
    std::mt19937_64 rng(14);
    const Matrix cam = random_matrix(3, 16, rng);
    const Matrix lid = random_matrix(5, 16, rng);
    const Matrix w = random_matrix(1, 16, rng);
    auto loss = [&](Tape& tape) {
      Context ctx{tape, true, nullptr};
      return ag::sum(ag::mul(mix(ctx, tape.constant(cam), tape.constant(lid)), tape.constant(w)));
    };
    const auto r = check_param_grads(store, loss, 1e-5, s == FusionStrategy::DirectConcat ? 7 : 1);
    EXPECT_LT(r.max_rel_err, 1e-4) << to_string(s) << " " << r.worst;
  }
}
