#include <gtest/gtest.h>

#include "fusionvit/model.hpp"
#include "test_util.hpp"

using namespace fvit;
using fvit::testing::check_param_grads;
using fvit::testing::toy_config;

namespace {

double end_to_end_error(TrainMode mode, FusionStrategy strategy = FusionStrategy::Concat) {
  RunConfig cfg = toy_config();
  cfg.model.fusion.strategy = strategy;
  FusionViT model(cfg.model, mode, 3);
  const SceneSample scene = generate_scene(cfg.dataset.synth, 41);
  auto loss = [&](Tape& tape) {
    Context ctx{tape, true, nullptr};
    const HeadOutput out = model.forward(ctx, scene, 5);
    return detection_loss(out.box_raw, out.logits, model.targets(scene), model.coder(), cfg.loss);
  };
  const auto r = check_param_grads(model.params(), loss, 1e-5, 3);
  EXPECT_GT(r.checked, 50);
  if (r.max_rel_err >= 1e-4) ADD_FAILURE() << r.worst;
  return r.max_rel_err;
}

}  // namespace

TEST(ModelGradients, FusionConcat) { EXPECT_LT(end_to_end_error(TrainMode::Fusion), 1e-4); }
TEST(ModelGradients, FusionSum) { EXPECT_LT(end_to_end_error(TrainMode::Fusion, FusionStrategy::Sum), 1e-4); }
TEST(ModelGradients, FusionDirectConcat) {
  EXPECT_LT(end_to_end_error(TrainMode::Fusion, FusionStrategy::DirectConcat), 1e-4);
}
TEST(ModelGradients, LidarOnly) { EXPECT_LT(end_to_end_error(TrainMode::Lidar3d), 1e-4); }
TEST(ModelGradients, CameraOnly) { EXPECT_LT(end_to_end_error(TrainMode::Camera2d), 1e-4); }
