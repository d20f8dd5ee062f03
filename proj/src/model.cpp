#include "fusionvit/model.hpp"

#include "fusionvit/errors.hpp"

namespace fvit {

ImageTensor prepare_image(const Rgb8Image& img, const CameraConfig& cfg) {
  return normalize(pad_to_multiple(img, cfg.patch_h, cfg.patch_w));
}

FusionViT::FusionViT(const ModelConfig& cfg, TrainMode mode, std::uint64_t seed)
    : cfg_(cfg), mode_(mode), store_(seed, cfg.init_std, cfg.init_fan_in) {
  cfg_.fusion.input_width = cfg_.camera.encoder.width;
  const bool use_camera = mode != TrainMode::Lidar3d;
  const bool use_lidar = mode != TrainMode::Camera2d;
  if (use_camera) camera_.emplace(store_, "camera", cfg_.camera, cfg_.removal.camera);
  if (use_lidar) lidar_.emplace(store_, "lidar", cfg_.lidar, cfg_.removal.lidar);
  Eigen::Index width = 0;
  BoxMode box_mode = BoxMode::Spatial3D;
  if (use_camera && use_lidar) {
    if (cfg_.camera.encoder.width != cfg_.lidar.encoder.width) {
      throw ConfigError("camera and lidar token widths must match for fusion");
    }
    mix_.emplace(store_, "mix", cfg_.fusion, cfg_.removal.mix);
    width = cfg_.fusion.encoder.width;
  } else if (use_camera) {
    width = cfg_.camera.encoder.width;
    box_mode = BoxMode::Planar2D;
  } else {
    width = cfg_.lidar.encoder.width;
  }
  head_ = DetectionHead(store_, "head", width, cfg_.head_hidden, cfg_.proposals, kNumClasses, box_mode);
}

HeadOutput FusionViT::forward(Context& ctx, const SceneSample& s, std::uint64_t sample_seed) const {
  std::optional<BranchOutput> cam, lid;
  if (camera_) cam = camera_->encode(ctx, prepare_image(s.image, cfg_.camera));
  if (lidar_) lid = lidar_->encode(ctx, s.cloud, sample_seed);
  if (mix_) return head_(ctx, (*mix_)(ctx, cam->sequence, lid->sequence));
  return head_(ctx, cam ? cam->readout : lid->readout);
}

GroundTruth FusionViT::targets(const SceneSample& s) const {
  return box_mode() == BoxMode::Spatial3D ? s.gt : s.gt_2d();
}

std::vector<int> FusionViT::target_point_counts(const SceneSample& s) const {
  if (box_mode() == BoxMode::Spatial3D) return s.point_counts;
  std::vector<int> out;
  for (std::size_t m = 0; m < s.boxes_2d.size(); ++m) {
    if (s.boxes_2d[m].valid() && m < s.point_counts.size()) out.push_back(s.point_counts[m]);
  }
  return out;
}

DetectionSet FusionViT::predict(const SceneSample& s, std::uint64_t sample_seed, double nms_threshold,
                                int max_out) const {
  Tape tape(false);
  Context ctx{tape, false, nullptr};
  const HeadOutput out = forward(ctx, s, sample_seed);
  const DetectionSet dets = predict_heads(out.box_raw.value(), out.logits.value(), coder());
  return nms(dets, nms_threshold, static_cast<std::size_t>(max_out));
}

}  // namespace fvit
