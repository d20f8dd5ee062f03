#include "fusionvit/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <initializer_list>

#include "fusionvit/errors.hpp"

namespace fvit {

using nlohmann::json;

const char* to_string(TrainMode m) {
  switch (m) {
    case TrainMode::Camera2d:
      return "camera2d";
    case TrainMode::Lidar3d:
      return "lidar3d";
    case TrainMode::Fusion:
      return "fusion";
    case TrainMode::FusionPretrained:
      return "fusion_pretrained";
  }
  return "?";
}

TrainMode train_mode_from_string(const std::string& s) {
  for (TrainMode m : {TrainMode::Camera2d, TrainMode::Lidar3d, TrainMode::Fusion, TrainMode::FusionPretrained}) {
    if (s == to_string(m)) return m;
  }
  throw ConfigError("unknown training mode '" + s + "'");
}

namespace {

const char* to_string(Activation a) {
  switch (a) {
    case Activation::Gelu:
      return "gelu";
    case Activation::Silu:
      return "silu";
    case Activation::Identity:
      return "identity";
  }
  return "?";
}

Activation activation_from_string(const std::string& s) {
  for (Activation a : {Activation::Gelu, Activation::Silu, Activation::Identity}) {
    if (s == to_string(a)) return a;
  }
  throw ConfigError("unknown activation '" + s + "'");
}

void check_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError(where + ": unknown key '" + key + "'");
  }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string(key) + ": " + e.what());
  }
}

json vec3(const Eigen::Vector3d& v) { return json::array({v.x(), v.y(), v.z()}); }

void read_vec3(const json& j, const char* key, Eigen::Vector3d& out) {
  if (!j.contains(key)) return;
  const auto v = j.at(key).get<std::vector<double>>();
  if (v.size() != 3) throw ConfigError(std::string(key) + ": expected 3 values");
  out = {v[0], v[1], v[2]};
}

json encoder_json(const EncoderConfig& e) {
  return {{"depth", e.depth},           {"width", e.width},     {"heads", e.heads},
          {"mlp_hidden", e.mlp_hidden}, {"dropout", e.dropout}, {"activation", to_string(e.activation)}};
}

void encoder_from(const json& j, EncoderConfig& e) {
  check_keys(j, "encoder", {"depth", "width", "heads", "mlp_hidden", "dropout", "activation"});
  read(j, "depth", e.depth);
  read(j, "width", e.width);
  read(j, "heads", e.heads);
  read(j, "mlp_hidden", e.mlp_hidden);
  read(j, "dropout", e.dropout);
  if (j.contains("activation")) e.activation = activation_from_string(j.at("activation").get<std::string>());
}

json coder_json(const BoxCoder& c) {
  return {{"center_offset", c.center_offset}, {"center_scale", c.center_scale}, {"size_prior", c.size_prior}};
}

void coder_from(const json& j, BoxCoder& c) {
  check_keys(j, "coder", {"center_offset", "center_scale", "size_prior"});
  read(j, "center_offset", c.center_offset);
  read(j, "center_scale", c.center_scale);
  read(j, "size_prior", c.size_prior);
}

json synth_json(const SynthConfig& s) {
  json classes = json::array();
  for (const auto& c : s.classes) {
    classes.push_back({{"min_count", c.min_count},
                       {"max_count", c.max_count},
                       {"size_mean", c.size_mean},
                       {"size_jitter", c.size_jitter}});
  }
  return {{"classes", classes},
          {"surface_density", s.surface_density},
          {"ground_points", s.ground_points},
          {"clutter_poles", s.clutter_poles},
          {"points_per_pole", s.points_per_pole},
          {"ground_noise", s.ground_noise},
          {"ground_z", s.ground_z},
          {"min_x", s.min_x},
          {"max_x", s.max_x},
          {"max_abs_y", s.max_abs_y},
          {"lateral_fov", s.lateral_fov},
          {"image_width", s.image_width},
          {"image_height", s.image_height},
          {"range_min", vec3(s.range.range_min)},
          {"range_max", vec3(s.range.range_max)}};
}

void synth_from(const json& j, SynthConfig& s) {
  check_keys(j, "synth",
             {"classes", "surface_density", "ground_points", "clutter_poles", "points_per_pole", "ground_noise",
              "ground_z", "min_x", "max_x", "max_abs_y", "lateral_fov", "image_width", "image_height", "range_min",
              "range_max"});
  if (j.contains("classes")) {
    const auto& cs = j.at("classes");
    if (!cs.is_array() || cs.size() != s.classes.size()) throw ConfigError("synth.classes: expected 2 entries");
    for (std::size_t i = 0; i < s.classes.size(); ++i) {
      check_keys(cs[i], "synth.classes", {"min_count", "max_count", "size_mean", "size_jitter"});
      read(cs[i], "min_count", s.classes[i].min_count);
      read(cs[i], "max_count", s.classes[i].max_count);
      read(cs[i], "size_mean", s.classes[i].size_mean);
      read(cs[i], "size_jitter", s.classes[i].size_jitter);
    }
  }
  read(j, "surface_density", s.surface_density);
  read(j, "ground_points", s.ground_points);
  read(j, "clutter_poles", s.clutter_poles);
  read(j, "points_per_pole", s.points_per_pole);
  read(j, "ground_noise", s.ground_noise);
  read(j, "ground_z", s.ground_z);
  read(j, "min_x", s.min_x);
  read(j, "max_x", s.max_x);
  read(j, "max_abs_y", s.max_abs_y);
  read(j, "lateral_fov", s.lateral_fov);
  read(j, "image_width", s.image_width);
  read(j, "image_height", s.image_height);
  read_vec3(j, "range_min", s.range.range_min);
  read_vec3(j, "range_max", s.range.range_max);
}

}  // namespace

json to_json(const RunConfig& c) {
  const ModelConfig& m = c.model;
  json model = {
      {"camera",
       {{"patch_h", m.camera.patch_h},
        {"patch_w", m.camera.patch_w},
        {"mlp_widths", m.camera.mlp_widths},
        {"max_tokens", m.camera.max_tokens},
        {"encoder", encoder_json(m.camera.encoder)}}},
      {"lidar",
       {{"voxel_size", vec3(m.lidar.geometry.voxel_size)},
        {"range_min", vec3(m.lidar.geometry.range_min)},
        {"range_max", vec3(m.lidar.geometry.range_max)},
        {"max_points_per_voxel", m.lidar.max_points_per_voxel},
        {"max_voxels", m.lidar.max_voxels},
        {"point_mlp_widths", m.lidar.point_mlp_widths},
        {"vfe_layers", m.lidar.vfe_layers},
        {"vfe_width", m.lidar.vfe_width},
        {"vfe_scene_statistics", m.lidar.vfe_scene_statistics},
        {"encoder", encoder_json(m.lidar.encoder)}}},
      {"fusion",
       {{"strategy", to_string(m.fusion.strategy)},
        {"mlp_widths", m.fusion.mlp_widths},
        {"max_tokens", m.fusion.max_tokens},
        {"camera_tokens", m.fusion.camera_tokens},
        {"lidar_tokens", m.fusion.lidar_tokens},
        {"encoder", encoder_json(m.fusion.encoder)}}},
      {"head_hidden", m.head_hidden},
      {"proposals", m.proposals},
      {"init_std", m.init_std},
      {"init_fan_in", m.init_fan_in},
      {"coder3d", coder_json(m.coder3d)},
      {"coder2d", coder_json(m.coder2d)},
      {"remove", {{"camera", m.removal.camera}, {"lidar", m.removal.lidar}, {"mix", m.removal.mix}}}};
  const LossConfig& l = c.loss;
  json loss = {{"lambda_cls", l.lambda_cls},
               {"lambda_reg", l.lambda_reg},
               {"lambda_corner", l.lambda_corner},
               {"gamma", l.gamma},
               {"laplace_scale", l.laplace_scale},
               {"no_object_weight", l.no_object_weight},
               {"prob_clamp", l.prob_clamp},
               {"corner_heading_flip", l.corner_heading_flip},
               {"match_class_weight", l.match.class_weight},
               {"match_box_weight", l.match.box_weight}};
  const OptimizerConfig& o = c.optimizer;
  json opt = {{"lr", o.lr},
             {"beta1", o.beta1},
             {"beta2", o.beta2},
             {"eps", o.eps},
             {"grad_clip", o.grad_clip},
             {"schedule", o.schedule},
             {"warmup_steps", o.warmup_steps}};
  json data = {{"kind", c.dataset.kind},
               {"root", c.dataset.root.string()},
               {"num_scenes", c.dataset.num_scenes},
               {"scene_seed", c.dataset.scene_seed},
               {"subsample", c.dataset.subsample},
               {"synth", synth_json(c.dataset.synth)}};
  const AugmentConfig& a = c.augmentation;
  json aug = {{"flip_prob", a.flip_prob},     {"rotate_prob", a.rotate_prob},       {"rotate_max", a.rotate_max},
              {"scale_prob", a.scale_prob},   {"scale_min", a.scale_min},           {"scale_max", a.scale_max},
              {"translate_prob", a.translate_prob}, {"translate_std", a.translate_std}, {"shuffle_points", a.shuffle_points}};
  json diffs = json::array();
  for (const auto& d : c.eval.thresholds.difficulties) diffs.push_back({{"name", d.name}, {"min_points", d.min_points}});
  json eval = {{"iou_thresholds", c.eval.thresholds.per_class},
               {"difficulties", diffs},
               {"nms_threshold", c.eval.nms_threshold},
               {"max_detections", c.eval.max_detections}};
  return {{"model", model},
          {"loss", loss},
          {"optimizer", opt},
          {"dataset", data},
          {"augment", c.augment},
          {"augmentation", aug},
          {"eval", eval},
          {"steps", c.steps},
          {"batch_size", c.batch_size},
          {"seed", c.seed},
          {"eval_every", c.eval_every},
          {"target_map", c.target_map},
          {"target_threshold", c.target_threshold}};
}

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  check_keys(j, "config",
             {"model", "loss", "optimizer", "dataset", "augment", "augmentation", "eval", "steps", "batch_size", "seed",
              "eval_every", "target_map", "target_threshold"});
  if (j.contains("model")) {
    const json& m = j.at("model");
    check_keys(m, "model", {"camera", "lidar", "fusion", "head_hidden", "proposals", "init_std", "init_fan_in", "coder3d", "coder2d", "remove"});
    ModelConfig& mc = c.model;
    if (m.contains("camera")) {
      const json& x = m.at("camera");
      check_keys(x, "camera", {"patch_h", "patch_w", "mlp_widths", "max_tokens", "encoder"});
      read(x, "patch_h", mc.camera.patch_h);
      read(x, "patch_w", mc.camera.patch_w);
      read(x, "mlp_widths", mc.camera.mlp_widths);
      read(x, "max_tokens", mc.camera.max_tokens);
      if (x.contains("encoder")) encoder_from(x.at("encoder"), mc.camera.encoder);
    }
    if (m.contains("lidar")) {
      const json& x = m.at("lidar");
      check_keys(x, "lidar",
                 {"voxel_size", "range_min", "range_max", "max_points_per_voxel", "max_voxels", "point_mlp_widths",
                  "vfe_layers", "vfe_width", "vfe_scene_statistics", "encoder"});
      read_vec3(x, "voxel_size", mc.lidar.geometry.voxel_size);
      read_vec3(x, "range_min", mc.lidar.geometry.range_min);
      read_vec3(x, "range_max", mc.lidar.geometry.range_max);
      read(x, "max_points_per_voxel", mc.lidar.max_points_per_voxel);
      read(x, "max_voxels", mc.lidar.max_voxels);
      read(x, "point_mlp_widths", mc.lidar.point_mlp_widths);
      read(x, "vfe_layers", mc.lidar.vfe_layers);
      read(x, "vfe_width", mc.lidar.vfe_width);
      read(x, "vfe_scene_statistics", mc.lidar.vfe_scene_statistics);
      if (x.contains("encoder")) encoder_from(x.at("encoder"), mc.lidar.encoder);
    }
    if (m.contains("fusion")) {
      const json& x = m.at("fusion");
      check_keys(x, "fusion", {"strategy", "mlp_widths", "max_tokens", "camera_tokens", "lidar_tokens", "encoder"});
      if (x.contains("strategy")) mc.fusion.strategy = fusion_strategy_from_string(x.at("strategy").get<std::string>());
      read(x, "mlp_widths", mc.fusion.mlp_widths);
      read(x, "max_tokens", mc.fusion.max_tokens);
      read(x, "camera_tokens", mc.fusion.camera_tokens);
      read(x, "lidar_tokens", mc.fusion.lidar_tokens);
      if (x.contains("encoder")) encoder_from(x.at("encoder"), mc.fusion.encoder);
    }
    read(m, "head_hidden", mc.head_hidden);
    read(m, "proposals", mc.proposals);
    read(m, "init_std", mc.init_std);
    read(m, "init_fan_in", mc.init_fan_in);
    if (m.contains("coder3d")) coder_from(m.at("coder3d"), mc.coder3d);
    if (m.contains("coder2d")) coder_from(m.at("coder2d"), mc.coder2d);
    if (m.contains("remove")) {
      const json& x = m.at("remove");
      check_keys(x, "remove", {"camera", "lidar", "mix"});
      read(x, "camera", mc.removal.camera);
      read(x, "lidar", mc.removal.lidar);
      read(x, "mix", mc.removal.mix);
    }
  }
  if (j.contains("loss")) {
    const json& x = j.at("loss");
    check_keys(x, "loss",
               {"lambda_cls", "lambda_reg", "lambda_corner", "gamma", "laplace_scale", "no_object_weight", "prob_clamp",
                "corner_heading_flip", "match_class_weight", "match_box_weight"});
    read(x, "lambda_cls", c.loss.lambda_cls);
    read(x, "lambda_reg", c.loss.lambda_reg);
    read(x, "lambda_corner", c.loss.lambda_corner);
    read(x, "gamma", c.loss.gamma);
    read(x, "laplace_scale", c.loss.laplace_scale);
    read(x, "no_object_weight", c.loss.no_object_weight);
    read(x, "prob_clamp", c.loss.prob_clamp);
    read(x, "corner_heading_flip", c.loss.corner_heading_flip);
    read(x, "match_class_weight", c.loss.match.class_weight);
    read(x, "match_box_weight", c.loss.match.box_weight);
  }
  if (j.contains("optimizer")) {
    const json& x = j.at("optimizer");
    check_keys(x, "optimizer", {"lr", "beta1", "beta2", "eps", "grad_clip", "schedule", "warmup_steps"});
    read(x, "lr", c.optimizer.lr);
    read(x, "beta1", c.optimizer.beta1);
    read(x, "beta2", c.optimizer.beta2);
    read(x, "eps", c.optimizer.eps);
    read(x, "grad_clip", c.optimizer.grad_clip);
    read(x, "schedule", c.optimizer.schedule);
    read(x, "warmup_steps", c.optimizer.warmup_steps);
  }
  if (j.contains("dataset")) {
    const json& x = j.at("dataset");
    check_keys(x, "dataset", {"kind", "root", "num_scenes", "scene_seed", "subsample", "synth"});
    read(x, "kind", c.dataset.kind);
    if (x.contains("root")) c.dataset.root = x.at("root").get<std::string>();
    read(x, "num_scenes", c.dataset.num_scenes);
    read(x, "scene_seed", c.dataset.scene_seed);
    read(x, "subsample", c.dataset.subsample);
    if (x.contains("synth")) synth_from(x.at("synth"), c.dataset.synth);
  }
  read(j, "augment", c.augment);
  if (j.contains("augmentation")) {
    const json& x = j.at("augmentation");
    AugmentConfig& a = c.augmentation;
    check_keys(x, "augmentation",
               {"flip_prob", "rotate_prob", "rotate_max", "scale_prob", "scale_min", "scale_max", "translate_prob",
                "translate_std", "shuffle_points"});
    read(x, "flip_prob", a.flip_prob);
    read(x, "rotate_prob", a.rotate_prob);
    read(x, "rotate_max", a.rotate_max);
    read(x, "scale_prob", a.scale_prob);
    read(x, "scale_min", a.scale_min);
    read(x, "scale_max", a.scale_max);
    read(x, "translate_prob", a.translate_prob);
    read(x, "translate_std", a.translate_std);
    read(x, "shuffle_points", a.shuffle_points);
  }
  if (j.contains("eval")) {
    const json& x = j.at("eval");
    check_keys(x, "eval", {"iou_thresholds", "difficulties", "nms_threshold", "max_detections"});
    read(x, "iou_thresholds", c.eval.thresholds.per_class);
    if (x.contains("difficulties")) {
      c.eval.thresholds.difficulties.clear();
      for (const auto& d : x.at("difficulties")) {
        check_keys(d, "difficulties", {"name", "min_points"});
        c.eval.thresholds.difficulties.push_back({d.at("name").get<std::string>(), d.value("min_points", 0)});
      }
    }
    read(x, "nms_threshold", c.eval.nms_threshold);
    read(x, "max_detections", c.eval.max_detections);
  }
  read(j, "steps", c.steps);
  read(j, "batch_size", c.batch_size);
  read(j, "seed", c.seed);
  read(j, "eval_every", c.eval_every);
  read(j, "target_map", c.target_map);
  read(j, "target_threshold", c.target_threshold);
  c.validate();
  return c;
}

void RunConfig::validate() const {
  model.camera.encoder.validate();
  model.lidar.encoder.validate();
  model.fusion.encoder.validate();
  if (model.camera.encoder.width != model.lidar.encoder.width) {
    throw ConfigError("camera and lidar token widths must match for fusion");
  }
  if (model.proposals <= 0) throw ConfigError("proposals must be positive");
  if (!(model.init_std > 0)) throw ConfigError("init_std must be positive");
  if (model.camera.patch_h <= 0 || model.camera.patch_w <= 0) throw ConfigError("patch size must be positive");
  model.coder3d.validate();
  model.coder2d.validate();
  if (!(optimizer.lr > 0)) throw ConfigError("learning rate must be positive");
  if (optimizer.schedule != "constant" && optimizer.schedule != "cosine") {
    throw ConfigError("optimizer.schedule must be constant or cosine");
  }
  if (optimizer.warmup_steps < 0) throw ConfigError("warmup_steps must be >= 0");
  if (steps < 0 || batch_size <= 0) throw ConfigError("steps >= 0 and batch_size > 0 required");
  if (!(dataset.subsample > 0 && dataset.subsample <= 1)) throw ConfigError("subsample must be in (0, 1]");
  if (dataset.kind != "synthetic" && dataset.kind != "kitti") throw ConfigError("dataset kind must be synthetic or kitti");
  if (dataset.kind == "synthetic") dataset.synth.validate();
  if (eval.thresholds.per_class.size() != static_cast<std::size_t>(kNumClasses)) {
    throw ConfigError("eval.iou_thresholds needs one value per class");
  }
  if (!(loss.laplace_scale > 0)) throw ConfigError("laplace scale must be positive");
}

double OptimizerConfig::lr_at(int step, int total) const {
  double f = 1.0;
  if (warmup_steps > 0 && step <= warmup_steps) f = static_cast<double>(step) / warmup_steps;
  if (schedule == "cosine" && total > warmup_steps) {
    const double progress = static_cast<double>(std::max(0, step - 1 - warmup_steps)) / (total - warmup_steps);
    f *= 0.5 * (1.0 + std::cos(3.14159265358979323846 * std::min(1.0, progress)));
  }
  return lr * f;
}

bool RunConfig::operator==(const RunConfig& o) const { return to_json(*this) == to_json(o); }

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return run_config_from_json(j);
}

void save_run_config(const std::filesystem::path& path, const RunConfig& cfg) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write config " + path.string());
  out << to_json(cfg).dump(2) << '\n';
}

RunConfig desk_config() {
  RunConfig c;
  const EncoderConfig enc{.depth = 2, .width = 64, .heads = 4, .mlp_hidden = 128, .dropout = 0.0};
  ModelConfig& m = c.model;
  m.camera.patch_h = 16;
  m.camera.patch_w = 16;
  m.camera.mlp_widths = {128, 64};
  m.camera.max_tokens = 64;
  m.camera.encoder = enc;
  m.lidar.geometry = c.dataset.synth.range;
  m.lidar.max_points_per_voxel = 16;
  m.lidar.max_voxels = 64;
  m.lidar.point_mlp_widths = {32, 32};
  m.lidar.vfe_layers = 2;
  m.lidar.vfe_width = 32;
  m.lidar.vfe_scene_statistics = true;
  m.lidar.encoder = enc;
  m.fusion.mlp_widths = {64};
  m.fusion.max_tokens = 128;
  m.fusion.camera_tokens = 32;
  m.fusion.lidar_tokens = 64;
  m.fusion.encoder = enc;
  m.head_hidden = {128};
  m.proposals = 32;
  m.init_fan_in = true;
  const SynthConfig& s = c.dataset.synth;
  m.coder3d = BoxCoder{BoxMode::Spatial3D,
                       {(s.min_x + s.max_x) / 2, 0.0, s.ground_z + 0.8},
                       {(s.max_x - s.min_x) / 2, s.max_abs_y, 0.5},
                       {2.4, 1.25, 1.65}};
  m.coder2d = BoxCoder{BoxMode::Planar2D,
                       {s.image_width / 2.0, s.image_height / 2.0},
                       {s.image_width / 2.0, s.image_height / 2.0},
                       {16.0, 16.0}};
  c.optimizer.lr = 1e-3;
  c.optimizer.schedule = "cosine";
  c.batch_size = 4;
  c.steps = 2000;
  c.eval_every = 100;
  return c;
}

}  // namespace fvit
