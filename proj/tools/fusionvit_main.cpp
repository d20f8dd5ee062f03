#include <cstdio>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"

#include "fusionvit/errors.hpp"
#include "fusionvit/harness.hpp"

using namespace fvit;

namespace {

struct CommonArgs {
  std::string config;
  bool desk = false;
  std::optional<int> steps;
  std::optional<std::uint64_t> seed;
  std::string dataset_root;
};

void add_common(CLI::App* cmd, CommonArgs& a) {
  cmd->add_option("-c,--config", a.config, "JSON run configuration");
  cmd->add_flag("--desk", a.desk, "start from the reduced single-CPU configuration");
  cmd->add_option("--steps", a.steps, "override the step budget");
  cmd->add_option("--seed", a.seed, "override the run seed");
  cmd->add_option("--kitti", a.dataset_root, "read scenes from a KITTI-layout directory");
}

RunConfig resolve(const CommonArgs& a) {
  RunConfig cfg = a.config.empty() ? (a.desk ? desk_config() : RunConfig{}) : load_run_config(a.config);
  if (a.steps) cfg.steps = *a.steps;
  if (a.seed) cfg.seed = *a.seed;
  if (!a.dataset_root.empty()) {
    cfg.dataset.kind = "kitti";
    cfg.dataset.root = a.dataset_root;
  }
  cfg.validate();
  return cfg;
}

void write_text(const std::string& path, const std::string& text) {
  if (path.empty()) return;
  const std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream(p) << text;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Lidar-camera fusion transformer detector"};
  app.require_subcommand(1);

  CommonArgs train_args;
  std::string mode = "fusion", out = "checkpoint.fvit", camera_ckpt, lidar_ckpt, loss_log, write_config;
  auto* train_cmd = app.add_subcommand("train", "train a model and write a checkpoint");
  add_common(train_cmd, train_args);
  train_cmd->add_option("-m,--mode", mode, "camera2d | lidar3d | fusion | fusion_pretrained");
  train_cmd->add_option("-o,--out", out, "checkpoint path");
  train_cmd->add_option("--camera-checkpoint", camera_ckpt, "camera2d checkpoint for fusion_pretrained");
  train_cmd->add_option("--lidar-checkpoint", lidar_ckpt, "lidar3d checkpoint for fusion_pretrained");
  train_cmd->add_option("--loss-log", loss_log, "CSV of per-step losses");
  train_cmd->add_option("--write-config", write_config, "write the resolved configuration and exit");

  CommonArgs eval_args;
  std::string eval_ckpt, eval_json, eval_txt;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(eval_cmd, eval_args);
  eval_cmd->add_option("checkpoint", eval_ckpt, "checkpoint path")->required();
  eval_cmd->add_option("--json", eval_json, "machine-readable report path");
  eval_cmd->add_option("--report", eval_txt, "plain-text report path");

  CommonArgs ablate_args;
  std::string ablate_kind, ablate_json, ablate_txt;
  auto* ablate_cmd = app.add_subcommand("ablate", "train and compare model variants");
  add_common(ablate_cmd, ablate_args);
  ablate_cmd->add_option("kind", ablate_kind, "fusion_strategy | component_removal")->required();
  ablate_cmd->add_option("--json", ablate_json, "machine-readable report path");
  ablate_cmd->add_option("--report", ablate_txt, "plain-text report path");

  CommonArgs render_args;
  std::string render_ckpt, render_dir = "render";
  int render_scene_index = 0;
  double render_min_score = 0.5;
  auto* render_cmd = app.add_subcommand("render", "draw ground truth and predictions for a scene");
  add_common(render_cmd, render_args);
  render_cmd->add_option("--checkpoint", render_ckpt, "checkpoint path (ground truth only when omitted)");
  render_cmd->add_option("--scene", render_scene_index, "scene index in the dataset");
  render_cmd->add_option("-o,--out", render_dir, "output directory");
  render_cmd->add_option("--min-score", render_min_score, "minimum confidence of drawn predictions");

  CommonArgs synth_args;
  std::string synth_dir = "synthetic";
  auto* synth_cmd = app.add_subcommand("make-synth", "write the synthetic dataset in KITTI layout");
  add_common(synth_cmd, synth_args);
  synth_cmd->add_option("-o,--out", synth_dir, "output root");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train_cmd) {
      const RunConfig cfg = resolve(train_args);
      if (!write_config.empty()) {
        save_run_config(write_config, cfg);
        return 0;
      }
      const auto scenes = load_dataset(cfg.dataset, cfg.seed);
      TrainOptions opts;
      opts.camera_checkpoint = camera_ckpt;
      opts.lidar_checkpoint = lidar_ckpt;
      std::ofstream log;
      if (!loss_log.empty()) {
        log.open(loss_log);
        log << "step,total,cls,center,size,heading,corner\n";
      }
      opts.on_step = [&](const StepRecord& r) {
        if (log.is_open()) {
          log << r.step << ',' << r.loss << ',' << r.breakdown.cls << ',' << r.breakdown.center << ','
              << r.breakdown.size << ',' << r.breakdown.heading << ',' << r.breakdown.corner << '\n';
        }
        if (r.step % 50 == 0) std::printf("step %d loss %.5f\n", r.step, r.loss);
      };
      opts.on_eval = [](const EvalPoint& p) { std::printf("step %d mAP %.4f\n", p.step, p.map); };
      const TrainMode m = train_mode_from_string(mode);
      const TrainResult res = train(cfg, m, scenes, opts);
      save_checkpoint(out, *res.model, cfg, static_cast<int>(res.steps.size()));
      if (res.steps_to_target > 0) std::printf("target reached at step %d\n", res.steps_to_target);
      std::printf("wrote %s\n", out.c_str());
    } else if (*eval_cmd) {
      const LoadedCheckpoint ck = load_checkpoint(eval_ckpt);
      RunConfig cfg = ck.config;
      if (!eval_args.config.empty() || eval_args.desk || !eval_args.dataset_root.empty()) {
        const RunConfig over = resolve(eval_args);
        cfg.dataset = over.dataset;
        cfg.eval = over.eval;
      }
      const auto scenes = load_dataset(cfg.dataset, cfg.seed);
      const EvalReport report = evaluate(*ck.model, scenes, cfg.eval);
      const std::string text = format_report(report);
      std::cout << text;
      write_text(eval_txt, text);
      write_text(eval_json, to_json(report).dump(2) + "\n");
    } else if (*ablate_cmd) {
      const RunConfig cfg = resolve(ablate_args);
      const auto scenes = load_dataset(cfg.dataset, cfg.seed);
      const AblationReport report = run_ablation(ablation_kind_from_string(ablate_kind), cfg, scenes);
      const std::string text = format_ablation(report);
      std::cout << text;
      write_text(ablate_txt, text);
      write_text(ablate_json, to_json(report).dump(2) + "\n");
    } else if (*render_cmd) {
      RunConfig cfg = resolve(render_args);
      std::unique_ptr<FusionViT> model;
      if (!render_ckpt.empty()) {
        LoadedCheckpoint ck = load_checkpoint(render_ckpt);
        cfg.model = ck.model->config();
        model = std::move(ck.model);
      }
      const auto scenes = load_dataset(cfg.dataset, cfg.seed);
      if (render_scene_index < 0 || render_scene_index >= static_cast<int>(scenes.size())) {
        throw ConfigError("scene index out of range");
      }
      const RenderResult r = render_scene(model.get(), scenes[static_cast<std::size_t>(render_scene_index)],
                                          cfg.eval, cfg.model.lidar.geometry, render_dir, render_min_score);
      std::printf("wrote %s and %s (%d predictions)\n", r.bev.c_str(), r.camera.c_str(), r.predictions_drawn);
    } else if (*synth_cmd) {
      RunConfig cfg = resolve(synth_args);
      cfg.dataset.kind = "synthetic";
      const auto scenes = load_dataset(cfg.dataset, cfg.seed);
      const KittiLayout layout{synth_dir};
      for (const auto& s : scenes) {
        layout.write(s);
        if (s.placement_shortfall) std::fprintf(stderr, "scene %s: fewer boxes placed than requested\n", s.scene_id.c_str());
      }
      std::printf("wrote %zu scenes to %s\n", scenes.size(), synth_dir.c_str());
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
