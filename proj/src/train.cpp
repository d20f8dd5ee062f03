#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "fusionvit/errors.hpp"
#include "fusionvit/harness.hpp"

namespace fvit {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

std::vector<SceneSample> load_dataset(const DatasetConfig& cfg, std::uint64_t seed) {
  std::vector<SceneSample> scenes;
  if (cfg.kind == "synthetic") {
    for (int i = 0; i < cfg.num_scenes; ++i) {
      scenes.push_back(generate_scene(cfg.synth, cfg.scene_seed + static_cast<std::uint64_t>(i)));
    }
  } else if (cfg.kind == "kitti") {
    const KittiLayout layout{cfg.root};
    for (const auto& id : layout.frame_ids()) scenes.push_back(layout.load(id));
  } else {
    throw ConfigError("unknown dataset kind '" + cfg.kind + "'");
  }
  if (cfg.subsample < 1.0 && !scenes.empty()) {
    std::vector<std::size_t> idx(scenes.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto keep = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(cfg.subsample * scenes.size())));
    idx.resize(keep);
    std::sort(idx.begin(), idx.end());
    std::vector<SceneSample> kept;
    for (std::size_t i : idx) kept.push_back(std::move(scenes[i]));
    scenes = std::move(kept);
  }
  if (scenes.empty()) throw ContractError("dataset is empty");
  return scenes;
}

double Adam::step(ParamStore& store, double lr) {
  double sq = 0;
  for (auto& [name, p] : store.all()) {
    if (p.trainable && p.grad.size() > 0) sq += p.grad.squaredNorm();
  }
  const double norm = std::sqrt(sq);
  const double clip = cfg_.grad_clip > 0 && norm > cfg_.grad_clip ? cfg_.grad_clip / norm : 1.0;
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (auto& [name, p] : store.all()) {
    if (!p.trainable || p.grad.size() == 0) continue;
    auto [it, fresh] = moments_.try_emplace(name);
    Moments& mo = it->second;
    if (fresh) {
      mo.m = Matrix::Zero(p.value.rows(), p.value.cols());
      mo.v = Matrix::Zero(p.value.rows(), p.value.cols());
    }
    const Matrix g = p.grad * clip;
    mo.m = cfg_.beta1 * mo.m + (1 - cfg_.beta1) * g;
    mo.v = cfg_.beta2 * mo.v + (1 - cfg_.beta2) * g.cwiseProduct(g);
    p.value.array() -= lr * (mo.m.array() / c1) / ((mo.v.array() / c2).sqrt() + cfg_.eps);
  }
  return norm;
}

// --- checkpoints ----------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'F', 'V', 'I', 'T', 'C', 'K', 'P', 'T'};

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& in, const std::filesystem::path& path) {
  T v;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw IngestError(path.string() + ": truncated checkpoint");
  return v;
}

std::string get_string(std::istream& in, const std::filesystem::path& path, std::uint64_t n) {
  if (n > (1ULL << 32)) throw IngestError(path.string() + ": corrupt string length");
  std::string s(n, '\0');
  if (!in.read(s.data(), static_cast<std::streamsize>(n))) throw IngestError(path.string() + ": truncated checkpoint");
  return s;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const FusionViT& model, const RunConfig& cfg, int step) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IngestError("cannot write " + path.string());
  RunConfig stored = cfg;
  stored.model = model.config();
  const std::string config = to_json(stored).dump();
  out.write(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(model.mode()));
  put<std::int64_t>(out, step);
  put<std::uint64_t>(out, config.size());
  out.write(config.data(), static_cast<std::streamsize>(config.size()));
  put<std::uint64_t>(out, model.params().all().size());
  for (const auto& [name, p] : model.params().all()) {
    put<std::uint64_t>(out, name.size());
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::int64_t>(out, p.value.rows());
    put<std::int64_t>(out, p.value.cols());
    put<std::uint8_t>(out, p.trainable ? 1 : 0);
    out.write(reinterpret_cast<const char*>(p.value.data()), static_cast<std::streamsize>(p.value.size() * 8));
  }
  if (!out) throw IngestError("failed writing " + path.string());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestError("cannot open checkpoint " + path.string());
  char magic[8];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0) {
    throw IngestError(path.string() + ": not a checkpoint");
  }
  const auto version = get<std::uint32_t>(in, path);
  if (version != kCheckpointVersion) {
    throw IngestError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  }
  const auto mode = get<std::uint32_t>(in, path);
  if (mode > static_cast<std::uint32_t>(TrainMode::FusionPretrained)) throw IngestError(path.string() + ": bad mode");
  LoadedCheckpoint ck;
  ck.step = static_cast<int>(get<std::int64_t>(in, path));
  const std::string config = get_string(in, path, get<std::uint64_t>(in, path));
  ck.config = run_config_from_json(nlohmann::json::parse(config));
  ck.model = std::make_unique<FusionViT>(ck.config.model, static_cast<TrainMode>(mode), ck.config.seed);
  auto& params = ck.model->params();
  const auto count = get<std::uint64_t>(in, path);
  if (count != params.all().size()) {
    throw IngestError(path.string() + ": parameter count " + std::to_string(count) + " does not match the model");
  }
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::string name = get_string(in, path, get<std::uint64_t>(in, path));
    const auto rows = get<std::int64_t>(in, path);
    const auto cols = get<std::int64_t>(in, path);
    get<std::uint8_t>(in, path);
    if (!params.contains(name)) throw IngestError(path.string() + ": unknown parameter " + name);
    Parameter& p = params.at(name);
    if (p.value.rows() != rows || p.value.cols() != cols) {
      throw IngestError(path.string() + ": shape mismatch for " + name);
    }
    if (!in.read(reinterpret_cast<char*>(p.value.data()), static_cast<std::streamsize>(p.value.size() * 8))) {
      throw IngestError(path.string() + ": truncated checkpoint");
    }
  }
  return ck;
}

// --- evaluation -----------------------------------------------------------

EvalReport evaluate(const FusionViT& model, const std::vector<SceneSample>& scenes, const EvalConfig& cfg) {
  if (scenes.empty()) throw ContractError("evaluation needs at least one scene");
  std::vector<SceneResult> results;
  results.reserve(scenes.size());
  const auto start = std::chrono::steady_clock::now();
  for (const auto& s : scenes) {
    const DetectionSet dets = model.predict(s, kEvalSampleSeed, cfg.nms_threshold, cfg.max_detections);
    results.push_back({scored_boxes(dets), model.targets(s), model.target_point_counts(s)});
  }
  const std::chrono::duration<double, std::milli> elapsed = std::chrono::steady_clock::now() - start;
  EvalReport r = evaluate_scenes(results, kNumClasses, cfg.thresholds);
  r.inference_ms = elapsed.count() / static_cast<double>(scenes.size());
  return r;
}

double target_map(const FusionViT& model, const std::vector<SceneSample>& scenes, const EvalConfig& cfg,
                  double threshold) {
  EvalConfig c = cfg;
  c.thresholds.per_class.assign(kNumClasses, threshold);
  c.thresholds.difficulties = {{"overall", 0}};
  const EvalReport r = evaluate(model, scenes, c);
  const OverlapKind kind = model.box_mode() == BoxMode::Spatial3D ? OverlapKind::Spatial : OverlapKind::Planar;
  return r.mean_ap(kind, "overall");
}

nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& c : r.cells) {
    cells.push_back({{"overlap", to_string(c.kind)},
                     {"difficulty", c.difficulty},
                     {"class", class_name(c.cls)},
                     {"iou_threshold", c.threshold},
                     {"ap", c.result.ap},
                     {"aph", c.result.aph},
                     {"num_gt", c.result.num_gt},
                     {"true_positives", c.result.true_positives},
                     {"false_positives", c.result.false_positives},
                     {"recall", c.result.curve.recall},
                     {"precision", c.result.curve.precision},
                     {"heading_precision", c.result.curve.heading_precision}});
  }
  nlohmann::json means = nlohmann::json::object();
  std::vector<std::string> seen;
  for (const auto& c : r.cells) {
    const std::string key = std::string(to_string(c.kind)) + "/" + c.difficulty;
    if (std::find(seen.begin(), seen.end(), key) != seen.end()) continue;
    seen.push_back(key);
    means[key] = {{"map", r.mean_ap(c.kind, c.difficulty)}, {"maph", r.mean_ap(c.kind, c.difficulty, true)}};
  }
  return {{"num_scenes", r.num_scenes}, {"inference_ms", r.inference_ms}, {"mean", means}, {"cells", cells}};
}

std::string format_report(const EvalReport& r) {
  std::ostringstream out;
  char line[160];
  std::snprintf(line, sizeof line, "%-8s %-10s %-12s %6s %8s %8s %6s\n", "overlap", "difficulty", "class", "iou",
                "AP", "APH", "gt");
  out << line;
  for (const auto& c : r.cells) {
    std::snprintf(line, sizeof line, "%-8s %-10s %-12s %6.2f %8.4f %8.4f %6d\n", to_string(c.kind),
                  c.difficulty.c_str(), class_name(c.cls), c.threshold, c.result.ap, c.result.aph, c.result.num_gt);
    out << line;
  }
  std::vector<std::string> seen;
  for (const auto& c : r.cells) {
    const std::string key = std::string(to_string(c.kind)) + "/" + c.difficulty;
    if (std::find(seen.begin(), seen.end(), key) != seen.end()) continue;
    seen.push_back(key);
    std::snprintf(line, sizeof line, "mAP %-20s %8.4f  mAPH %8.4f\n", key.c_str(), r.mean_ap(c.kind, c.difficulty),
                  r.mean_ap(c.kind, c.difficulty, true));
    out << line;
  }
  std::snprintf(line, sizeof line, "scenes %d, %.2f ms per scene\n", r.num_scenes, r.inference_ms);
  out << line;
  return out.str();
}

// --- training -------------------------------------------------------------

namespace {

[[noreturn]] void dump_and_abort(const std::filesystem::path& dir, const RunConfig& cfg, TrainMode mode, int step,
                                 const std::vector<const SceneSample*>& batch, const LossBreakdown& b) {
  const auto root = dir / ("nonfinite_step" + std::to_string(step));
  std::filesystem::create_directories(root);
  nlohmann::json ids = nlohmann::json::array();
  for (const auto* s : batch) {
    ids.push_back(s->scene_id);
    KittiLayout{root / "batch"}.write(*s);
  }
  const nlohmann::json diag = {
      {"step", step},
      {"mode", to_string(mode)},
      {"scenes", ids},
      {"loss", {{"total", b.total}, {"cls", b.cls}, {"center", b.center}, {"size", b.size}, {"heading", b.heading},
                {"corner", b.corner}}},
      {"config", to_json(cfg)}};
  std::ofstream(root / "diagnostic.json") << diag.dump(2) << '\n';
  throw NonFiniteLossError("non-finite loss at step " + std::to_string(step) + "; batch dumped to " + root.string());
}

}  // namespace

TrainResult train(const RunConfig& cfg, TrainMode mode, const std::vector<SceneSample>& scenes,
                  const TrainOptions& opts) {
  cfg.validate();
  if (scenes.empty()) throw ContractError("training needs at least one scene");
  TrainResult res;
  res.model = std::make_unique<FusionViT>(cfg.model, mode, cfg.seed);
  FusionViT& model = *res.model;
  if (mode == TrainMode::FusionPretrained) {
    if (opts.camera_checkpoint.empty() || opts.lidar_checkpoint.empty()) {
      throw ConfigError("fusion_pretrained needs camera and lidar checkpoints");
    }
    const LoadedCheckpoint cam = load_checkpoint(opts.camera_checkpoint);
    const LoadedCheckpoint lid = load_checkpoint(opts.lidar_checkpoint);
    if (cam.model->mode() != TrainMode::Camera2d || lid.model->mode() != TrainMode::Lidar3d) {
      throw ConfigError("pretrained checkpoints must come from camera2d and lidar3d runs");
    }
    model.params().copy_prefix_from(cam.model->params(), "camera.");
    model.params().copy_prefix_from(lid.model->params(), "lidar.");
  }

  Adam adam(cfg.optimizer);
  std::mt19937_64 rng(cfg.seed ^ 0x5eed5eed5eedULL);
  std::vector<std::size_t> order(scenes.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t cursor = order.size();

  auto check_target = [&](int step) {
    const EvalPoint point{step, target_map(model, scenes, cfg.eval, cfg.target_threshold)};
    res.evals.push_back(point);
    if (opts.on_eval) opts.on_eval(point);
    if (cfg.target_map > 0 && point.map >= cfg.target_map && res.steps_to_target < 0) res.steps_to_target = step;
  };

  for (int step = 1; step <= cfg.steps; ++step) {
    std::vector<const SceneSample*> batch;
    for (int b = 0; b < cfg.batch_size; ++b) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      batch.push_back(&scenes[order[cursor++]]);
    }

    model.params().zero_grad();
    Tape tape;
    Context ctx{tape, true, &rng};
    StepRecord rec{step, 0, {}};
    std::vector<Var> losses;
    std::vector<SceneSample> augmented;
    augmented.reserve(batch.size());
    for (const SceneSample* s : batch) {
      const std::uint64_t aug_seed = rng();
      const std::uint64_t sample_seed = rng();
      const SceneSample* input = s;
      if (cfg.augment) {
        augmented.push_back(augment_scene(*s, cfg.augmentation, aug_seed));
        input = &augmented.back();
      }
      const HeadOutput out = model.forward(ctx, *input, sample_seed);
      LossBreakdown b;
      losses.push_back(detection_loss(out.box_raw, out.logits, model.targets(*input), model.coder(), cfg.loss, &b));
      rec.breakdown.total += b.total;
      rec.breakdown.cls += b.cls;
      rec.breakdown.center += b.center;
      rec.breakdown.size += b.size;
      rec.breakdown.heading += b.heading;
      rec.breakdown.corner += b.corner;
    }
    const double inv = 1.0 / static_cast<double>(batch.size());
    for (double* v : {&rec.breakdown.total, &rec.breakdown.cls, &rec.breakdown.center, &rec.breakdown.size,
                      &rec.breakdown.heading, &rec.breakdown.corner}) {
      *v *= inv;
    }
    rec.breakdown.lambda1 = cfg.loss.lambda_cls;
    rec.breakdown.lambda2 = cfg.loss.lambda_reg;
    rec.breakdown.lambda3 = cfg.loss.lambda_corner;
    rec.loss = rec.breakdown.total;
    if (!std::isfinite(rec.loss)) dump_and_abort(opts.dump_dir, cfg, mode, step, batch, rec.breakdown);

    Var total = losses.front();
    for (std::size_t i = 1; i < losses.size(); ++i) total = ag::add(total, losses[i]);
    tape.backward(ag::scale(total, inv));
    adam.step(model.params(), cfg.optimizer.lr_at(step, cfg.steps));

    res.steps.push_back(rec);
    if (opts.on_step) opts.on_step(rec);
    if (cfg.eval_every > 0 && step % cfg.eval_every == 0) {
      check_target(step);
      if (res.steps_to_target > 0) break;
    }
  }
  return res;
}

}  // namespace fvit
