#include <cstdio>
#include <sstream>

#include "fusionvit/errors.hpp"
#include "fusionvit/harness.hpp"

namespace fvit {

const char* to_string(AblationKind k) {
  return k == AblationKind::FusionStrategy ? "fusion_strategy" : "component_removal";
}

AblationKind ablation_kind_from_string(const std::string& s) {
  if (s == "fusion_strategy") return AblationKind::FusionStrategy;
  if (s == "component_removal") return AblationKind::ComponentRemoval;
  throw ConfigError("unknown ablation '" + s + "'");
}

AblationReport run_ablation(AblationKind kind, const RunConfig& cfg, const std::vector<SceneSample>& scenes) {
  struct Variant {
    std::string name;
    RunConfig cfg;
  };
  RunConfig base = cfg;
  base.target_map = 0;
  base.eval_every = 0;
  std::vector<Variant> variants;
  if (kind == AblationKind::FusionStrategy) {
    for (FusionStrategy s : {FusionStrategy::Sum, FusionStrategy::Concat, FusionStrategy::DirectConcat}) {
      Variant v{to_string(s), base};
      v.cfg.model.fusion.strategy = s;
      variants.push_back(v);
    }
  } else {
    const std::pair<const char*, ComponentRemoval> rows[] = {
        {"Normal", {false, false, false}},
        {"Without CameraViT", {true, false, false}},
        {"Without LidarViT", {false, true, false}},
        {"Without Both", {true, true, false}},
        {"Without MixViT", {false, false, true}},
    };
    for (const auto& [name, removal] : rows) {
      Variant v{name, base};
      v.cfg.model.removal = removal;
      variants.push_back(v);
    }
  }
  AblationReport report;
  report.kind = kind;
  for (const Variant& v : variants) {
    const TrainResult trained = train(v.cfg, TrainMode::Fusion, scenes);
    report.rows.push_back({v.name, evaluate(*trained.model, scenes, v.cfg.eval)});
  }
  return report;
}

namespace {

double cell(const EvalReport& r, OverlapKind kind, int cls, bool heading) {
  const MetricCell* c = r.find(kind, "overall", cls);
  if (c == nullptr) return 0.0;
  return heading ? c->result.aph : c->result.ap;
}

}  // namespace

std::string format_ablation(const AblationReport& r) {
  std::ostringstream out;
  char line[200];
  std::snprintf(line, sizeof line, "%-20s", "variant");
  out << line;
  for (int cls = 0; cls < kNumClasses; ++cls) {
    std::snprintf(line, sizeof line, " %10s AP %10s APH", class_name(cls), class_name(cls));
    out << line;
  }
  out << "   mAP_BEV    mAP_3D\n";
  for (const auto& row : r.rows) {
    std::snprintf(line, sizeof line, "%-20s", row.name.c_str());
    out << line;
    for (int cls = 0; cls < kNumClasses; ++cls) {
      std::snprintf(line, sizeof line, " %13.4f %14.4f", cell(row.report, OverlapKind::Spatial, cls, false),
                    cell(row.report, OverlapKind::Spatial, cls, true));
      out << line;
    }
    std::snprintf(line, sizeof line, " %9.4f %9.4f\n", row.report.mean_ap(OverlapKind::Bev, "overall"),
                  row.report.mean_ap(OverlapKind::Spatial, "overall"));
    out << line;
  }
  return out.str();
}

nlohmann::json to_json(const AblationReport& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : r.rows) {
    nlohmann::json classes = nlohmann::json::object();
    for (int cls = 0; cls < kNumClasses; ++cls) {
      classes[class_name(cls)] = {{"ap", cell(row.report, OverlapKind::Spatial, cls, false)},
                                  {"aph", cell(row.report, OverlapKind::Spatial, cls, true)}};
    }
    rows.push_back({{"variant", row.name},
                    {"classes", classes},
                    {"map_bev", row.report.mean_ap(OverlapKind::Bev, "overall")},
                    {"map_3d", row.report.mean_ap(OverlapKind::Spatial, "overall")},
                    {"report", to_json(row.report)}});
  }
  return {{"kind", to_string(r.kind)}, {"rows", rows}};
}

}  // namespace fvit
