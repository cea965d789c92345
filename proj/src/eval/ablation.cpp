#include "eval/ablation.hpp"

#include <chrono>
#include <iomanip>
#include <sstream>

#include "common/error.hpp"

namespace ds {

using nlohmann::json;

void AblationConfig::validate() const {
  if (bimot_temporal_enabled && !bimot_enabled) {
    throw ConfigError("ablation " + name + ": temporal attention in BiMoT requires BiMoT");
  }
  if (name.empty()) throw ConfigError("ablation config needs a name");
}

ModelConfig AblationConfig::apply(ModelConfig base) const {
  validate();
  base.bimot_enabled = bimot_enabled;
  base.bimot_temporal = bimot_temporal_enabled;
  base.keyframe_cond = keyframe_cond_enabled;
  base.neighbor_cond = neighbor_cond_enabled;
  base.validate();
  return base;
}

json AblationConfig::to_json() const {
  return {{"name", name},
          {"bimot_temporal_enabled", bimot_temporal_enabled},
          {"bimot_enabled", bimot_enabled},
          {"keyframe_cond_enabled", keyframe_cond_enabled},
          {"neighbor_cond_enabled", neighbor_cond_enabled},
          {"reference", is_reference()}};
}

AblationConfig without_bimot(AblationConfig c) {
  c.bimot_enabled = false;
  c.bimot_temporal_enabled = false;
  return c;
}

std::vector<AblationConfig> default_ablation_matrix() {
  AblationConfig full;
  AblationConfig no_temporal = full;
  no_temporal.name = "no_bimot_temporal";
  no_temporal.bimot_temporal_enabled = false;
  AblationConfig no_bimot = without_bimot(full);
  no_bimot.name = "no_bimot";
  AblationConfig no_keyframe = full;
  no_keyframe.name = "no_keyframe";
  no_keyframe.keyframe_cond_enabled = false;
  AblationConfig no_neighbor = full;
  no_neighbor.name = "no_neighbor";
  no_neighbor.neighbor_cond_enabled = false;
  return {no_bimot, no_temporal, no_keyframe, no_neighbor, full};
}

namespace {

std::vector<Image> frames_after_first(const std::array<std::vector<Image>, kViewCount>& frames) {
  std::vector<Image> out;
  for (const auto& view : frames) out.insert(out.end(), view.begin() + (view.empty() ? 0 : 1), view.end());
  return out;
}

void add_counts(ClassIou& into, const ClassIou& c) {
  into.intersection += c.intersection;
  into.union_count += c.union_count;
}

}  // namespace

SceneMetrics evaluate_video(const MultiViewVideo& video, const SceneTimeline& scene) {
  if (!scene.has_frames()) throw ValidationError("scene " + scene.name + " has no rendered frames");
  SceneMetrics m;
  m.scene = scene.name;
  m.iou = controllability_iou(video.frames, scene);
  m.frechet = frechet_distance(feature_stats(frames_after_first(video.frames)),
                               feature_stats(frames_after_first(scene.frames)));
  for (ViewId v : kAllViews) {
    m.temporal += temporal_consistency(video.frames[view_index(v)]) / kViewCount;
    m.ground_truth_temporal += temporal_consistency(scene.frames[view_index(v)]) / kViewCount;
  }
  return m;
}

AblationReport run_ablation(const std::vector<AblationConfig>& matrix, const Dataset& train_data,
                            const Dataset& eval_data, const AblationBudget& budget, const AblationProgress& progress) {
  if (matrix.empty()) throw ConfigError("ablation matrix is empty");
  for (const auto& c : matrix) c.validate();
  budget.train.validate();
  budget.inference.validate();
  if (eval_data.size() == 0) throw ValidationError("ablation needs evaluation scenes");
  AblationReport report;
  for (const auto& cfg : matrix) {
    AblationRow row;
    row.config = cfg;
    const auto t0 = std::chrono::steady_clock::now();
    Trainer trainer(train_data, cfg.apply(budget.model), budget.train);
    for (std::size_t s = 0; s < budget.train.steps; ++s) {
      const StepRecord rec = trainer.step();
      row.loss_trace.push_back(rec.loss);
      if (progress) progress(cfg.name, rec);
    }
    row.train_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const DenoiserNet& net = trainer.net();
    row.validation = validation_losses(net, eval_data, budget.validation_seed, budget.validation_timesteps);

    InferenceOptions inf = budget.inference;
    inf.keyframe_cond = inf.keyframe_cond && cfg.keyframe_cond_enabled;
    inf.neighbor_cond = inf.neighbor_cond && cfg.neighbor_cond_enabled;
    std::vector<Image> gen_pool, gt_pool;
    row.vehicle.label = -1;
    row.road.label = -2;
    for (const auto& scene : eval_data.scenes) {
      const auto plan = plan_inference(scene, eval_data.graph, inf.keyframe_in_pass1);
      const MultiViewVideo video = run_inference(net, scene, eval_data.graph, plan, inf);
      SceneMetrics m = evaluate_video(video, scene);
      add_counts(row.vehicle, m.iou.vehicle);
      add_counts(row.road, m.iou.road);
      row.temporal += m.temporal / static_cast<double>(eval_data.size());
      row.ground_truth_temporal += m.ground_truth_temporal / static_cast<double>(eval_data.size());
      const auto g = frames_after_first(video.frames), r = frames_after_first(scene.frames);
      gen_pool.insert(gen_pool.end(), g.begin(), g.end());
      gt_pool.insert(gt_pool.end(), r.begin(), r.end());
      row.scenes.push_back(std::move(m));
    }
    row.frechet = frechet_distance(feature_stats(gen_pool), feature_stats(gt_pool));
    report.rows.push_back(std::move(row));
  }
  return report;
}

json AblationReport::to_json() const {
  json records = json::array();
  const auto add = [&](const AblationRow& r, const std::string& metric, const std::string& scene, double value) {
    records.push_back({{"config", r.config.name}, {"metric", metric}, {"scene", scene}, {"value", value}});
  };
  json configs = json::array();
  for (const auto& r : rows) {
    configs.push_back(r.config.to_json());
    for (const auto& s : r.scenes) {
      add(r, "frechet_distance", s.scene, s.frechet);
      add(r, "vehicle_iou", s.scene, s.iou.vehicle.iou());
      add(r, "road_iou", s.scene, s.iou.road.iou());
      add(r, "temporal_consistency", s.scene, s.temporal);
      add(r, "ground_truth_temporal_consistency", s.scene, s.ground_truth_temporal);
    }
    add(r, "frechet_distance", "all", r.frechet);
    add(r, "vehicle_iou", "all", r.vehicle.iou());
    add(r, "road_iou", "all", r.road.iou());
    add(r, "temporal_consistency", "all", r.temporal);
    add(r, "ground_truth_temporal_consistency", "all", r.ground_truth_temporal);
    add(r, "validation_loss_conditional", "all", r.validation.conditional);
    add(r, "validation_loss_unconditional", "all", r.validation.unconditional);
  }
  return {{"version", 1}, {"configs", configs}, {"records", records}};
}

std::string AblationReport::to_csv() const {
  std::ostringstream out;
  out << "config,temporal_attn_in_bimot,bimot,keyframe_cond,neighbor_cond,frechet_distance,vehicle_iou,road_iou,"
         "temporal_consistency,ground_truth_temporal_consistency,reference\n";
  out << std::setprecision(10);
  for (const auto& r : rows) {
    const auto& c = r.config;
    out << c.name << ',' << c.bimot_temporal_enabled << ',' << c.bimot_enabled << ',' << c.keyframe_cond_enabled << ','
        << c.neighbor_cond_enabled << ',' << r.frechet << ',' << r.vehicle.iou() << ',' << r.road.iou() << ','
        << r.temporal << ',' << r.ground_truth_temporal << ',' << c.is_reference() << '\n';
  }
  return out.str();
}

}  // namespace ds
