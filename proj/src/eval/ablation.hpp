#pragma once

#include <functional>
#include <string>

#include "eval/metrics.hpp"
#include "pipeline/inference.hpp"

namespace ds {

struct AblationConfig {
  std::string name = "full";
  bool bimot_enabled = true;
  bool bimot_temporal_enabled = true;
  bool keyframe_cond_enabled = true;
  bool neighbor_cond_enabled = true;

  void validate() const;
  bool is_reference() const {
    return bimot_enabled && bimot_temporal_enabled && keyframe_cond_enabled && neighbor_cond_enabled;
  }
  // Base model config with this row's flags applied.
  ModelConfig apply(ModelConfig base) const;
  nlohmann::json to_json() const;
};

// Full model plus one row per removed component; the full row comes last.
std::vector<AblationConfig> default_ablation_matrix();
// Same row with BiMoT removed; temporal attention inside it goes too.
AblationConfig without_bimot(AblationConfig c);

// Metrics of one generated 6-view video against its synthetic scene.
struct SceneMetrics {
  std::string scene;
  double frechet = 0.0;               // generated vs rendered frames 1..T, all views
  IouReport iou;
  double temporal = 0.0;              // mean over views
  double ground_truth_temporal = 0.0;  // same statistic on the rendered clips
};

SceneMetrics evaluate_video(const MultiViewVideo& video, const SceneTimeline& scene);

struct AblationBudget {
  ModelConfig model;
  TrainConfig train;
  InferenceOptions inference;
  std::size_t validation_timesteps = 2;
  std::uint64_t validation_seed = 7;
};

struct AblationRow {
  AblationConfig config;
  std::vector<SceneMetrics> scenes;
  double frechet = 0.0;       // over the pooled frames of all evaluation scenes
  ClassIou vehicle, road;     // pixel counts pooled over scenes
  double temporal = 0.0, ground_truth_temporal = 0.0;
  ValidationReport validation;
  double train_seconds = 0.0;
  std::vector<double> loss_trace;
};

struct AblationReport {
  std::vector<AblationRow> rows;

  // One record per (config, metric, scene), scene "all" for pooled values.
  nlohmann::json to_json() const;
  // Table layout: component flags, then Fréchet distance, IoUs and temporal statistics.
  std::string to_csv() const;
};

using AblationProgress = std::function<void(const std::string& config, const StepRecord&)>;

// Trains each row from the same seeds and budget, then generates and scores every
// evaluation scene. Rows differ only in their flags.
AblationReport run_ablation(const std::vector<AblationConfig>& matrix, const Dataset& train_data,
                            const Dataset& eval_data, const AblationBudget& budget,
                            const AblationProgress& progress = {});

}  // namespace ds
