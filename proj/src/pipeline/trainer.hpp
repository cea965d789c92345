#pragma once

#include <filesystem>
#include <memory>
#include <optional>

#include "pipeline/dataset.hpp"
#include "tensor/optim.hpp"

namespace ds {

struct Dataset {
  std::vector<SceneTimeline> scenes;
  std::vector<PreparedScene> prepared;
  ViewGraph graph;

  std::size_t size() const { return scenes.size(); }
};

// Validates and prepares scenes; all scenes must share frame count and image size.
Dataset make_dataset(std::vector<SceneTimeline> scenes);
// Every scene JSON directly inside `dir` (except manifest.json), in file-name order.
Dataset load_dataset(const std::filesystem::path& dir);

struct BatchItem {
  std::size_t scene = 0;
  ViewId view = ViewId::kFront;
  ViewRole role = ViewRole::kKey;
  std::array<ViewId, 2> sources{};  // ring-adjacent key views, neighbor role only
};

// One epoch: scenes in shuffled order; per scene the three key views in random order,
// then the three neighbor views in random order.
std::vector<BatchItem> build_training_batches(const Dataset& data, std::uint64_t seed, std::size_t epoch);

struct TrainConfig {
  std::uint64_t seed = 0;
  std::size_t steps = 200;
  AdamWConfig optimizer;
  DropoutPolicy dropout;
  double grad_clip = 1.0;
  // Probability that a neighbor batch takes its video conditions from cached generated
  // key-view clips instead of the rendered ones.
  double generated_neighbor_prob = 0.5;
  std::size_t generated_sample_steps = 2;
  std::size_t checkpoint_every = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

struct StepRecord {
  std::size_t step = 0;
  double loss = 0.0;
  double grad_norm = 0.0;
  ViewRole role = ViewRole::kKey;
  std::string scene;
  ViewId view = ViewId::kFront;
  bool generated_sources = false;
  DropDecision drop;

  nlohmann::json to_json() const;
};

class Trainer {
 public:
  Trainer(const Dataset& data, const ModelConfig& model, const TrainConfig& config);

  StepRecord step();
  std::size_t steps_done() const { return step_; }

  // Parameters, optimizer moments, step counter and generated-clip cache.
  void save_checkpoint(const std::filesystem::path& dir) const;
  // Restores state saved by save_checkpoint for the same model config and dataset.
  void load_checkpoint(const std::filesystem::path& dir);

  DenoiserNet& net() { return *net_; }
  const DenoiserNet& net() const { return *net_; }
  const TrainConfig& config() const { return config_; }
  // Generated clip for (scene, view), if a key batch produced one.
  const std::optional<std::vector<Image>>& generated(std::size_t scene, ViewId view) const;

 private:
  const std::vector<BatchItem>& epoch_items(std::size_t epoch);
  std::vector<double> source_clip(std::size_t scene, ViewId view, bool generated) const;

  const Dataset& data_;
  TrainConfig config_;
  std::unique_ptr<DenoiserNet> net_;
  std::unique_ptr<AdamW> optimizer_;
  std::size_t step_ = 0;
  std::vector<std::array<ClipConditions, kViewCount>> key_conditions_;
  std::vector<std::array<std::optional<std::vector<Image>>, kViewCount>> cache_;
  std::size_t cached_epoch_ = static_cast<std::size_t>(-1);
  std::vector<BatchItem> items_;
};

// Loads only the model parameters of a training checkpoint.
std::unique_ptr<DenoiserNet> load_model(const std::filesystem::path& dir);

struct ValidationReport {
  double conditional = 0.0;
  double unconditional = 0.0;
  std::size_t samples = 0;
};

// Mean ε-MSE over every view of every scene at `timesteps` seeded (t, noise) draws, with
// all conditions present versus the unconditional branch (conditions dropped). Neighbor
// views use the rendered key-view clips as sources.
ValidationReport validation_losses(const DenoiserNet& net, const Dataset& data, std::uint64_t seed,
                                   std::size_t timesteps = 4);

// Deterministic stream for (seed, a, b).
std::mt19937_64 derived_rng(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0);

}  // namespace ds
