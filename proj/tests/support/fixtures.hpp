#pragma once

#include "diffusion/denoiser.hpp"
#include "pipeline/dataset.hpp"
#include "pipeline/trainer.hpp"
#include "scene/generator.hpp"

namespace ds::testing {

// Smallest model shape the denoiser accepts with two resolution levels.
inline ModelConfig tiny_model(std::size_t height = 8, std::size_t width = 16) {
  ModelConfig c;
  c.height = height;
  c.width = width;
  c.patch = 2;
  c.dim0 = 8;
  c.dim1 = 8;
  c.heads = 2;
  c.stem_channels = 4;
  c.head_channels = 4;
  c.encoder_channels = 2;
  c.time_dim = 8;
  c.camera_embed_dim = 4;
  c.scalar_dim = 8;
  return c;
}

inline SceneConfig tiny_scene(double fps = 10.0, double duration = 0.6, std::size_t height = 8, std::size_t width = 16) {
  SceneConfig c;
  c.fps = fps;
  c.duration = duration;
  c.height = height;
  c.width = width;
  return c;
}

inline Dataset tiny_dataset(std::size_t scenes, std::uint64_t first_seed = 100, const SceneConfig& sc = tiny_scene()) {
  std::vector<SceneTimeline> s;
  for (std::size_t i = 0; i < scenes; ++i) s.push_back(generate_scene(first_seed + i, sc));
  return make_dataset(std::move(s));
}

inline TrainConfig tiny_train(std::size_t steps = 4) {
  TrainConfig t;
  t.seed = 3;
  t.steps = steps;
  return t;
}

// Conditions for `view` with every pathway populated; neighbor views use rendered key clips.
inline ClipConditions full_conditions(const PreparedScene& scene, const ViewGraph& graph, ViewId view) {
  if (graph.role[view_index(view)] == ViewRole::kKey) return make_conditions(scene, graph, view, true);
  const auto& adj = graph.adjacent[view_index(view)];
  return make_conditions(scene, graph, view, true, &scene.clips[view_index(adj[0])], &scene.clips[view_index(adj[1])]);
}

}  // namespace ds::testing
