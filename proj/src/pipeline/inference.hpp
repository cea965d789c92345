#pragma once

#include <filesystem>

#include "json.hpp"
#include "pipeline/trainer.hpp"

namespace ds {

struct InferenceOptions {
  std::uint64_t seed = 0;
  std::size_t steps = 50;
  double cfg_scale = kDefaultCfgScale;
  bool clip_x0 = true;
  bool keyframe_cond = true;   // key-frame conditions at all
  bool keyframe_in_pass1 = true;
  bool neighbor_cond = true;   // pass-2 views see the generated key-view videos
  std::size_t threads = 0;     // 0: DRIVESCAPE_THREADS, else hardware concurrency

  void validate() const;
  nlohmann::json to_json() const;
};

struct MultiViewVideo {
  std::string scene;
  std::array<std::vector<Image>, kViewCount> frames;  // by view_index; frame 0 is the given first frame
  std::array<std::uint64_t, kViewCount> seeds{};      // sampler seed per view
};

// Worker count from DRIVESCAPE_THREADS (if set and positive), else the hardware.
std::size_t worker_threads(std::size_t requested = 0);

// Seed of the independent sampler stream owned by `view`.
std::uint64_t view_seed(std::uint64_t seed, ViewId view);

// Pass 1 samples the key views (concurrently), pass 2 the neighbor views conditioned on
// their two generated adjacent key videos. A pass-1 failure aborts with a nested cause.
MultiViewVideo run_inference(const DenoiserNet& net, const SceneTimeline& scene, const ViewGraph& graph,
                             const GenerationPlan& plan, const InferenceOptions& options);

// {dir}/{scene}/{view}/frame_{i}.png plus {dir}/{scene}/manifest.json.
void write_generated(const MultiViewVideo& video, const std::filesystem::path& dir, const nlohmann::json& manifest);
// Reads back a directory written by write_generated ({dir} holding the view folders).
MultiViewVideo read_generated(const std::filesystem::path& scene_dir);

}  // namespace ds
