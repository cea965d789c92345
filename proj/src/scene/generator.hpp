#pragma once

#include <cstdint>
#include <string>

#include "scene/types.hpp"

namespace ds {

struct SceneConfig {
  double fps = 10.0;       // video frame rate, [2, 10] Hz
  double duration = 0.8;   // seconds; frame count = round(duration * fps)
  int vehicles = 3;
  std::string road_template = "straight";  // "straight" | "junction"
  std::size_t width = 64;
  std::size_t height = 32;
  std::string name;  // defaults to scene_<seed>
  bool render_frames = true;

  void validate() const;
};

// Upper bound on any box displacement speed in the ego frame (m/s).
inline constexpr double kMaxRelativeSpeed = 30.0;

// Deterministic procedural scene: straight multi-lane road (optionally a junction),
// vehicles on constant-speed lane tracks, ego with a gentle heading oscillation.
// Annotation ticks sit on the 2 Hz grid wherever it coincides with a frame.
SceneTimeline generate_scene(std::uint64_t seed, const SceneConfig& config);

}  // namespace ds
