#pragma once

#include <filesystem>

#include "json.hpp"
#include "scene/types.hpp"

namespace ds {

inline constexpr int kSceneFormatVersion = 1;

// Scene JSON. Frame rasters go to <stem>_frames/<VIEW>_<index>.png next to the JSON
// file and are referenced by relative path.
void save_scene(const SceneTimeline& scene, const std::filesystem::path& path);
SceneTimeline load_scene(const std::filesystem::path& path);

// In-memory halves of the above, without frame rasters.
nlohmann::json scene_to_json(const SceneTimeline& scene);
SceneTimeline scene_from_json(const nlohmann::json& j);

}  // namespace ds
