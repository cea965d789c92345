#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include "condition/projection.hpp"
#include "scene/types.hpp"

namespace ds {

inline constexpr std::size_t kConditionChannels = kRoadClassCount + kObjectClassCount;
inline constexpr std::size_t kMapChannels = kRoadClassCount;
inline constexpr std::size_t kLayoutChannels = kObjectClassCount;

// Channel-planar [16, H, W] raster, values in [0,1]. Channels 0..7 road classes,
// 8..15 object classes.
struct ConditionRaster {
  ViewId view = ViewId::kFront;
  double timestamp = 0;
  std::optional<std::size_t> source_tick;
  Grid grid;
  std::vector<double> data;

  double at(std::size_t c, std::size_t y, std::size_t x) const {
    return data[(c * grid.height + y) * grid.width + x];
  }
  std::size_t plane() const { return grid.cells(); }
};

// [8, H, W]: strokes carry anti-aliased coverage, closed polygons fill with 1.
std::vector<double> rasterize_map(const std::vector<MapElement>& elements, const CameraSpec& cam,
                                  const Grid& grid);
// [8, H, W]: filled convex hulls of each box's projected silhouette.
std::vector<double> rasterize_boxes(const std::vector<Box3D>& boxes, const CameraSpec& cam,
                                    const Grid& grid);

ConditionRaster project_tick(const SceneTimeline& scene, std::size_t tick, ViewId view, const Grid& grid);

// Writes one grayscale PNG per channel, named {scene}_{view}_{t}_{ch}.png. Returns the paths.
std::vector<std::filesystem::path> export_raster_pngs(const ConditionRaster& raster,
                                                      const std::string& scene_name,
                                                      const std::filesystem::path& dir);

}  // namespace ds
