#include "condition/raster.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "common/error.hpp"
#include "common/image.hpp"

namespace ds {

std::vector<double> rasterize_map(const std::vector<MapElement>& elements, const CameraSpec& cam,
                                  const Grid& grid) {
  std::vector<double> out(kMapChannels * grid.cells(), 0.0);
  for (const auto& el : elements) {
    double* plane = out.data() + static_cast<std::size_t>(el.class_id) * grid.cells();
    visit_map_cells(el, cam, grid, [&](std::size_t x, std::size_t y, double coverage) {
      double& cell = plane[y * grid.width + x];
      cell = std::max(cell, std::min(coverage, 1.0));
    });
  }
  return out;
}

std::vector<double> rasterize_boxes(const std::vector<Box3D>& boxes, const CameraSpec& cam,
                                    const Grid& grid) {
  std::vector<double> out(kLayoutChannels * grid.cells(), 0.0);
  for (const auto& b : boxes) {
    double* plane = out.data() + static_cast<std::size_t>(b.class_id) * grid.cells();
    visit_box_cells(b, cam, grid, [&](std::size_t x, std::size_t y, double) { plane[y * grid.width + x] = 1.0; });
  }
  return out;
}

ConditionRaster project_tick(const SceneTimeline& scene, std::size_t tick, ViewId view, const Grid& grid) {
  if (tick >= scene.ticks.size()) throw ValidationError("tick index " + std::to_string(tick) + " out of range");
  const auto& t = scene.ticks[tick];
  const auto& cam = scene.camera(view);
  ConditionRaster r;
  r.view = view;
  r.timestamp = t.t;
  r.source_tick = tick;
  r.grid = grid;
  r.data = rasterize_map(t.map, cam, grid);
  const auto boxes = rasterize_boxes(t.boxes, cam, grid);
  r.data.insert(r.data.end(), boxes.begin(), boxes.end());
  return r;
}

std::vector<std::filesystem::path> export_raster_pngs(const ConditionRaster& raster,
                                                      const std::string& scene_name,
                                                      const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  char t[32];
  std::snprintf(t, sizeof t, "%.3f", raster.timestamp);
  std::vector<std::filesystem::path> paths;
  const std::size_t channels = raster.data.size() / raster.plane();
  for (std::size_t c = 0; c < channels; ++c) {
    std::vector<std::uint8_t> gray(raster.plane());
    for (std::size_t i = 0; i < gray.size(); ++i) {
      gray[i] = static_cast<std::uint8_t>(std::lround(std::clamp(raster.data[c * raster.plane() + i], 0.0, 1.0) * 255.0));
    }
    auto path = dir / (scene_name + "_" + std::string(view_name(raster.view)) + "_" + t + "_" +
                       std::to_string(c) + ".png");
    write_gray_png(path, raster.grid.width, raster.grid.height, gray);
    paths.push_back(std::move(path));
  }
  return paths;
}

}  // namespace ds
