#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "scene/types.hpp"

namespace ds {

using Rgb = std::array<std::uint8_t, 3>;

// Pixel label: 0..7 road classes, 8..15 object classes (8 + object class).
inline constexpr int kLabelSky = -1;
inline constexpr int kLabelTerrain = -2;
inline constexpr int kLabelCount = kRoadClassCount + kObjectClassCount;
inline int object_label(int object_cls) { return kRoadClassCount + object_cls; }

// Fixed palette. Channel values lie on {0, 128, 255}; see README for the table.
Rgb label_color(int label);
const std::vector<int>& palette_labels();  // every label incl. sky/terrain

struct RenderedView {
  Image image;
  std::vector<std::int8_t> labels;  // width*height
};

// Flat-shaded render: sky/terrain background, map classes in fixed paint order,
// then boxes far-to-near by center distance. Uses the condition rasterization path,
// so silhouettes coincide exactly with layout condition rasters.
RenderedView render_view(const CameraSpec& cam, const std::vector<Box3D>& boxes,
                         const std::vector<MapElement>& map);

// Stroke cells with coverage at or above this are painted.
inline constexpr double kStrokePaintCoverage = 0.5;

}  // namespace ds
