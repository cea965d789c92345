#include "scene/render.hpp"

#include <algorithm>

#include "common/error.hpp"
#include "condition/projection.hpp"

namespace ds {

namespace {

constexpr std::uint8_t H = 128;

constexpr std::array<Rgb, kLabelCount> kPalette = {{
    {H, H, H},        // drivable_area
    {255, 255, 255},  // ped_crossing
    {255, H, H},      // walkway
    {255, 255, 0},    // stop_line
    {H, H, 0},        // carpark_area
    {255, H, 0},      // road_divider
    {255, 255, H},    // lane_divider
    {0, H, H},        // traffic_island
    {255, 0, 0},      // car
    {0, 0, 255},      // truck
    {255, 0, 255},    // bus
    {H, 0, H},        // trailer
    {H, 0, 0},        // construction_vehicle
    {0, 255, 0},      // pedestrian
    {0, 0, H},        // motorcycle
    {0, 0, 0},        // bicycle
}};
constexpr Rgb kSky = {H, 255, 255};
constexpr Rgb kTerrain = {0, H, 0};

// Polygons first (area classes), then line classes on top.
constexpr std::array<int, 8> kPaintOrder = {kDrivableArea, kCarparkArea,  kWalkway,     kTrafficIsland,
                                            kPedCrossing,  kStopLine,     kRoadDivider, kLaneDivider};

}  // namespace

Rgb label_color(int label) {
  if (label == kLabelSky) return kSky;
  if (label == kLabelTerrain) return kTerrain;
  if (label < 0 || label >= kLabelCount) throw ValidationError("label out of range: " + std::to_string(label));
  return kPalette[static_cast<std::size_t>(label)];
}

const std::vector<int>& palette_labels() {
  static const std::vector<int> labels = [] {
    std::vector<int> l{kLabelSky, kLabelTerrain};
    for (int i = 0; i < kLabelCount; ++i) l.push_back(i);
    return l;
  }();
  return labels;
}

RenderedView render_view(const CameraSpec& cam, const std::vector<Box3D>& boxes,
                         const std::vector<MapElement>& map) {
  const Grid grid{cam.width, cam.height};
  RenderedView out{Image(cam.width, cam.height), std::vector<std::int8_t>(grid.cells())};
  const Eigen::Matrix3d cam_to_ego = cam.rotation.transpose();
  for (std::size_t y = 0; y < cam.height; ++y) {
    for (std::size_t x = 0; x < cam.width; ++x) {
      const Eigen::Vector3d ray((static_cast<double>(x) + 0.5 - cam.cx) / cam.fx,
                                (static_cast<double>(y) + 0.5 - cam.cy) / cam.fy, 1.0);
      out.labels[y * cam.width + x] = (cam_to_ego * ray).z() < 0 ? kLabelTerrain : kLabelSky;
    }
  }
  for (int cls : kPaintOrder) {
    for (const auto& element : map) {
      if (element.class_id != cls) continue;
      visit_map_cells(element, cam, grid, [&](std::size_t x, std::size_t y, double coverage) {
        if (coverage >= kStrokePaintCoverage) out.labels[y * grid.width + x] = static_cast<std::int8_t>(cls);
      });
    }
  }
  std::vector<const Box3D*> order;
  for (const auto& b : boxes) order.push_back(&b);
  const Eigen::Vector3d cam_center = -cam_to_ego * cam.translation;
  std::stable_sort(order.begin(), order.end(), [&](const Box3D* a, const Box3D* b) {
    return (a->center - cam_center).norm() > (b->center - cam_center).norm();
  });
  for (const Box3D* b : order) {
    const auto label = static_cast<std::int8_t>(object_label(b->class_id));
    visit_box_cells(*b, cam, grid, [&](std::size_t x, std::size_t y, double) {
      out.labels[y * grid.width + x] = label;
    });
  }
  for (std::size_t i = 0; i < grid.cells(); ++i) {
    const Rgb c = label_color(out.labels[i]);
    std::copy(c.begin(), c.end(), out.image.rgb.begin() + static_cast<std::ptrdiff_t>(i * 3));
  }
  return out;
}

}  // namespace ds
