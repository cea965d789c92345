#pragma once

#include <Eigen/Core>
#include <functional>
#include <optional>
#include <vector>

#include "scene/types.hpp"

namespace ds {

inline constexpr double kNearPlane = 0.1;  // meters

struct Projection {
  double u = 0, v = 0;  // pixels
  double depth = 0;     // camera-frame z, meters
};

// Raster grid laid over a camera image; cell (x, y) covers pixels scaled by width/height ratio.
struct Grid {
  std::size_t width = 0, height = 0;
  std::size_t cells() const { return width * height; }
};

Eigen::Vector3d to_camera(const Eigen::Vector3d& p_ego, const CameraSpec& cam);

// Pinhole projection; nullopt (behind) when depth <= kNearPlane.
std::optional<Projection> project_point(const Eigen::Vector3d& p_ego, const CameraSpec& cam);

// Camera-frame point (in front of the near plane) to continuous grid coordinates.
Eigen::Vector2d camera_to_grid(const Eigen::Vector3d& p_cam, const CameraSpec& cam, const Grid& grid);

// Sutherland-Hodgman clip of a camera-frame polygon against z >= kNearPlane.
std::vector<Eigen::Vector3d> clip_polygon_near(const std::vector<Eigen::Vector3d>& poly);
std::optional<std::pair<Eigen::Vector3d, Eigen::Vector3d>> clip_segment_near(
    const Eigen::Vector3d& a, const Eigen::Vector3d& b);

using CellVisitor = std::function<void(std::size_t x, std::size_t y, double coverage)>;

// Even-odd scanline fill; a cell is inside when its center is. Coverage is always 1.
void fill_polygon(const std::vector<Eigen::Vector2d>& poly, const Grid& grid, const CellVisitor& visit);

// Anti-aliased one-cell-wide stroke: coverage = max(0, 1 - distance from cell center).
void stroke_segment(const Eigen::Vector2d& a, const Eigen::Vector2d& b, const Grid& grid,
                    const CellVisitor& visit);

std::vector<Eigen::Vector2d> convex_hull(std::vector<Eigen::Vector2d> points);

// Visits the cells covered by the clipped, projected silhouette of a box.
void visit_box_cells(const Box3D& box, const CameraSpec& cam, const Grid& grid, const CellVisitor& visit);

// Ground-plane map element: filled when closed, stroked per segment otherwise.
void visit_map_cells(const MapElement& element, const CameraSpec& cam, const Grid& grid,
                     const CellVisitor& visit);

}  // namespace ds
