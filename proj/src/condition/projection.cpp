#include "condition/projection.hpp"

#include <algorithm>
#include <cmath>

namespace ds {

Eigen::Vector3d to_camera(const Eigen::Vector3d& p_ego, const CameraSpec& cam) {
  return cam.rotation * p_ego + cam.translation;
}

std::optional<Projection> project_point(const Eigen::Vector3d& p_ego, const CameraSpec& cam) {
  const Eigen::Vector3d p = to_camera(p_ego, cam);
  if (p.z() <= kNearPlane) return std::nullopt;
  return Projection{cam.fx * p.x() / p.z() + cam.cx, cam.fy * p.y() / p.z() + cam.cy, p.z()};
}

Eigen::Vector2d camera_to_grid(const Eigen::Vector3d& p, const CameraSpec& cam, const Grid& grid) {
  const double sx = static_cast<double>(grid.width) / static_cast<double>(cam.width);
  const double sy = static_cast<double>(grid.height) / static_cast<double>(cam.height);
  return {(cam.fx * p.x() / p.z() + cam.cx) * sx, (cam.fy * p.y() / p.z() + cam.cy) * sy};
}

namespace {

Eigen::Vector3d near_intersection(const Eigen::Vector3d& a, const Eigen::Vector3d& b) {
  const double s = (kNearPlane - a.z()) / (b.z() - a.z());
  Eigen::Vector3d p = a + s * (b - a);
  p.z() = kNearPlane;
  return p;
}

bool in_front(const Eigen::Vector3d& p) { return p.z() >= kNearPlane; }

}  // namespace

std::vector<Eigen::Vector3d> clip_polygon_near(const std::vector<Eigen::Vector3d>& poly) {
  std::vector<Eigen::Vector3d> out;
  const std::size_t n = poly.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Eigen::Vector3d& cur = poly[i];
    const Eigen::Vector3d& prev = poly[(i + n - 1) % n];
    if (in_front(cur)) {
      if (!in_front(prev)) out.push_back(near_intersection(prev, cur));
      out.push_back(cur);
    } else if (in_front(prev)) {
      out.push_back(near_intersection(prev, cur));
    }
  }
  return out;
}

std::optional<std::pair<Eigen::Vector3d, Eigen::Vector3d>> clip_segment_near(
    const Eigen::Vector3d& a, const Eigen::Vector3d& b) {
  const bool fa = in_front(a), fb = in_front(b);
  if (!fa && !fb) return std::nullopt;
  if (fa && fb) return std::make_pair(a, b);
  const Eigen::Vector3d c = near_intersection(a, b);
  return fa ? std::make_pair(a, c) : std::make_pair(c, b);
}

void fill_polygon(const std::vector<Eigen::Vector2d>& poly, const Grid& grid, const CellVisitor& visit) {
  if (poly.size() < 3) return;
  double ymin = poly[0].y(), ymax = poly[0].y();
  for (const auto& p : poly) {
    ymin = std::min(ymin, p.y());
    ymax = std::max(ymax, p.y());
  }
  const auto h = static_cast<double>(grid.height);
  const auto w = static_cast<double>(grid.width);
  const long y0 = std::max(0L, static_cast<long>(std::floor(ymin - 0.5)));
  const long y1 = std::min(static_cast<long>(h) - 1, static_cast<long>(std::ceil(ymax)));
  std::vector<double> xs;
  for (long y = y0; y <= y1; ++y) {
    const double yc = static_cast<double>(y) + 0.5;
    xs.clear();
    for (std::size_t i = 0; i < poly.size(); ++i) {
      const Eigen::Vector2d& p = poly[i];
      const Eigen::Vector2d& q = poly[(i + 1) % poly.size()];
      if ((p.y() <= yc) != (q.y() <= yc)) {
        xs.push_back(p.x() + (yc - p.y()) * (q.x() - p.x()) / (q.y() - p.y()));
      }
    }
    std::sort(xs.begin(), xs.end());
    for (std::size_t i = 0; i + 1 < xs.size(); i += 2) {
      const double lo = std::max(xs[i], -1.0), hi = std::min(xs[i + 1], w + 1.0);
      const long xa = std::max(0L, static_cast<long>(std::ceil(lo - 0.5)));
      const long xb = std::min(static_cast<long>(w) - 1, static_cast<long>(std::ceil(hi - 0.5)) - 1);
      for (long x = xa; x <= xb; ++x) visit(static_cast<std::size_t>(x), static_cast<std::size_t>(y), 1.0);
    }
  }
}

void stroke_segment(const Eigen::Vector2d& a, const Eigen::Vector2d& b, const Grid& grid,
                    const CellVisitor& visit) {
  const double w = static_cast<double>(grid.width), h = static_cast<double>(grid.height);
  const long x0 = std::max(0L, static_cast<long>(std::floor(std::max(std::min(a.x(), b.x()) - 1.0, -1.0))));
  const long x1 = std::min(static_cast<long>(w) - 1, static_cast<long>(std::ceil(std::min(std::max(a.x(), b.x()) + 1.0, w + 1.0))));
  const long y0 = std::max(0L, static_cast<long>(std::floor(std::max(std::min(a.y(), b.y()) - 1.0, -1.0))));
  const long y1 = std::min(static_cast<long>(h) - 1, static_cast<long>(std::ceil(std::min(std::max(a.y(), b.y()) + 1.0, h + 1.0))));
  const Eigen::Vector2d ab = b - a;
  const double len2 = ab.squaredNorm();
  for (long y = y0; y <= y1; ++y) {
    for (long x = x0; x <= x1; ++x) {
      const Eigen::Vector2d c(static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5);
      double t = len2 > 0 ? (c - a).dot(ab) / len2 : 0.0;
      t = std::clamp(t, 0.0, 1.0);
      const double dist = (c - (a + t * ab)).norm();
      const double coverage = 1.0 - dist;
      if (coverage > 0) visit(static_cast<std::size_t>(x), static_cast<std::size_t>(y), coverage);
    }
  }
}

std::vector<Eigen::Vector2d> convex_hull(std::vector<Eigen::Vector2d> pts) {
  std::sort(pts.begin(), pts.end(), [](const auto& p, const auto& q) {
    return p.x() < q.x() || (p.x() == q.x() && p.y() < q.y());
  });
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  if (pts.size() < 3) return pts;
  auto cross = [](const Eigen::Vector2d& o, const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
    return (a.x() - o.x()) * (b.y() - o.y()) - (a.y() - o.y()) * (b.x() - o.x());
  };
  std::vector<Eigen::Vector2d> hull(2 * pts.size());
  std::size_t k = 0;
  for (const auto& p : pts) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], p) <= 0) --k;
    hull[k++] = p;
  }
  for (std::size_t i = pts.size() - 1, lower = k + 1; i-- > 0;) {
    while (k >= lower && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);
  return hull;
}

void visit_box_cells(const Box3D& box, const CameraSpec& cam, const Grid& grid, const CellVisitor& visit) {
  static constexpr std::array<std::array<int, 2>, 12> kEdges = {{{0, 1}, {1, 2}, {2, 3}, {3, 0},
                                                                 {4, 5}, {5, 6}, {6, 7}, {7, 4},
                                                                 {0, 4}, {1, 5}, {2, 6}, {3, 7}}};
  const auto corners = box_corners(box);
  std::array<Eigen::Vector3d, 8> pc;
  for (std::size_t i = 0; i < 8; ++i) pc[i] = to_camera(corners[i], cam);
  std::vector<Eigen::Vector2d> pts;
  for (const auto& p : pc) {
    if (in_front(p)) pts.push_back(camera_to_grid(p, cam, grid));
  }
  if (pts.empty()) return;
  for (const auto& e : kEdges) {
    const auto& a = pc[static_cast<std::size_t>(e[0])];
    const auto& b = pc[static_cast<std::size_t>(e[1])];
    if (in_front(a) != in_front(b)) pts.push_back(camera_to_grid(near_intersection(a, b), cam, grid));
  }
  fill_polygon(convex_hull(std::move(pts)), grid, visit);
}

void visit_map_cells(const MapElement& element, const CameraSpec& cam, const Grid& grid,
                     const CellVisitor& visit) {
  std::vector<Eigen::Vector3d> pc;
  pc.reserve(element.polyline.size());
  for (const auto& p : element.polyline) pc.push_back(to_camera(Eigen::Vector3d(p.x(), p.y(), 0.0), cam));
  if (element.closed) {
    const auto clipped = clip_polygon_near(pc);
    if (clipped.size() < 3) return;
    std::vector<Eigen::Vector2d> poly;
    poly.reserve(clipped.size());
    for (const auto& p : clipped) poly.push_back(camera_to_grid(p, cam, grid));
    fill_polygon(poly, grid, visit);
    return;
  }
  for (std::size_t i = 0; i + 1 < pc.size(); ++i) {
    const auto seg = clip_segment_near(pc[i], pc[i + 1]);
    if (!seg) continue;
    stroke_segment(camera_to_grid(seg->first, cam, grid), camera_to_grid(seg->second, cam, grid),
                   grid, visit);
  }
}

}  // namespace ds
