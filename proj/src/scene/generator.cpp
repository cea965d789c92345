#include "scene/generator.hpp"

#include <Eigen/Geometry>
#include <cmath>
#include <random>

#include "common/error.hpp"
#include "scene/render.hpp"

namespace ds {

namespace {

constexpr std::array<double, 4> kLaneY = {-5.25, -1.75, 1.75, 5.25};
constexpr std::size_t kEgoLane = 1;
constexpr double kRoadHalfWidth = 7.0;
constexpr double kWalkwayOuter = 9.5;
constexpr double kMapWindow = 60.0;
constexpr double kDashPeriod = 9.0;
constexpr double kDashLength = 3.0;

struct Track {
  int id;
  int cls;
  Eigen::Vector3d size;
  double x0;
  double y;
  double speed;
};

struct World {
  double ego_speed;
  double heading_amp, heading_freq, heading_phase;
  std::string road_template;
  double crosswalk_x0;
  double junction_x;
  std::vector<Track> tracks;
};

double ego_heading(const World& w, double t) {
  return w.heading_amp * std::sin(w.heading_freq * t + w.heading_phase);
}

// Ego pose in the world frame at time t (fixed-step integration of the heading).
Eigen::Vector3d ego_pose(const World& w, double t) {
  constexpr int kSubsteps = 200;
  double x = 0, y = kLaneY[kEgoLane];
  const double dt = t / kSubsteps;
  for (int i = 0; i < kSubsteps; ++i) {
    const double th = ego_heading(w, (i + 0.5) * dt);
    x += w.ego_speed * std::cos(th) * dt;
    y += w.ego_speed * std::sin(th) * dt;
  }
  return {x, y, ego_heading(w, t)};
}

Eigen::Vector2d world_to_ego(const Eigen::Vector2d& p, const Eigen::Vector3d& pose) {
  const double c = std::cos(pose.z()), s = std::sin(pose.z());
  const Eigen::Vector2d d = p - pose.head<2>();
  return {c * d.x() + s * d.y(), -s * d.x() + c * d.y()};
}

MapElement rect(double x0, double x1, double y0, double y1, int cls, const Eigen::Vector3d& pose) {
  MapElement m;
  m.class_id = cls;
  m.closed = true;
  for (const auto& p : {Eigen::Vector2d(x0, y0), Eigen::Vector2d(x1, y0), Eigen::Vector2d(x1, y1),
                        Eigen::Vector2d(x0, y1)}) {
    m.polyline.push_back(world_to_ego(p, pose));
  }
  return m;
}

MapElement line(double x0, double x1, double y, int cls, double step, const Eigen::Vector3d& pose) {
  MapElement m;
  m.class_id = cls;
  m.closed = false;
  const int n = std::max(1, static_cast<int>(std::ceil((x1 - x0) / step)));
  for (int i = 0; i <= n; ++i) {
    m.polyline.push_back(world_to_ego({x0 + (x1 - x0) * i / n, y}, pose));
  }
  return m;
}

std::vector<MapElement> map_at(const World& w, const Eigen::Vector3d& pose) {
  const double lo = pose.x() - kMapWindow, hi = pose.x() + kMapWindow;
  std::vector<MapElement> map;
  map.push_back(rect(lo, hi, -kRoadHalfWidth, kRoadHalfWidth, kDrivableArea, pose));
  map.push_back(rect(lo, hi, kRoadHalfWidth, kWalkwayOuter, kWalkway, pose));
  map.push_back(rect(lo, hi, -kWalkwayOuter, -kRoadHalfWidth, kWalkway, pose));
  map.push_back(line(lo, hi, 0.0, kRoadDivider, 10.0, pose));
  for (double lane_edge : {-3.5, 3.5}) {
    for (double d = std::floor(lo / kDashPeriod) * kDashPeriod; d < hi; d += kDashPeriod) {
      if (d + kDashLength < lo) continue;
      map.push_back(line(d, d + kDashLength, lane_edge, kLaneDivider, kDashLength, pose));
    }
  }
  for (double c = w.crosswalk_x0 - 200.0; c < hi; c += 50.0) {
    if (c + 4.0 < lo) continue;
    map.push_back(rect(c, c + 4.0, -kRoadHalfWidth, kRoadHalfWidth, kPedCrossing, pose));
  }
  if (w.road_template == "junction") {
    const double j = w.junction_x;
    map.push_back(rect(j - 7.0, j + 7.0, -40.0, 40.0, kDrivableArea, pose));
    map.push_back(rect(j + 15.0, j + 35.0, kWalkwayOuter, 25.0, kCarparkArea, pose));
    map.push_back(rect(j - 2.0, j + 2.0, 12.0, 30.0, kTrafficIsland, pose));
    MapElement stop;
    stop.class_id = kStopLine;
    stop.polyline = {world_to_ego({j - 8.5, -kRoadHalfWidth}, pose), world_to_ego({j - 8.5, 0.0}, pose)};
    map.push_back(std::move(stop));
  }
  return map;
}

std::vector<Box3D> boxes_at(const World& w, const Eigen::Vector3d& pose, double t) {
  std::vector<Box3D> boxes;
  for (const auto& tr : w.tracks) {
    const Eigen::Vector2d p = world_to_ego({tr.x0 + tr.speed * t, tr.y}, pose);
    Box3D b;
    b.center = Eigen::Vector3d(p.x(), p.y(), tr.size.z() / 2.0);
    b.size = tr.size;
    b.yaw = wrap_angle(-pose.z());
    b.class_id = tr.cls;
    b.track_id = tr.id;
    boxes.push_back(b);
  }
  return boxes;
}

World make_world(std::uint64_t seed, const SceneConfig& cfg) {
  std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ULL + 0x5EED);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto uni = [&](double a, double b) { return a + (b - a) * u01(rng); };
  World w;
  w.ego_speed = uni(4.0, 10.0);
  w.heading_amp = uni(0.0, 0.04);
  w.heading_freq = uni(0.5, 1.5);
  w.heading_phase = uni(0.0, 6.283);
  w.road_template = cfg.road_template;
  w.crosswalk_x0 = uni(8.0, 40.0);
  w.junction_x = uni(15.0, 35.0);
  std::array<double, 4> lane_speed{};
  for (std::size_t l = 0; l < 4; ++l) {
    lane_speed[l] = l == kEgoLane ? w.ego_speed : std::max(0.5, w.ego_speed + uni(-3.0, 3.0));
  }
  std::array<std::vector<double>, 4> occupied;
  int attempts = 0;
  while (static_cast<int>(w.tracks.size()) < cfg.vehicles && attempts++ < 10000) {
    const auto lane = static_cast<std::size_t>(rng() % 4);
    const double x0 = uni(-25.0, 35.0);
    if (lane == kEgoLane && std::abs(x0) < 9.0) continue;
    bool clear = true;
    for (double o : occupied[lane]) clear = clear && std::abs(o - x0) >= 13.0;
    if (!clear) continue;
    occupied[lane].push_back(x0);
    const double r = u01(rng);
    Track tr;
    tr.id = static_cast<int>(w.tracks.size()) + 1;
    if (r < 0.7) {
      tr.cls = kCar;
      tr.size = {uni(4.2, 4.9), uni(1.8, 2.0), uni(1.5, 1.7)};
    } else if (r < 0.9) {
      tr.cls = kTruck;
      tr.size = {uni(6.5, 8.5), uni(2.3, 2.6), uni(2.6, 3.2)};
    } else {
      tr.cls = kBus;
      tr.size = {uni(10.0, 11.5), uni(2.6, 2.9), uni(3.0, 3.4)};
    }
    tr.x0 = x0;
    tr.y = kLaneY[lane];
    tr.speed = lane_speed[lane];
    w.tracks.push_back(tr);
  }
  if (static_cast<int>(w.tracks.size()) < cfg.vehicles) {
    throw ConfigError("cannot place " + std::to_string(cfg.vehicles) + " vehicles without overlap");
  }
  return w;
}

}  // namespace

void SceneConfig::validate() const {
  if (!(fps >= 2.0 && fps <= 10.0)) {
    throw ConfigError("frame rate " + std::to_string(fps) + " Hz outside [2, 10]");
  }
  if (!(duration > 0)) throw ConfigError("duration must be positive");
  if (vehicles < 0 || vehicles > 16) throw ConfigError("vehicle count must be in [0, 16]");
  if (road_template != "straight" && road_template != "junction") {
    throw ConfigError("unknown road template '" + road_template + "'");
  }
  if (width == 0 || height == 0) throw ConfigError("empty image size");
}

SceneTimeline generate_scene(std::uint64_t seed, const SceneConfig& config) {
  config.validate();
  const World world = make_world(seed, config);
  SceneTimeline scene;
  scene.name = config.name.empty() ? "scene_" + std::to_string(seed) : config.name;
  scene.cameras = canonical_rig(config.width, config.height);
  const auto n = static_cast<std::size_t>(std::max(1L, std::lround(config.duration * config.fps)));
  for (std::size_t i = 0; i < n; ++i) scene.frame_timestamps.push_back(static_cast<double>(i) / config.fps);

  for (std::size_t k = 0;; ++k) {
    const double tk = static_cast<double>(k) / kAnnotationRateHz;
    if (tk > scene.frame_timestamps.back() + kTimestampTolerance) break;
    for (double ft : scene.frame_timestamps) {
      if (std::abs(ft - tk) <= kTimestampTolerance) {
        const Eigen::Vector3d pose = ego_pose(world, ft);
        AnnotationTick tick;
        tick.t = ft;
        tick.ego = {world.ego_speed, pose.z()};
        tick.boxes = boxes_at(world, pose, ft);
        tick.map = map_at(world, pose);
        scene.ticks.push_back(std::move(tick));
        break;
      }
    }
  }

  if (config.render_frames) {
    for (std::size_t i = 0; i < n; ++i) {
      const double t = scene.frame_timestamps[i];
      const Eigen::Vector3d pose = ego_pose(world, t);
      const auto boxes = boxes_at(world, pose, t);
      const auto map = map_at(world, pose);
      for (ViewId v : kAllViews) {
        scene.frames[view_index(v)].push_back(render_view(scene.camera(v), boxes, map).image);
      }
    }
  }
  return scene;
}

}  // namespace ds
