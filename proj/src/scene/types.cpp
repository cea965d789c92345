#include "scene/types.hpp"

#include <Eigen/Geometry>
#include <cmath>
#include <numbers>

#include "common/error.hpp"

namespace ds {

namespace {
constexpr std::array<std::string_view, kViewCount> kViewNames = {
    "FRONT", "FRONT_LEFT", "FRONT_RIGHT", "BACK", "BACK_LEFT", "BACK_RIGHT"};
constexpr std::array<std::string_view, 8> kRoadNames = {
    "drivable_area", "ped_crossing", "walkway",      "stop_line",
    "carpark_area",  "road_divider", "lane_divider", "traffic_island"};
constexpr std::array<std::string_view, 8> kObjectNames = {
    "car",        "truck",      "bus",        "trailer", "construction_vehicle",
    "pedestrian", "motorcycle", "bicycle"};

// Camera yaw (radians, counter-clockwise from ego +x) per canonical view.
double view_yaw(ViewId v) {
  constexpr double deg = std::numbers::pi / 180.0;
  switch (v) {
    case ViewId::kFront: return 0.0;
    case ViewId::kFrontLeft: return 55.0 * deg;
    case ViewId::kFrontRight: return -55.0 * deg;
    case ViewId::kBack: return 180.0 * deg;
    case ViewId::kBackLeft: return 110.0 * deg;
    case ViewId::kBackRight: return -110.0 * deg;
  }
  return 0.0;
}
}  // namespace

std::string_view view_name(ViewId view) { return kViewNames.at(view_index(view)); }

ViewId parse_view(std::string_view name) {
  for (std::size_t i = 0; i < kViewCount; ++i) {
    if (kViewNames[i] == name) return static_cast<ViewId>(i);
  }
  throw ParseError("unknown view id '" + std::string(name) + "'");
}

std::string_view road_class_name(int cls) { return kRoadNames.at(static_cast<std::size_t>(cls)); }
std::string_view object_class_name(int cls) { return kObjectNames.at(static_cast<std::size_t>(cls)); }

void CameraSpec::validate() const {
  const std::string who = "camera " + std::string(view_name(view));
  if (!(fx > 0) || !(fy > 0)) throw ValidationError(who + ": focal lengths must be positive");
  if (width == 0 || height == 0) throw ValidationError(who + ": empty image size");
  if (!(cx >= 0 && cx < static_cast<double>(width) && cy >= 0 && cy < static_cast<double>(height))) {
    throw ValidationError(who + ": principal point outside the image");
  }
  const double orth = (rotation.transpose() * rotation - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
  if (orth > 1e-9 || std::abs(rotation.determinant() - 1.0) > 1e-9) {
    throw ValidationError(who + ": rotation is not a proper orthonormal matrix");
  }
}

void Box3D::validate() const {
  if (!(size.x() > 0 && size.y() > 0 && size.z() > 0)) {
    throw ValidationError("box " + std::to_string(track_id) + ": size components must be positive");
  }
  if (!(yaw >= -std::numbers::pi && yaw < std::numbers::pi)) {
    throw ValidationError("box " + std::to_string(track_id) + ": yaw outside [-pi, pi)");
  }
  if (class_id < 0 || class_id >= kObjectClassCount) {
    throw ValidationError("box " + std::to_string(track_id) + ": class_id out of range");
  }
}

void MapElement::validate() const {
  if (polyline.size() < 2) throw ValidationError("map element needs at least 2 points");
  if (class_id < 0 || class_id >= kRoadClassCount) {
    throw ValidationError("map element class_id out of range");
  }
}

bool SceneTimeline::has_frames() const {
  for (const auto& v : frames) {
    if (v.size() != frame_count() || frame_count() == 0) return false;
  }
  return true;
}

void SceneTimeline::validate() const {
  if (frame_timestamps.empty()) throw ValidationError("scene " + name + ": no frames");
  for (std::size_t i = 1; i < frame_timestamps.size(); ++i) {
    if (!(frame_timestamps[i] > frame_timestamps[i - 1])) {
      throw ValidationError("scene " + name + ": frame_timestamps not strictly increasing at index " +
                            std::to_string(i));
    }
  }
  for (std::size_t k = 0; k < ticks.size(); ++k) {
    if (k > 0 && !(ticks[k].t > ticks[k - 1].t)) {
      throw ValidationError("scene " + name + ": tick timestamps not strictly increasing at index " +
                            std::to_string(k));
    }
    bool matched = false;
    for (double ft : frame_timestamps) matched = matched || std::abs(ft - ticks[k].t) <= kTimestampTolerance;
    if (!matched) {
      throw ValidationError("scene " + name + ": tick at t=" + std::to_string(ticks[k].t) +
                            " matches no frame timestamp");
    }
    if (ticks[k].ego.velocity < 0) throw ValidationError("scene " + name + ": negative ego velocity");
    for (const auto& b : ticks[k].boxes) b.validate();
    for (const auto& m : ticks[k].map) m.validate();
  }
  for (std::size_t v = 0; v < kViewCount; ++v) {
    cameras[v].validate();
    if (cameras[v].view != static_cast<ViewId>(v)) {
      throw ValidationError("scene " + name + ": camera order does not follow canonical views");
    }
    if (!frames[v].empty() && frames[v].size() != frame_count()) {
      throw ValidationError("scene " + name + ": view " + std::string(view_name(cameras[v].view)) +
                            " has " + std::to_string(frames[v].size()) + " frames, expected " +
                            std::to_string(frame_count()));
    }
  }
}

std::array<Eigen::Vector3d, 8> box_corners(const Box3D& box) {
  const double hl = box.size.x() / 2, hw = box.size.y() / 2, hh = box.size.z() / 2;
  const double c = std::cos(box.yaw), s = std::sin(box.yaw);
  constexpr std::array<std::array<double, 2>, 4> kFace = {{{1, 1}, {-1, 1}, {-1, -1}, {1, -1}}};
  std::array<Eigen::Vector3d, 8> out;
  for (std::size_t level = 0; level < 2; ++level) {
    const double z = level == 0 ? -hh : hh;
    for (std::size_t i = 0; i < 4; ++i) {
      const double x = kFace[i][0] * hl, y = kFace[i][1] * hw;
      out[level * 4 + i] = box.center + Eigen::Vector3d(c * x - s * y, s * x + c * y, z);
    }
  }
  return out;
}

double wrap_angle(double a) {
  constexpr double two_pi = 2 * std::numbers::pi;
  double w = std::fmod(a + std::numbers::pi, two_pi);
  if (w < 0) w += two_pi;
  w -= std::numbers::pi;
  return w >= std::numbers::pi ? w - two_pi : w;
}

std::array<CameraSpec, kViewCount> canonical_rig(std::size_t width, std::size_t height) {
  constexpr double kHalfFov = 35.0 * std::numbers::pi / 180.0;
  constexpr double kMountHeight = 1.5;
  std::array<CameraSpec, kViewCount> rig;
  for (ViewId v : kAllViews) {
    CameraSpec& cam = rig[view_index(v)];
    cam.view = v;
    cam.width = width;
    cam.height = height;
    cam.fx = cam.fy = (static_cast<double>(width) / 2.0) / std::tan(kHalfFov);
    cam.cx = static_cast<double>(width) / 2.0;
    cam.cy = static_cast<double>(height) / 2.0;
    const double yaw = view_yaw(v);
    const Eigen::Vector3d forward(std::cos(yaw), std::sin(yaw), 0.0);
    const Eigen::Vector3d right(std::sin(yaw), -std::cos(yaw), 0.0);
    const Eigen::Vector3d down(0.0, 0.0, -1.0);
    cam.rotation.row(0) = right.transpose();
    cam.rotation.row(1) = down.transpose();
    cam.rotation.row(2) = forward.transpose();
    cam.translation = -cam.rotation * Eigen::Vector3d(0.0, 0.0, kMountHeight);
  }
  return rig;
}

}  // namespace ds
