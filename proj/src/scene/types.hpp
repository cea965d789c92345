#pragma once

#include <Eigen/Core>
#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "common/image.hpp"

namespace ds {

// The six canonical surround cameras.
enum class ViewId : int {
  kFront = 0,
  kFrontLeft = 1,
  kFrontRight = 2,
  kBack = 3,
  kBackLeft = 4,
  kBackRight = 5,
};

inline constexpr std::size_t kViewCount = 6;
inline constexpr std::array<ViewId, kViewCount> kAllViews = {
    ViewId::kFront, ViewId::kFrontLeft, ViewId::kFrontRight,
    ViewId::kBack,  ViewId::kBackLeft,  ViewId::kBackRight};

std::string_view view_name(ViewId view);
ViewId parse_view(std::string_view name);
inline std::size_t view_index(ViewId v) { return static_cast<std::size_t>(v); }

inline constexpr int kRoadClassCount = 8;
inline constexpr int kObjectClassCount = 8;

// Road classes occupy condition channels 0..7, object classes 8..15.
enum RoadClass : int {
  kDrivableArea = 0,
  kPedCrossing = 1,
  kWalkway = 2,
  kStopLine = 3,
  kCarparkArea = 4,
  kRoadDivider = 5,
  kLaneDivider = 6,
  kTrafficIsland = 7,
};

enum ObjectClass : int {
  kCar = 0,
  kTruck = 1,
  kBus = 2,
  kTrailer = 3,
  kConstructionVehicle = 4,
  kPedestrian = 5,
  kMotorcycle = 6,
  kBicycle = 7,
};

std::string_view road_class_name(int cls);
std::string_view object_class_name(int cls);
inline bool is_vehicle_class(int object_cls) { return object_cls >= kCar && object_cls <= kConstructionVehicle; }

struct CameraSpec {
  ViewId view = ViewId::kFront;
  double fx = 0, fy = 0, cx = 0, cy = 0;
  // Ego -> camera: p_cam = rotation * p_ego + translation. Camera axes: x right, y down, z forward.
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
  std::size_t width = 0, height = 0;

  // Throws ValidationError when intrinsics or rotation are invalid.
  void validate() const;
};

struct Box3D {
  Eigen::Vector3d center = Eigen::Vector3d::Zero();  // ego frame, meters
  Eigen::Vector3d size = Eigen::Vector3d::Ones();    // length, width, height
  double yaw = 0;                                     // [-pi, pi)
  int class_id = kCar;
  int track_id = 0;

  void validate() const;
};

struct MapElement {
  std::vector<Eigen::Vector2d> polyline;  // ego frame, meters
  int class_id = kDrivableArea;
  bool closed = false;

  void validate() const;
};

struct EgoState {
  double velocity = 0;         // m/s
  double direction_angle = 0;  // radians
};

struct AnnotationTick {
  double t = 0;
  EgoState ego;
  std::vector<Box3D> boxes;
  std::vector<MapElement> map;
};

struct SceneTimeline {
  std::string name;
  std::array<CameraSpec, kViewCount> cameras;  // indexed by view_index
  std::vector<double> frame_timestamps;
  std::vector<AnnotationTick> ticks;  // 2 Hz
  // frames[view][frame]; empty when the scene carries annotations only.
  std::array<std::vector<Image>, kViewCount> frames;

  std::size_t frame_count() const { return frame_timestamps.size(); }
  bool has_frames() const;
  const CameraSpec& camera(ViewId v) const { return cameras[view_index(v)]; }
  void validate() const;
};

inline constexpr double kTimestampTolerance = 1e-6;
inline constexpr double kAnnotationRateHz = 2.0;

// Eight corners: bottom face counter-clockwise starting at (+x,+y), then the top face.
std::array<Eigen::Vector3d, 8> box_corners(const Box3D& box);

// Wraps an angle into [-pi, pi).
double wrap_angle(double a);

// Canonical six-camera rig: pinhole cameras at 1.5 m height, 70 degree horizontal FOV.
std::array<CameraSpec, kViewCount> canonical_rig(std::size_t width = 64, std::size_t height = 32);

}  // namespace ds
