#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "teleop/geometry.hpp"
#include "teleop/world.hpp"

namespace teleop::perception {

/// Pinhole intrinsics plus the fixed end-effector-to-camera mount.
/// Camera frame: x right, y down (image rows), z along the optical axis.
struct CameraModel {
  double focal{600.0};
  double cx{640.0};
  double cy{360.0};
  int width{1280};
  int height{720};
  Pose6D mount;

  static CameraModel from(const world::CameraConfig& c);
  bool valid() const;
  bool in_bounds(const Vec2& px) const;
};

/// World pose of the camera for a given end-effector pose.
Pose6D camera_pose_for(const Pose6D& ee_pose, const CameraModel& model);

struct Projection {
  Vec2 pixel;
  double depth;
};

/// Pinhole projection; nullopt means out of view (behind the camera or off-image).
std::optional<Projection> project(const Vec3& point, const Pose6D& camera_pose, const CameraModel& model);

/// Camera-frame depth (z) of the first surface hit along the pixel's ray, over the
/// table plane, object boxes and drawer bodies. Held objects are ignored.
std::optional<double> depth_at(const Vec2& pixel, const world::WorkspaceState& state,
                               const world::Workspace& ws, const Pose6D& camera_pose,
                               const CameraModel& model);

std::optional<Vec3> unproject(const Vec2& pixel, const world::WorkspaceState& state,
                              const world::Workspace& ws, const Pose6D& camera_pose,
                              const CameraModel& model);

struct DetectionMarker {
  std::string object_id;
  world::ObjectClass cls{world::ObjectClass::Screw};
  Vec2 anchor_pixel{Vec2::Zero()};
  std::vector<Vec2> outline;
  Pose6D estimated_pose;
};

/// Simulated detector: ground truth for detectable, visible, unheld objects, with
/// optional Gaussian pose noise drawn from a generator seeded by `seed`.
std::vector<DetectionMarker> detect(const world::WorkspaceState& state, const world::Workspace& ws,
                                    const Pose6D& camera_pose, const CameraModel& model,
                                    double noise_sigma = 0.0, std::uint64_t seed = 0);

inline constexpr double kSnapRadius = 0.015;

/// Snaps screw markers onto the nearest grid hole when within `snap_radius` (xy only).
std::vector<DetectionMarker> filter_with_pois(std::vector<DetectionMarker> markers,
                                              const std::vector<Vec3>& lattice,
                                              double snap_radius = kSnapRadius);

struct PoiMarker {
  std::string name;   ///< static object id
  world::ObjectClass cls{world::ObjectClass::Drawer};
  Vec2 anchor_pixel{Vec2::Zero()};
  Vec3 position{Vec3::Zero()};
};

struct FrameDescription {
  Pose6D camera_pose;
  std::vector<DetectionMarker> markers;
  world::GripperStatus gripper_status{world::GripperStatus::Open};
  std::vector<PoiMarker> poi_markers;
  std::uint64_t frame_id{0};
};

/// Anchor of a static point of interest: drawer handle, or the object's center.
Vec3 poi_anchor(const world::ObjectInstance& obj);

FrameDescription describe_frame(const world::WorkspaceState& state, const world::Workspace& ws,
                                const CameraModel& model, std::uint64_t frame_id,
                                double noise_sigma = 0.0, std::uint64_t seed = 0);

/// Whether a printed label at `point` is legible on screen (in view and close enough).
bool label_readable(const Vec3& point, const Pose6D& camera_pose, const CameraModel& model,
                    double max_depth = 0.30);

nlohmann::json to_json(const FrameDescription& frame);
FrameDescription frame_from_json(const nlohmann::json& j);
nlohmann::json pose_to_json(const Pose6D& p);
Pose6D pose_from_json(const nlohmann::json& j);

}  // namespace teleop::perception
