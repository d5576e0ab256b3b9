#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "teleop/geometry.hpp"

namespace teleop::world {

enum class ObjectClass { Screw, Box, Eraser, Drawer, Grid, ScrewBox, BlueArea };

std::string_view to_string(ObjectClass c);
ObjectClass class_from_string(std::string_view s);

enum class JointKind { Prismatic, ScrewJoint };

struct ArticulationState {
  JointKind kind{JointKind::Prismatic};
  double value{0.0};  ///< drawer extension [m] or screw turns remaining
  double min{0.0};
  double max{0.0};
  Vec3 axis{Vec3::UnitX()};

  void set(double v) { value = std::clamp(v, min, max); }
};

/// Drawer bookkeeping: ground-truth label and contents (what a human reads),
/// plus history the exploration task is scored on.
struct DrawerMeta {
  std::string label;
  int item_count{0};
  double max_extension{0.0};
  double inspect_dwell{0.0};  ///< seconds the camera watched the open interior, capped
};

struct ObjectInstance {
  std::string id;
  ObjectClass cls{ObjectClass::Box};
  Pose6D pose;        ///< geometric center; for drawers, the handle when closed
  Vec3 size{Vec3::Zero()};  ///< full extents in the object frame
  bool detectable{false};
  bool movable{false};
  std::optional<ArticulationState> articulation;
  std::optional<DrawerMeta> drawer;
  std::string container;  ///< id of the static support the object rests in, "" for the table

  bool is_static() const {
    return cls == ObjectClass::Drawer || cls == ObjectClass::Grid || cls == ObjectClass::ScrewBox ||
           cls == ObjectClass::BlueArea;
  }
};

enum class GripperStatus { Open, ClosedEmpty, Holding };
std::string_view to_string(GripperStatus s);

struct GripperState {
  GripperStatus status{GripperStatus::Open};
  std::optional<std::string> held_object;
  double aperture{0.08};
  Transform held_offset;  ///< held object relative to the end-effector
  Vec3 bind_offset{Vec3::Zero()};  ///< end-effector relative to a grasped drawer handle
};

/// Boolean dirt cells over the blue area; row-major, 1 = dirty.
struct DirtField {
  Rect2 rect;
  double cell{0.01};
  int cols{0};
  int rows{0};
  std::vector<std::uint8_t> cells;

  static DirtField covering(const Rect2& r, double cell);
  Vec2 cell_center(int col, int row) const;
  std::size_t dirty_count() const;
  double cleared_fraction() const;
};

struct WorkspaceState {
  std::vector<ObjectInstance> objects;
  Pose6D ee_pose;
  std::optional<Pose6D> ee_target;
  /// Reference the motion controller tracks; equals ee_pose unless bound to a drawer.
  Vec3 ee_command{Vec3::Zero()};
  GripperState gripper;
  Vec3 contact_force{Vec3::Zero()};
  DirtField dirt;
  double sim_time{0.0};
  /// Wrist spin rate while a screw is being turned [rad/s]; counted as robot motion.
  double tool_rate{0.0};

  const ObjectInstance* find(std::string_view id) const;
  ObjectInstance* find(std::string_view id);
  const ObjectInstance& at(std::string_view id) const;
};

struct PhysicsConfig {
  double tick_dt{0.01};
  double v_max{0.2};
  double omega_max{kPi / 4.0};
  double k_contact{5000.0};
  double f_slide{15.0};
  double f_max{30.0};
  double grasp_tolerance{0.02};
};

struct CameraConfig {
  double focal{600.0};
  double cx{640.0};
  double cy{360.0};
  int width{1280};
  int height{720};
  Pose6D mount;  ///< camera frame in the end-effector frame
};

struct PointOfInterest {
  std::string name;
  Vec3 position{Vec3::Zero()};
};

/// Static description of a workspace plus its initial state.
struct Workspace {
  int schema_version{1};
  PhysicsConfig physics;
  CameraConfig camera;
  Rect2 table;
  Pose6D home;
  std::vector<Vec3> grid_holes;
  std::map<std::string, Rect2> regions;
  std::vector<PointOfInterest> pois;
  WorkspaceState initial;
};

inline constexpr int kWorkspaceSchemaVersion = 1;

Workspace load_workspace(const std::string& path);
Workspace parse_workspace(const nlohmann::json& doc);
nlohmann::json workspace_to_json(const Workspace& ws);

// Operations. All are total on valid states and never touch wall-clock time.

WorkspaceState step(const WorkspaceState& state, const Workspace& ws, double dt);
void step_in_place(WorkspaceState& state, const Workspace& ws, double dt);

WorkspaceState grasp_attempt(const WorkspaceState& state, const Workspace& ws);
WorkspaceState release(const WorkspaceState& state, const Workspace& ws);
WorkspaceState turn_tool(const WorkspaceState& state, const Workspace& ws, int turns);

// Geometry helpers shared with perception and plan.

/// Oriented box of an object in the world; drawers report their moving body.
struct Box3 {
  Transform frame;
  Vec3 half{Vec3::Zero()};
  bool contains(const Vec3& p, double eps = 0.0) const;
};

std::optional<Box3> geometry_of(const ObjectInstance& obj);
Vec3 drawer_handle(const ObjectInstance& drawer);
Vec3 drawer_interior(const ObjectInstance& drawer);
Vec3 drawer_label_point(const ObjectInstance& drawer);
Vec3 screw_head(const ObjectInstance& screw);

/// Height of the highest support under (x, y) whose top is at or below `below_z`.
/// Returns the support height and the supporting static object id ("" for the table).
std::pair<double, std::string> support_below(const WorkspaceState& state, const Vec2& xy,
                                             double below_z);

/// Order-independent digest of the physical configuration (poses, articulations,
/// gripper, dirt, drawer history). Excludes sim_time.
std::uint64_t physical_hash(const WorkspaceState& state);

}  // namespace teleop::world
