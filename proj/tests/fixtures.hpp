#pragma once

#include <string>

#include "teleop/world.hpp"

namespace teleop::testing {

inline std::string default_workspace_path() { return std::string(TELEOP_DATA_DIR) + "/workspace_default.json"; }

inline const world::Workspace& default_workspace() {
  static const world::Workspace ws = world::load_workspace(default_workspace_path());
  return ws;
}

/// Default workspace with every object removed except the listed ones.
inline world::Workspace bare_workspace() {
  world::Workspace ws = default_workspace();
  ws.initial.objects.clear();
  return ws;
}

inline world::ObjectInstance make_object(std::string id, world::ObjectClass cls, Vec3 pos, Vec3 size,
                                         bool movable = true) {
  world::ObjectInstance o;
  o.id = std::move(id);
  o.cls = cls;
  o.pose = Pose6D{pos};
  o.size = size;
  o.movable = movable;
  o.detectable = cls == world::ObjectClass::Screw;
  return o;
}

inline world::ObjectInstance make_screw(std::string id, Vec3 pos, double turns) {
  auto s = make_object(std::move(id), world::ObjectClass::Screw, pos, {0.012, 0.012, 0.02}, turns == 0.0);
  s.articulation = world::ArticulationState{world::JointKind::ScrewJoint, turns, 0.0, 4.0, Vec3::UnitZ()};
  return s;
}

inline void place_ee(world::WorkspaceState& s, const Vec3& p) {
  s.ee_pose.position = p;
  s.ee_command = p;
  s.ee_target.reset();
}

}  // namespace teleop::testing
