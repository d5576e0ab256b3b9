#include "teleop/world.hpp"

#include <array>
#include <cstring>
#include <limits>

#include "teleop/error.hpp"

namespace teleop::world {

namespace {

constexpr double kHandleStandoff = 0.02;  // handle protrudes from the drawer front
constexpr double kDrawerFloor = 0.02;
constexpr double kOpenAperture = 0.08;

bool is_drawer(const ObjectInstance& o) { return o.cls == ObjectClass::Drawer && o.articulation; }

Transform pose_transform(const Pose6D& p) { return Transform::from_pose(p); }

double lowest_corner_z(const Box3& box) {
  double lo = std::numeric_limits<double>::infinity();
  for (int i = 0; i < 8; ++i) {
    Vec3 c{(i & 1) ? box.half.x() : -box.half.x(), (i & 2) ? box.half.y() : -box.half.y(),
           (i & 4) ? box.half.z() : -box.half.z()};
    lo = std::min(lo, box.frame.apply(c).z());
  }
  return lo;
}

void move_reference(WorkspaceState& s, const PhysicsConfig& phys, double dt) {
  if (!s.ee_target) return;
  const Pose6D& target = *s.ee_target;

  Vec3 delta = target.position - s.ee_command;
  double dist = delta.norm();
  double max_step = phys.v_max * dt;
  if (dist <= max_step) {
    s.ee_command = target.position;
  } else {
    s.ee_command += delta * (max_step / dist);
  }

  std::array<double, 3> diff{angle_diff(target.yaw, s.ee_pose.yaw),
                             angle_diff(target.pitch, s.ee_pose.pitch),
                             angle_diff(target.roll, s.ee_pose.roll)};
  double largest = std::max({std::abs(diff[0]), std::abs(diff[1]), std::abs(diff[2])});
  double max_turn = phys.omega_max * dt;
  if (largest <= max_turn) {
    s.ee_pose.yaw = target.yaw;
    s.ee_pose.pitch = target.pitch;
    s.ee_pose.roll = target.roll;
  } else {
    double k = max_turn / largest;
    s.ee_pose.yaw = normalize_angle(s.ee_pose.yaw + diff[0] * k);
    s.ee_pose.pitch += diff[1] * k;
    s.ee_pose.roll = normalize_angle(s.ee_pose.roll + diff[2] * k);
  }
}

ObjectInstance* bound_drawer(WorkspaceState& s) {
  if (s.gripper.status != GripperStatus::Holding || !s.gripper.held_object) return nullptr;
  ObjectInstance* o = s.find(*s.gripper.held_object);
  return (o && is_drawer(*o)) ? o : nullptr;
}

void clear_dirt_under(WorkspaceState& s, const ObjectInstance& eraser) {
  auto geom = geometry_of(eraser);
  if (!geom || lowest_corner_z(*geom) > 1e-9) return;
  DirtField& d = s.dirt;
  for (int r = 0; r < d.rows; ++r) {
    for (int c = 0; c < d.cols; ++c) {
      auto& cell = d.cells[static_cast<std::size_t>(r * d.cols + c)];
      if (!cell) continue;
      Vec2 center = d.cell_center(c, r);
      Vec3 local = geom->frame.apply_inverse(Vec3{center.x(), center.y(), geom->frame.translation.z()});
      if (std::abs(local.x()) <= geom->half.x() && std::abs(local.y()) <= geom->half.y()) cell = 0;
    }
  }
}

}  // namespace

std::string_view to_string(ObjectClass c) {
  switch (c) {
    case ObjectClass::Screw: return "screw";
    case ObjectClass::Box: return "box";
    case ObjectClass::Eraser: return "eraser";
    case ObjectClass::Drawer: return "drawer";
    case ObjectClass::Grid: return "grid";
    case ObjectClass::ScrewBox: return "screw_box";
    case ObjectClass::BlueArea: return "blue_area";
  }
  return "?";
}

ObjectClass class_from_string(std::string_view s) {
  static constexpr std::array all{ObjectClass::Screw,  ObjectClass::Box,      ObjectClass::Eraser,
                                  ObjectClass::Drawer, ObjectClass::Grid,     ObjectClass::ScrewBox,
                                  ObjectClass::BlueArea};
  for (auto c : all)
    if (to_string(c) == s) return c;
  throw Error(ErrorCode::InvalidWorkspace, "unknown object class '" + std::string(s) + "'");
}

std::string_view to_string(GripperStatus s) {
  switch (s) {
    case GripperStatus::Open: return "open";
    case GripperStatus::ClosedEmpty: return "closed_empty";
    case GripperStatus::Holding: return "holding";
  }
  return "?";
}

DirtField DirtField::covering(const Rect2& r, double cell) {
  DirtField d;
  d.rect = r;
  d.cell = cell;
  d.cols = static_cast<int>(std::lround(r.width() / cell));
  d.rows = static_cast<int>(std::lround(r.height() / cell));
  d.cells.assign(static_cast<std::size_t>(d.cols * d.rows), 1);
  return d;
}

Vec2 DirtField::cell_center(int col, int row) const {
  return {rect.min.x() + (col + 0.5) * cell, rect.min.y() + (row + 0.5) * cell};
}

std::size_t DirtField::dirty_count() const {
  std::size_t n = 0;
  for (auto c : cells) n += c;
  return n;
}

double DirtField::cleared_fraction() const {
  if (cells.empty()) return 1.0;
  return 1.0 - static_cast<double>(dirty_count()) / static_cast<double>(cells.size());
}

const ObjectInstance* WorkspaceState::find(std::string_view id) const {
  for (const auto& o : objects)
    if (o.id == id) return &o;
  return nullptr;
}

ObjectInstance* WorkspaceState::find(std::string_view id) {
  for (auto& o : objects)
    if (o.id == id) return &o;
  return nullptr;
}

const ObjectInstance& WorkspaceState::at(std::string_view id) const {
  const auto* o = find(id);
  if (!o) throw std::out_of_range("no object '" + std::string(id) + "'");
  return *o;
}

bool Box3::contains(const Vec3& p, double eps) const {
  Vec3 l = frame.apply_inverse(p);
  return std::abs(l.x()) <= half.x() + eps && std::abs(l.y()) <= half.y() + eps &&
         std::abs(l.z()) <= half.z() + eps;
}

Vec3 drawer_handle(const ObjectInstance& d) {
  return d.pose.position + d.articulation->axis * d.articulation->value;
}

static Transform drawer_body(const ObjectInstance& d) {
  const Vec3& axis = d.articulation->axis;
  Vec3 c = drawer_handle(d) - axis * (kHandleStandoff + d.size.x() / 2.0);
  c.z() = d.size.z() / 2.0;
  Pose6D p{c, std::atan2(axis.y(), axis.x())};
  return pose_transform(p);
}

Vec3 drawer_interior(const ObjectInstance& d) {
  Vec3 c = drawer_body(d).translation;
  c.z() = kDrawerFloor;
  return c;
}

Vec3 drawer_label_point(const ObjectInstance& d) {
  Vec3 p = drawer_handle(d) - d.articulation->axis * kHandleStandoff;
  p.z() = d.size.z() - 0.02;
  return p;
}

Vec3 screw_head(const ObjectInstance& s) { return s.pose.position + Vec3{0, 0, s.size.z() / 2.0}; }

std::optional<Box3> geometry_of(const ObjectInstance& obj) {
  if (obj.cls == ObjectClass::BlueArea) return std::nullopt;
  if (is_drawer(obj)) return Box3{drawer_body(obj), obj.size / 2.0};
  return Box3{pose_transform(obj.pose), obj.size / 2.0};
}

std::pair<double, std::string> support_below(const WorkspaceState& state, const Vec2& xy,
                                             double below_z) {
  std::pair<double, std::string> best{0.0, ""};
  for (const auto& o : state.objects) {
    double top;
    Box3 footprint;
    if (is_drawer(o)) {
      footprint = Box3{drawer_body(o), o.size / 2.0};
      top = kDrawerFloor;
    } else if (o.cls == ObjectClass::Grid || o.cls == ObjectClass::ScrewBox) {
      footprint = *geometry_of(o);
      top = o.pose.position.z() + o.size.z() / 2.0;
    } else {
      continue;
    }
    Vec3 probe{xy.x(), xy.y(), footprint.frame.translation.z()};
    Vec3 l = footprint.frame.apply_inverse(probe);
    if (std::abs(l.x()) > footprint.half.x() || std::abs(l.y()) > footprint.half.y()) continue;
    if (top <= below_z + 1e-9 && top > best.first) best = {top, o.id};
  }
  return best;
}

void step_in_place(WorkspaceState& s, const Workspace& ws, double dt) {
  const PhysicsConfig& phys = ws.physics;
  if (std::abs(dt - phys.tick_dt) > 1e-15) throw std::invalid_argument("step: dt must equal tick_dt");

  if (!bound_drawer(s)) s.ee_command = s.ee_pose.position;
  move_reference(s, phys, dt);

  Vec3 deviation = Vec3::Zero();
  if (ObjectInstance* d = bound_drawer(s)) {
    ArticulationState& art = *d->articulation;
    Vec3 desired_handle = s.ee_command - s.gripper.bind_offset;
    double desired = (desired_handle - d->pose.position).dot(art.axis);
    double axial_force = s.contact_force.dot(art.axis);
    // Admittance gate: the drawer slides only while the axial load stays below F_slide.
    if (std::abs(axial_force) < phys.f_slide) art.set(desired);
    d->drawer->max_extension = std::max(d->drawer->max_extension, art.value);
    s.ee_pose.position = drawer_handle(*d) + s.gripper.bind_offset;
    deviation = s.ee_command - s.ee_pose.position;
  } else {
    s.ee_pose.position = s.ee_command;
  }

  double lowest = s.ee_pose.position.z();
  if (s.gripper.status == GripperStatus::Holding && s.gripper.held_object) {
    ObjectInstance* held = s.find(*s.gripper.held_object);
    if (held && !is_drawer(*held)) {
      Transform t = pose_transform(s.ee_pose) * s.gripper.held_offset;
      held->pose = t.to_pose();
      lowest = std::min(lowest, lowest_corner_z(*geometry_of(*held)));
      if (held->cls == ObjectClass::Eraser) clear_dirt_under(s, *held);
    }
  }

  double penetration = std::max(0.0, -lowest);
  s.contact_force = phys.k_contact * deviation + Vec3{0, 0, phys.k_contact * penetration};
  s.sim_time += dt;
}

WorkspaceState step(const WorkspaceState& state, const Workspace& ws, double dt) {
  WorkspaceState next = state;
  step_in_place(next, ws, dt);
  return next;
}

WorkspaceState grasp_attempt(const WorkspaceState& state, const Workspace& ws) {
  if (state.gripper.status == GripperStatus::Holding)
    throw Error(ErrorCode::GraspWhileHolding, "grasp requested while already holding");

  WorkspaceState s = state;
  const Vec3& fingers = s.ee_pose.position;
  const ObjectInstance* best = nullptr;
  double best_dist = std::numeric_limits<double>::infinity();
  for (const auto& o : s.objects) {
    Vec3 point;
    if (is_drawer(o)) {
      point = drawer_handle(o);
    } else if (o.movable) {
      point = o.pose.position;
    } else {
      continue;
    }
    double dist = (point - fingers).norm();
    if (dist > ws.physics.grasp_tolerance) continue;
    if (dist < best_dist || (dist == best_dist && best && o.id < best->id)) {
      best = &o;
      best_dist = dist;
    }
  }

  if (!best) {
    s.gripper = GripperState{};
    s.gripper.status = GripperStatus::ClosedEmpty;
    s.gripper.aperture = 0.0;
    return s;
  }

  s.gripper.status = GripperStatus::Holding;
  s.gripper.held_object = best->id;
  if (is_drawer(*best)) {
    s.gripper.bind_offset = fingers - drawer_handle(*best);
    s.gripper.held_offset = Transform{};
    s.gripper.aperture = 0.02;
  } else {
    Transform ee = pose_transform(s.ee_pose);
    Transform obj = pose_transform(best->pose);
    s.gripper.held_offset = Transform{ee.rotation.transpose() * obj.rotation,
                                      ee.apply_inverse(obj.translation)};
    s.gripper.bind_offset = Vec3::Zero();
    s.gripper.aperture = std::min(best->size.x(), best->size.y());
    s.find(best->id)->container.clear();
  }
  s.ee_command = s.ee_pose.position;
  return s;
}

WorkspaceState release(const WorkspaceState& state, const Workspace&) {
  WorkspaceState s = state;
  if (s.gripper.status == GripperStatus::Holding && s.gripper.held_object) {
    ObjectInstance* held = s.find(*s.gripper.held_object);
    if (held && !is_drawer(*held)) {
      Vec3 c = held->pose.position;
      double bottom = c.z() - held->size.z() / 2.0;
      auto [height, support] = support_below(s, c.head<2>(), bottom);
      held->pose = Pose6D{Vec3{c.x(), c.y(), height + held->size.z() / 2.0}, held->pose.yaw};
      held->container = support;
    }
  }
  s.gripper = GripperState{};
  s.gripper.aperture = kOpenAperture;
  s.ee_command = s.ee_pose.position;
  return s;
}

WorkspaceState turn_tool(const WorkspaceState& state, const Workspace& ws, int turns) {
  WorkspaceState s = state;
  ObjectInstance* engaged = nullptr;
  double best = std::numeric_limits<double>::infinity();
  for (auto& o : s.objects) {
    if (o.cls != ObjectClass::Screw || !o.articulation) continue;
    double dist = (screw_head(o) - s.ee_pose.position).norm();
    if (dist <= ws.physics.grasp_tolerance && dist < best) {
      best = dist;
      engaged = &o;
    }
  }
  if (!engaged) throw Error(ErrorCode::NoScrewEngaged, "end-effector is not on a screw head");

  ArticulationState& art = *engaged->articulation;
  if (turns < 0) {
    art.set(art.value - std::abs(turns));
  } else {
    art.set(art.value + turns);
  }
  engaged->movable = art.value == 0.0;
  return s;
}

namespace {

struct Fnv {
  std::uint64_t h{1469598103934665603ULL};
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ULL;
    }
  }
  void num(double v) {
    if (v == 0.0) v = 0.0;  // fold -0.0
    bytes(&v, sizeof v);
  }
  void vec(const Vec3& v) {
    num(v.x());
    num(v.y());
    num(v.z());
  }
  void pose(const Pose6D& p) {
    vec(p.position);
    num(p.yaw);
    num(p.pitch);
    num(p.roll);
  }
  void str(const std::string& s) {
    bytes(s.data(), s.size());
    bytes("\0", 1);
  }
};

}  // namespace

std::uint64_t physical_hash(const WorkspaceState& s) {
  Fnv f;
  for (const auto& o : s.objects) {
    f.str(o.id);
    f.pose(o.pose);
    f.num(o.movable ? 1.0 : 0.0);
    f.str(o.container);
    if (o.articulation) f.num(o.articulation->value);
    if (o.drawer) {
      f.num(o.drawer->max_extension);
      f.num(o.drawer->inspect_dwell);
    }
  }
  f.pose(s.ee_pose);
  f.num(static_cast<double>(s.gripper.status));
  if (s.gripper.held_object) f.str(*s.gripper.held_object);
  f.bytes(s.dirt.cells.data(), s.dirt.cells.size());
  return f.h;
}

}  // namespace teleop::world
