#include "teleop/perception.hpp"

#include <limits>
#include <random>

namespace teleop::perception {

using world::ObjectClass;
using world::WorkspaceState;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Slab test in the box frame. Returns the entry parameter along origin + t * dir,
// or nullopt when the ray misses or the box lies behind the origin.
std::optional<double> ray_box(const Vec3& origin, const Vec3& dir, const world::Box3& box) {
  Vec3 o = box.frame.apply_inverse(origin);
  Vec3 d = box.frame.rotation.transpose() * dir;
  double t_near = -kInf, t_far = kInf;
  for (int i = 0; i < 3; ++i) {
    if (std::abs(d[i]) < 1e-15) {
      if (std::abs(o[i]) > box.half[i]) return std::nullopt;
      continue;
    }
    double t1 = (-box.half[i] - o[i]) / d[i];
    double t2 = (box.half[i] - o[i]) / d[i];
    if (t1 > t2) std::swap(t1, t2);
    t_near = std::max(t_near, t1);
    t_far = std::min(t_far, t2);
    if (t_near > t_far) return std::nullopt;
  }
  if (t_far < 0.0) return std::nullopt;
  return std::max(t_near, 0.0);
}

bool is_held(const WorkspaceState& s, const world::ObjectInstance& o) {
  return s.gripper.held_object && *s.gripper.held_object == o.id &&
         o.cls != ObjectClass::Drawer;
}

Transform camera_transform(const Pose6D& camera_pose) { return Transform::from_pose(camera_pose); }

}  // namespace

CameraModel CameraModel::from(const world::CameraConfig& c) {
  return CameraModel{c.focal, c.cx, c.cy, c.width, c.height, c.mount};
}

bool CameraModel::valid() const {
  return focal > 0.0 && width > 0 && height > 0 && cx >= 0.0 && cx <= width && cy >= 0.0 && cy <= height;
}

bool CameraModel::in_bounds(const Vec2& px) const {
  return px.x() >= 0.0 && px.x() <= width && px.y() >= 0.0 && px.y() <= height;
}

Pose6D camera_pose_for(const Pose6D& ee_pose, const CameraModel& model) {
  return (Transform::from_pose(ee_pose) * Transform::from_pose(model.mount)).to_pose();
}

std::optional<Projection> project(const Vec3& point, const Pose6D& camera_pose, const CameraModel& model) {
  Vec3 c = camera_transform(camera_pose).apply_inverse(point);
  if (c.z() <= 0.0) return std::nullopt;
  Vec2 px{model.cx + model.focal * c.x() / c.z(), model.cy + model.focal * c.y() / c.z()};
  if (!model.in_bounds(px)) return std::nullopt;
  return Projection{px, c.z()};
}

std::optional<double> depth_at(const Vec2& pixel, const WorkspaceState& state, const world::Workspace& ws,
                               const Pose6D& camera_pose, const CameraModel& model) {
  Transform cam = camera_transform(camera_pose);
  // Unit camera-frame z: the ray parameter equals camera-frame depth.
  Vec3 dir = cam.rotation * Vec3{(pixel.x() - model.cx) / model.focal, (pixel.y() - model.cy) / model.focal, 1.0};
  const Vec3& origin = cam.translation;

  double best = kInf;
  if (dir.z() < 0.0) {
    double t = -origin.z() / dir.z();
    Vec3 hit = origin + t * dir;
    if (t > 0.0 && ws.table.contains(hit.head<2>())) best = t;
  }
  for (const auto& o : state.objects) {
    if (is_held(state, o)) continue;
    auto box = world::geometry_of(o);
    if (!box) continue;
    if (auto t = ray_box(origin, dir, *box); t && *t > 0.0 && *t < best) best = *t;
  }
  if (best == kInf) return std::nullopt;
  return best;
}

std::optional<Vec3> unproject(const Vec2& pixel, const WorkspaceState& state, const world::Workspace& ws,
                              const Pose6D& camera_pose, const CameraModel& model) {
  auto depth = depth_at(pixel, state, ws, camera_pose, model);
  if (!depth) return std::nullopt;
  Vec3 c{(pixel.x() - model.cx) / model.focal * *depth, (pixel.y() - model.cy) / model.focal * *depth, *depth};
  return camera_transform(camera_pose).apply(c);
}

std::vector<DetectionMarker> detect(const WorkspaceState& state, const world::Workspace&,
                                    const Pose6D& camera_pose, const CameraModel& model, double noise_sigma,
                                    std::uint64_t seed) {
  if (noise_sigma < 0.0) throw std::invalid_argument("detect: noise sigma must be >= 0");
  std::mt19937_64 rng(seed);
  std::vector<DetectionMarker> out;
  const Vec3 eye = camera_pose.position;

  for (const auto& o : state.objects) {
    if (!o.detectable || is_held(state, o)) continue;
    auto proj = project(o.pose.position, camera_pose, model);
    if (!proj) continue;

    // Coarse occlusion: the sight line to the center must not cross another box.
    Vec3 to_center = o.pose.position - eye;
    bool occluded = false;
    for (const auto& other : state.objects) {
      if (other.id == o.id || is_held(state, other)) continue;
      auto box = world::geometry_of(other);
      if (!box) continue;
      if (auto t = ray_box(eye, to_center, *box); t && *t < 1.0 - 1e-9) {
        occluded = true;
        break;
      }
    }
    if (occluded) continue;

    DetectionMarker m;
    m.object_id = o.id;
    m.cls = o.cls;
    m.anchor_pixel = proj->pixel;
    m.estimated_pose = o.pose;
    if (noise_sigma > 0.0) {
      std::normal_distribution<double> pos(0.0, noise_sigma);
      std::normal_distribution<double> yaw(0.0, noise_sigma * 10.0);
      m.estimated_pose.position += Vec3{pos(rng), pos(rng), pos(rng)};
      m.estimated_pose.yaw = normalize_angle(m.estimated_pose.yaw + yaw(rng));
    }
    if (auto box = world::geometry_of(o)) {
      for (int i = 0; i < 4; ++i) {
        Vec3 corner{(i == 1 || i == 2) ? box->half.x() : -box->half.x(), (i >= 2) ? box->half.y() : -box->half.y(),
                    box->half.z()};
        if (auto p = project(box->frame.apply(corner), camera_pose, model)) m.outline.push_back(p->pixel);
      }
    }
    out.push_back(std::move(m));
  }
  return out;
}

std::vector<DetectionMarker> filter_with_pois(std::vector<DetectionMarker> markers, const std::vector<Vec3>& lattice,
                                              double snap_radius) {
  for (auto& m : markers) {
    if (m.cls != ObjectClass::Screw) continue;
    const Vec2 xy = m.estimated_pose.position.head<2>();
    const Vec3* nearest = nullptr;
    double best = kInf;
    for (const auto& p : lattice) {
      double d = (p.head<2>() - xy).norm();
      if (d < best) {
        best = d;
        nearest = &p;
      }
    }
    if (nearest && best <= snap_radius) {
      m.estimated_pose.position.x() = nearest->x();
      m.estimated_pose.position.y() = nearest->y();
    }
  }
  return markers;
}

Vec3 poi_anchor(const world::ObjectInstance& obj) {
  if (obj.cls == ObjectClass::Drawer && obj.articulation) return world::drawer_handle(obj);
  return obj.pose.position;
}

FrameDescription describe_frame(const WorkspaceState& state, const world::Workspace& ws, const CameraModel& model,
                                std::uint64_t frame_id, double noise_sigma, std::uint64_t seed) {
  FrameDescription f;
  f.frame_id = frame_id;
  f.camera_pose = camera_pose_for(state.ee_pose, model);
  f.gripper_status = state.gripper.status;
  f.markers = filter_with_pois(detect(state, ws, f.camera_pose, model, noise_sigma, seed ^ (frame_id * 0x9E3779B97F4A7C15ULL)),
                               ws.grid_holes);
  for (const auto& o : state.objects) {
    if (!o.is_static()) continue;
    Vec3 anchor = poi_anchor(o);
    if (auto p = project(anchor, f.camera_pose, model)) f.poi_markers.push_back({o.id, o.cls, p->pixel, anchor});
  }
  return f;
}

bool label_readable(const Vec3& point, const Pose6D& camera_pose, const CameraModel& model, double max_depth) {
  auto p = project(point, camera_pose, model);
  return p && p->depth <= max_depth;
}

nlohmann::json pose_to_json(const Pose6D& p) {
  return {{"position", {p.position.x(), p.position.y(), p.position.z()}},
          {"yaw", p.yaw},
          {"pitch", p.pitch},
          {"roll", p.roll}};
}

Pose6D pose_from_json(const nlohmann::json& j) {
  const auto& a = j.at("position");
  return Pose6D{Vec3{a.at(0).get<double>(), a.at(1).get<double>(), a.at(2).get<double>()}, j.value("yaw", 0.0),
                j.value("pitch", 0.0), j.value("roll", 0.0)};
}

namespace {

nlohmann::json px_json(const Vec2& p) { return {p.x(), p.y()}; }
Vec2 px_from(const nlohmann::json& j) { return {j.at(0).get<double>(), j.at(1).get<double>()}; }

world::GripperStatus gripper_from(const std::string& s) {
  if (s == "open") return world::GripperStatus::Open;
  if (s == "closed_empty") return world::GripperStatus::ClosedEmpty;
  if (s == "holding") return world::GripperStatus::Holding;
  throw std::invalid_argument("unknown gripper status '" + s + "'");
}

}  // namespace

nlohmann::json to_json(const FrameDescription& f) {
  nlohmann::json markers = nlohmann::json::array();
  for (const auto& m : f.markers) {
    nlohmann::json outline = nlohmann::json::array();
    for (const auto& p : m.outline) outline.push_back(px_json(p));
    markers.push_back({{"object_id", m.object_id},
                       {"class", std::string(world::to_string(m.cls))},
                       {"anchor_pixel", px_json(m.anchor_pixel)},
                       {"outline", outline},
                       {"estimated_pose", pose_to_json(m.estimated_pose)}});
  }
  nlohmann::json pois = nlohmann::json::array();
  for (const auto& p : f.poi_markers)
    pois.push_back({{"name", p.name},
                    {"class", std::string(world::to_string(p.cls))},
                    {"anchor_pixel", px_json(p.anchor_pixel)},
                    {"position", {p.position.x(), p.position.y(), p.position.z()}}});
  return {{"frame_id", f.frame_id},
          {"camera_pose", pose_to_json(f.camera_pose)},
          {"gripper_status", std::string(world::to_string(f.gripper_status))},
          {"markers", markers},
          {"poi_markers", pois}};
}

FrameDescription frame_from_json(const nlohmann::json& j) {
  FrameDescription f;
  f.frame_id = j.at("frame_id").get<std::uint64_t>();
  f.camera_pose = pose_from_json(j.at("camera_pose"));
  f.gripper_status = gripper_from(j.at("gripper_status").get<std::string>());
  for (const auto& m : j.at("markers")) {
    DetectionMarker d;
    d.object_id = m.at("object_id").get<std::string>();
    d.cls = world::class_from_string(m.at("class").get<std::string>());
    d.anchor_pixel = px_from(m.at("anchor_pixel"));
    for (const auto& p : m.at("outline")) d.outline.push_back(px_from(p));
    d.estimated_pose = pose_from_json(m.at("estimated_pose"));
    f.markers.push_back(std::move(d));
  }
  for (const auto& p : j.at("poi_markers")) {
    const auto& pos = p.at("position");
    f.poi_markers.push_back({p.at("name").get<std::string>(), world::class_from_string(p.at("class").get<std::string>()),
                             px_from(p.at("anchor_pixel")),
                             Vec3{pos.at(0).get<double>(), pos.at(1).get<double>(), pos.at(2).get<double>()}});
  }
  return f;
}

}  // namespace teleop::perception
