#include <fstream>

#include "teleop/error.hpp"
#include "teleop/world.hpp"

namespace teleop::world {

using nlohmann::json;

namespace {

Vec3 vec3(const json& j) {
  if (!j.is_array() || j.size() != 3) throw Error(ErrorCode::InvalidWorkspace, "expected [x, y, z]");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

json vec3_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

Pose6D pose(const json& j) {
  return Pose6D{vec3(j.at("position")), j.value("yaw", 0.0), j.value("pitch", 0.0), j.value("roll", 0.0)};
}

json pose_json(const Pose6D& p) {
  return {{"position", vec3_json(p.position)}, {"yaw", p.yaw}, {"pitch", p.pitch}, {"roll", p.roll}};
}

Rect2 rect(const json& j) {
  Rect2 r{{j.at("x_min").get<double>(), j.at("y_min").get<double>()},
          {j.at("x_max").get<double>(), j.at("y_max").get<double>()}};
  if (r.width() < 0 || r.height() < 0) throw Error(ErrorCode::InvalidWorkspace, "inverted rectangle");
  return r;
}

json rect_json(const Rect2& r) {
  return {{"x_min", r.min.x()}, {"y_min", r.min.y()}, {"x_max", r.max.x()}, {"y_max", r.max.y()}};
}

ObjectInstance object(const json& j) {
  ObjectInstance o;
  o.id = j.at("id").get<std::string>();
  o.cls = class_from_string(j.at("class").get<std::string>());
  o.pose = pose(j.at("pose"));
  o.size = vec3(j.at("size"));
  o.detectable = j.value("detectable", o.cls == ObjectClass::Screw);
  o.movable = j.value("movable", false);
  o.container = j.value("container", "");
  if (j.contains("articulation")) {
    const auto& a = j["articulation"];
    ArticulationState art;
    std::string kind = a.at("kind").get<std::string>();
    if (kind == "prismatic") {
      art.kind = JointKind::Prismatic;
    } else if (kind == "screw_joint") {
      art.kind = JointKind::ScrewJoint;
    } else {
      throw Error(ErrorCode::InvalidWorkspace, "unknown articulation kind '" + kind + "'");
    }
    art.min = a.at("min").get<double>();
    art.max = a.at("max").get<double>();
    art.axis = vec3(a.at("axis")).normalized();
    art.set(a.at("value").get<double>());
    o.articulation = art;
    if (art.kind == JointKind::ScrewJoint) o.movable = art.value == 0.0;
  }
  if (j.contains("drawer")) {
    DrawerMeta m;
    m.label = j["drawer"].at("label").get<std::string>();
    m.item_count = j["drawer"].value("item_count", 0);
    o.drawer = m;
  }
  if (o.is_static()) o.movable = false;
  if (o.cls == ObjectClass::Box || o.cls == ObjectClass::Eraser) o.detectable = false;
  if (o.cls == ObjectClass::Drawer && !o.articulation)
    throw Error(ErrorCode::InvalidWorkspace, "drawer '" + o.id + "' needs an articulation");
  return o;
}

json object_json(const ObjectInstance& o) {
  json j{{"id", o.id},
         {"class", std::string(to_string(o.cls))},
         {"pose", pose_json(o.pose)},
         {"size", vec3_json(o.size)},
         {"detectable", o.detectable},
         {"movable", o.movable}};
  if (!o.container.empty()) j["container"] = o.container;
  if (o.articulation) {
    const auto& a = *o.articulation;
    j["articulation"] = {{"kind", a.kind == JointKind::Prismatic ? "prismatic" : "screw_joint"},
                         {"value", a.value},
                         {"min", a.min},
                         {"max", a.max},
                         {"axis", vec3_json(a.axis)}};
  }
  if (o.drawer) j["drawer"] = {{"label", o.drawer->label}, {"item_count", o.drawer->item_count}};
  return j;
}

}  // namespace

Workspace parse_workspace(const json& doc) {
  try {
    Workspace ws;
    if (!doc.contains("schema_version"))
      throw Error(ErrorCode::InvalidWorkspace, "workspace file has no schema_version");
    ws.schema_version = doc["schema_version"].get<int>();
    if (ws.schema_version != kWorkspaceSchemaVersion)
      throw Error(ErrorCode::InvalidWorkspace,
                  "unsupported schema_version " + std::to_string(ws.schema_version));

    if (doc.contains("physics")) {
      const auto& p = doc["physics"];
      PhysicsConfig& c = ws.physics;
      c.tick_dt = p.value("tick_dt", c.tick_dt);
      c.v_max = p.value("v_max", c.v_max);
      c.omega_max = p.value("omega_max", c.omega_max);
      c.k_contact = p.value("k_contact", c.k_contact);
      c.f_slide = p.value("f_slide", c.f_slide);
      c.f_max = p.value("f_max", c.f_max);
      c.grasp_tolerance = p.value("grasp_tolerance", c.grasp_tolerance);
    }
    if (doc.contains("camera")) {
      const auto& c = doc["camera"];
      CameraConfig& cam = ws.camera;
      cam.focal = c.value("focal", cam.focal);
      cam.width = c.value("width", cam.width);
      cam.height = c.value("height", cam.height);
      cam.cx = c.value("cx", cam.width / 2.0);
      cam.cy = c.value("cy", cam.height / 2.0);
      if (c.contains("mount")) cam.mount = pose(c["mount"]);
    }
    ws.table = rect(doc.at("table"));
    ws.home = pose(doc.at("home"));
    for (const auto& h : doc.value("grid_holes", json::array())) ws.grid_holes.push_back(vec3(h));
    const json regions = doc.value("regions", json::object());
    for (const auto& [name, r] : regions.items()) ws.regions[name] = rect(r);
    for (const auto& p : doc.value("points_of_interest", json::array()))
      ws.pois.push_back({p.at("name").get<std::string>(), vec3(p.at("position"))});

    WorkspaceState& s = ws.initial;
    for (const auto& o : doc.at("objects")) {
      ObjectInstance obj = object(o);
      if (s.find(obj.id)) throw Error(ErrorCode::InvalidWorkspace, "duplicate object id '" + obj.id + "'");
      s.objects.push_back(std::move(obj));
    }
    double cell = doc.value("dirt_cell", 0.01);
    for (const auto& o : s.objects) {
      if (o.cls != ObjectClass::BlueArea) continue;
      Vec2 c = o.pose.position.head<2>();
      Vec2 h = o.size.head<2>() / 2.0;
      s.dirt = DirtField::covering(Rect2{c - h, c + h}, cell);
    }
    s.ee_pose = ws.home;
    s.ee_command = ws.home.position;
    return ws;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidWorkspace, std::string("malformed workspace: ") + e.what());
  }
}

Workspace load_workspace(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::InvalidWorkspace, "cannot open workspace file " + path);
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidWorkspace, path + ": " + e.what());
  }
  return parse_workspace(doc);
}

json workspace_to_json(const Workspace& ws) {
  const PhysicsConfig& p = ws.physics;
  json doc{{"schema_version", ws.schema_version},
           {"physics",
            {{"tick_dt", p.tick_dt},
             {"v_max", p.v_max},
             {"omega_max", p.omega_max},
             {"k_contact", p.k_contact},
             {"f_slide", p.f_slide},
             {"f_max", p.f_max},
             {"grasp_tolerance", p.grasp_tolerance}}},
           {"camera",
            {{"focal", ws.camera.focal},
             {"cx", ws.camera.cx},
             {"cy", ws.camera.cy},
             {"width", ws.camera.width},
             {"height", ws.camera.height},
             {"mount", pose_json(ws.camera.mount)}}},
           {"table", rect_json(ws.table)},
           {"home", pose_json(ws.home)},
           {"dirt_cell", ws.initial.dirt.cell}};
  json holes = json::array();
  for (const auto& h : ws.grid_holes) holes.push_back(vec3_json(h));
  doc["grid_holes"] = holes;
  json regions = json::object();
  for (const auto& [name, r] : ws.regions) regions[name] = rect_json(r);
  doc["regions"] = regions;
  json pois = json::array();
  for (const auto& poi : ws.pois) pois.push_back({{"name", poi.name}, {"position", vec3_json(poi.position)}});
  doc["points_of_interest"] = pois;
  json objects = json::array();
  for (const auto& o : ws.initial.objects) objects.push_back(object_json(o));
  doc["objects"] = objects;
  return doc;
}

}  // namespace teleop::world
