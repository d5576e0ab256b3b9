#include "teleop/plan.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <tuple>

#include "teleop/error.hpp"

namespace teleop::plan {

using nlohmann::json;
using perception::FrameDescription;
using world::ObjectClass;

namespace {

constexpr double kClickRadius = 15.0;  // px around a zero-area selection
constexpr double kSlideForce = 15.0;
constexpr double kSlotOccupied = 0.02;
constexpr double kDefaultClearance = 0.02;

struct Named {
  ActionKind kind;
  std::string_view name;
};
constexpr Named kActionNames[] = {
    {ActionKind::MoveKnown, "move_known"}, {ActionKind::MoveUnknown, "move_unknown"}, {ActionKind::Pick, "pick"},
    {ActionKind::Place, "place"},          {ActionKind::Pull, "pull"},                {ActionKind::Push, "push"},
    {ActionKind::Tighten, "tighten"},      {ActionKind::Loosen, "loosen"},            {ActionKind::Wipe, "wipe"},
};

constexpr std::pair<PrimitiveKind, std::string_view> kPrimitiveNames[] = {
    {PrimitiveKind::MoveAbove, "move_above"},
    {PrimitiveKind::MoveTo, "move_to"},
    {PrimitiveKind::MoveToContact, "move_to_contact"},
    {PrimitiveKind::Grasp, "grasp"},
    {PrimitiveKind::Release, "release"},
    {PrimitiveKind::Turn, "turn"},
    {PrimitiveKind::Retreat, "retreat"},
    {PrimitiveKind::LookAt, "look_at"},
    {PrimitiveKind::WipeStroke, "wipe_stroke"},
};

bool is_static_target(ObjectClass c) { return c == ObjectClass::Drawer || c == ObjectClass::BlueArea; }

Rect2 selection_rect(const Rect2& r) {
  if (r.width() > 0.0 && r.height() > 0.0) return r;
  Vec2 c = (r.min + r.max) / 2.0;
  return Rect2{c - Vec2::Constant(kClickRadius), c + Vec2::Constant(kClickRadius)};
}

bool raster_less(const Vec2& a, const std::string& ida, const Vec2& b, const std::string& idb) {
  if (a.y() != b.y()) return a.y() < b.y();
  if (a.x() != b.x()) return a.x() < b.x();
  return ida < idb;
}

int kind_rank(CandidateKind k) {
  switch (k) {
    case CandidateKind::Detectable: return 0;
    case CandidateKind::Static: return 1;
    case CandidateKind::Unknown: return 2;
  }
  return 3;
}

}  // namespace

std::string_view to_string(ActionKind k) {
  for (const auto& n : kActionNames)
    if (n.kind == k) return n.name;
  return "?";
}

ActionKind action_from_string(std::string_view s) {
  for (const auto& n : kActionNames)
    if (n.name == s) return n.kind;
  throw Error(ErrorCode::MalformedMessage, "unknown action kind '" + std::string(s) + "'");
}

std::string_view to_string(PrimitiveKind k) {
  for (const auto& [kind, name] : kPrimitiveNames)
    if (kind == k) return name;
  return "?";
}

PrimitiveKind primitive_from_string(std::string_view s) {
  for (const auto& [kind, name] : kPrimitiveNames)
    if (name == s) return kind;
  throw Error(ErrorCode::MalformedMessage, "unknown primitive '" + std::string(s) + "'");
}

bool ActionSpec::grounded() const {
  switch (kind) {
    case ActionKind::MoveKnown:
    case ActionKind::MoveUnknown: return grasp && release;
    case ActionKind::Pick:
    case ActionKind::Pull:
    case ActionKind::Push:
    case ActionKind::Tighten:
    case ActionKind::Loosen: return grasp.has_value();
    case ActionKind::Place: return release.has_value();
    case ActionKind::Wipe: return area.has_value() && spacing > 0.0;
  }
  return false;
}

std::string label(const ActionSpec& a) {
  std::string out(to_string(a.kind));
  if (!a.object_id.empty()) out += " " + a.object_id;
  return out;
}

namespace {
Primitive make(PrimitiveKind k, const Pose6D& pose = Pose6D{}) {
  Primitive p;
  p.kind = k;
  p.pose = pose;
  return p;
}
}  // namespace

Primitive move_above(const Pose6D& p) { return make(PrimitiveKind::MoveAbove, p); }
Primitive move_to(const Pose6D& p) { return make(PrimitiveKind::MoveTo, p); }
Primitive move_to_contact(const Vec3& axis, double force_limit) {
  Primitive p = make(PrimitiveKind::MoveToContact);
  p.axis = axis.normalized();
  p.force_limit = force_limit;
  return p;
}
Primitive grasp() { return make(PrimitiveKind::Grasp); }
Primitive release() { return make(PrimitiveKind::Release); }
Primitive turn(int count) {
  Primitive p = make(PrimitiveKind::Turn);
  p.count = count;
  return p;
}
Primitive retreat() { return make(PrimitiveKind::Retreat); }
Primitive look_at(const Pose6D& pose) { return make(PrimitiveKind::LookAt, pose); }
Primitive wipe_stroke(const Vec2& start, const Vec2& end) {
  Primitive p = make(PrimitiveKind::WipeStroke);
  p.start = start;
  p.end = end;
  return p;
}

// ---------------------------------------------------------------------------
// Selection

const Candidate* Resolution::find(std::string_view name) const {
  for (const auto& c : candidates)
    if (c.name == name) return &c;
  return nullptr;
}

Resolution resolve_selection(const Rect2& rect, const FrameDescription& frame, std::uint64_t latest_frame_id) {
  if (frame.frame_id != latest_frame_id)
    throw Error(ErrorCode::StaleFrame, "selection made on frame " + std::to_string(frame.frame_id) +
                                           ", latest is " + std::to_string(latest_frame_id));
  const Rect2 r = selection_rect(rect);

  struct Hit {
    Vec2 px;
    std::string id;
  };
  std::map<std::string, std::vector<Hit>> by_class;
  for (const auto& m : frame.markers)
    if (r.contains(m.anchor_pixel)) by_class[std::string(world::to_string(m.cls))].push_back({m.anchor_pixel, m.object_id});

  Resolution res;
  for (auto& [cls, hits] : by_class) {
    std::sort(hits.begin(), hits.end(),
              [](const Hit& a, const Hit& b) { return raster_less(a.px, a.id, b.px, b.id); });
    Candidate c{cls, CandidateKind::Detectable, {}};
    for (const auto& h : hits) c.members.push_back(h.id);
    res.candidates.push_back(std::move(c));
  }
  std::vector<Candidate> statics;
  for (const auto& p : frame.poi_markers)
    if (is_static_target(p.cls) && r.contains(p.anchor_pixel))
      statics.push_back(Candidate{p.name, CandidateKind::Static, {p.name}});
  std::sort(statics.begin(), statics.end(), [](const Candidate& a, const Candidate& b) { return a.name < b.name; });
  statics.erase(std::unique(statics.begin(), statics.end(),
                            [](const Candidate& a, const Candidate& b) { return a.name == b.name; }),
                statics.end());
  for (auto& s : statics) res.candidates.push_back(std::move(s));
  res.candidates.push_back(Candidate{std::string(kUnknownObject), CandidateKind::Unknown, {}});

  const Candidate* best = &res.candidates.front();
  for (const auto& c : res.candidates) {
    auto key = [](const Candidate& x) {
      return std::make_tuple(-static_cast<long>(x.members.size()), kind_rank(x.kind), x.name);
    };
    if (key(c) < key(*best)) best = &c;
  }
  res.default_class = best->name;
  res.members = best->members;
  return res;
}

std::vector<ActionKind> allowed_actions(const Candidate& c) {
  switch (c.kind) {
    case CandidateKind::Unknown: return {ActionKind::MoveUnknown, ActionKind::Pick, ActionKind::Place};
    case CandidateKind::Detectable:
      if (c.name == world::to_string(ObjectClass::Screw))
        return {ActionKind::Loosen, ActionKind::Tighten, ActionKind::MoveKnown};
      return {ActionKind::MoveKnown};
    case CandidateKind::Static:
      if (c.name.rfind("blue_area", 0) == 0) return {ActionKind::Wipe};
      return {ActionKind::Pull, ActionKind::Push};
  }
  return {};
}

std::vector<ActionSpec> generalize(const SelectionArea& area, const std::vector<std::string>& members) {
  if (area.checklist.empty()) throw Error(ErrorCode::EmptyChecklist, "selection area has no actions checked");
  std::vector<ChecklistItem> items = area.checklist;
  std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) { return a.order < b.order; });
  for (std::size_t i = 0; i < items.size(); ++i)
    if (items[i].order != static_cast<int>(i) + 1)
      throw Error(ErrorCode::InvalidSelection, "checklist order indices must be a permutation of 1..k");

  std::vector<ActionSpec> out;
  out.reserve(members.size() * items.size());
  for (const auto& m : members)
    for (const auto& it : items) {
      ActionSpec a;
      a.kind = it.kind;
      a.object_id = m;
      a.params = area.params;
      out.push_back(std::move(a));
    }
  return out;
}

// ---------------------------------------------------------------------------
// Grounding

Grounder::Grounder(const world::WorkspaceState& state, const world::Workspace& ws, const FrameDescription& frame,
                   const perception::CameraModel& model)
    : state_(state), ws_(ws), frame_(frame), model_(model) {
  const world::ObjectInstance* tray = nullptr;
  for (const auto& o : state.objects)
    if (o.cls == ObjectClass::ScrewBox) {
      tray = &o;
      break;
    }
  if (!tray) return;

  Transform t = Transform::from_pose(tray->pose);
  const double top = tray->pose.position.z() + tray->size.z() / 2.0;
  struct Slot {
    Vec3 p;
    Vec2 key;
  };
  std::vector<Slot> slots;
  for (double sy : {-1.0, 1.0})
    for (double sx : {-1.0, 1.0}) {
      Vec3 p = t.apply(Vec3{sx * tray->size.x() / 4.0, sy * tray->size.y() / 4.0, 0.0});
      p.z() = top;
      bool taken = false;
      for (const auto& o : state.objects) {
        if (o.is_static() || o.cls == ObjectClass::Drawer) continue;
        if ((o.pose.position.head<2>() - p.head<2>()).norm() < kSlotOccupied) taken = true;
      }
      if (taken) continue;
      // Image raster order when visible; otherwise far-to-near, left-to-right in the world.
      auto proj = perception::project(p, frame.camera_pose, model);
      Vec2 key = proj ? Vec2{proj->pixel.y(), proj->pixel.x()} : Vec2{-p.y(), p.x()};
      slots.push_back({p, key});
    }
  std::stable_sort(slots.begin(), slots.end(), [](const Slot& a, const Slot& b) {
    if (a.key.x() != b.key.x()) return a.key.x() < b.key.x();
    return a.key.y() < b.key.y();
  });
  for (const auto& s : slots) slots_.push_back(s.p);
}

Vec3 Grounder::surface_point(const Vec2& pixel) const {
  auto p = perception::unproject(pixel, state_, ws_, frame_.camera_pose, model_);
  if (!p) throw Error(ErrorCode::NoSurface, "no surface under the handle");
  return *p;
}

Pose6D Grounder::next_tray_slot(double half_height) {
  if (slots_.empty()) throw Error(ErrorCode::UngroundableObject, "no free screw_box cell for the release");
  Vec3 p = slots_[next_slot_ % slots_.size()];
  ++next_slot_;
  p.z() += half_height + kReleaseMargin;
  return Pose6D{p};
}

ActionSpec Grounder::ground(const ActionSpec& draft, const std::optional<HandlePair>& handles,
                            const Rect2& pixel_rect) {
  ActionSpec a = draft;
  auto need_handle = [&](bool start) -> const Handle& {
    const std::optional<Handle>* h = nullptr;
    if (handles) h = start ? &handles->start : &handles->goal;
    if (!h || !h->has_value())
      throw Error(ErrorCode::UngroundedAction,
                  label(a) + " needs a " + (start ? "start" : "goal") + " handle");
    return **h;
  };
  auto clearance_at = [&](const Vec3& p) { return p.z() - world::support_below(state_, p.head<2>(), p.z()).first; };
  auto marker_pose = [&](const std::string& id) -> Pose6D {
    for (const auto& m : frame_.markers)
      if (m.object_id == id) return m.estimated_pose;
    throw Error(ErrorCode::UngroundableObject, "'" + id + "' is no longer detected");
  };
  auto poi = [&](const std::string& id) -> Vec3 {
    for (const auto& p : frame_.poi_markers)
      if (p.name == id) return p.position;
    throw Error(ErrorCode::UngroundableObject, "'" + id + "' is not a visible point of interest");
  };
  auto object = [&](const std::string& id) -> const world::ObjectInstance& {
    const auto* o = state_.find(id);
    if (!o) throw Error(ErrorCode::UngroundableObject, "unknown object '" + id + "'");
    return *o;
  };

  switch (a.kind) {
    case ActionKind::MoveKnown: {
      a.grasp = marker_pose(a.object_id);
      if (handles && handles->goal) {
        Vec3 q = surface_point(handles->goal->anchor_pixel);
        q.z() += clearance_at(a.grasp->position) + kReleaseMargin;
        a.release = Pose6D{q, handles->goal->yaw};
      } else {
        a.release = next_tray_slot(object(a.object_id).size.z() / 2.0);
        a.release->yaw = a.grasp->yaw;
      }
      last_clearance_ = clearance_at(a.grasp->position);
      break;
    }
    case ActionKind::MoveUnknown:
    case ActionKind::Pick:
    case ActionKind::Place: {
      if (a.kind != ActionKind::Place) {
        const Handle& h = need_handle(true);
        a.grasp = Pose6D{surface_point(h.anchor_pixel), h.yaw};
        last_clearance_ = clearance_at(a.grasp->position);
      }
      if (a.kind != ActionKind::Pick) {
        const Handle& h = need_handle(false);
        double clearance = last_clearance_.value_or(kDefaultClearance);
        if (a.kind == ActionKind::Place && !last_clearance_ && state_.gripper.held_object) {
          if (const auto* held = state_.find(*state_.gripper.held_object))
            clearance = state_.ee_pose.position.z() - (held->pose.position.z() - held->size.z() / 2.0);
        }
        Vec3 q = surface_point(h.anchor_pixel);
        q.z() += clearance + kReleaseMargin;
        a.release = Pose6D{q, h.yaw};
      }
      break;
    }
    case ActionKind::Loosen:
    case ActionKind::Tighten: {
      a.grasp = marker_pose(a.object_id);
      const auto& s = object(a.object_id);
      if (a.params.turns) {
        a.turns = *a.params.turns;
      } else if (s.articulation) {
        double remaining = a.kind == ActionKind::Loosen ? s.articulation->value - s.articulation->min
                                                        : s.articulation->max - s.articulation->value;
        a.turns = static_cast<int>(std::ceil(remaining - 1e-9));
      }
      break;
    }
    case ActionKind::Pull:
    case ActionKind::Push: {
      a.grasp = Pose6D{poi(a.object_id)};
      const auto& d = object(a.object_id);
      if (!d.articulation) throw Error(ErrorCode::UngroundableObject, "'" + a.object_id + "' has no joint");
      a.axis = d.articulation->axis;
      break;
    }
    case ActionKind::Wipe: {
      a.spacing = a.params.spacing.value_or(kWipeSpacing);
      if (a.spacing <= 0.0) throw Error(ErrorCode::UngroundedAction, "wipe spacing must be positive");
      if (pixel_rect.width() > 0.0 && pixel_rect.height() > 0.0) {
        Vec2 lo = Vec2::Constant(std::numeric_limits<double>::infinity());
        Vec2 hi = -lo;
        double z = -std::numeric_limits<double>::infinity();
        for (const Vec2& c : {pixel_rect.min, Vec2{pixel_rect.max.x(), pixel_rect.min.y()}, pixel_rect.max,
                              Vec2{pixel_rect.min.x(), pixel_rect.max.y()}}) {
          Vec3 p = surface_point(c);
          lo = lo.cwiseMin(p.head<2>());
          hi = hi.cwiseMax(p.head<2>());
          z = std::max(z, p.z());
        }
        a.area = Rect2{lo, hi};
        a.area_z = z;
      } else {
        // A click wipes the whole known area.
        const auto& o = object(a.object_id);
        Vec2 c = o.pose.position.head<2>();
        Vec2 h = o.size.head<2>() / 2.0;
        a.area = Rect2{c - h, c + h};
        a.area_z = o.pose.position.z();
      }
      break;
    }
  }
  return a;
}

GamePlan author(const std::vector<SelectionArea>& areas, const FrameDescription& frame, std::uint64_t latest_frame_id,
                const world::WorkspaceState& state, const world::Workspace& ws,
                const perception::CameraModel& model) {
  GamePlan plan;
  Grounder grounder(state, ws, frame, model);
  for (const auto& area : areas) {
    Resolution res = resolve_selection(area.rect, frame, latest_frame_id);
    const std::string cls = area.chosen_class.empty() ? res.default_class : area.chosen_class;
    const Candidate* cand = res.find(cls);
    if (!cand) throw Error(ErrorCode::InvalidSelection, "'" + cls + "' is not in the selection");
    auto allowed = allowed_actions(*cand);
    for (const auto& item : area.checklist)
      if (std::find(allowed.begin(), allowed.end(), item.kind) == allowed.end())
        throw Error(ErrorCode::InvalidSelection,
                    std::string(to_string(item.kind)) + " is not available on " + cls);
    std::vector<std::string> members = cand->kind == CandidateKind::Unknown ? std::vector<std::string>{""}
                                                                             : cand->members;
    for (const auto& draft : generalize(area, members))
      plan.actions.push_back(grounder.ground(draft, area.handles, area.rect));
    plan.provenance.push_back(area);
  }
  return plan;
}

// ---------------------------------------------------------------------------
// Compilation

int wipe_stroke_count(double width, double spacing) {
  return std::max(1, static_cast<int>(std::ceil(width / spacing - 1e-9)));
}

PrimitiveProgram compile(const GamePlan& plan) {
  PrimitiveProgram prog;
  for (std::size_t i = 0; i < plan.actions.size(); ++i) {
    const ActionSpec& a = plan.actions[i];
    if (!a.grounded()) throw Error(ErrorCode::UngroundedAction, label(a) + " is not grounded");
    std::vector<Primitive> seq;
    auto pick = [&] { seq.insert(seq.end(), {move_above(*a.grasp), move_to(*a.grasp), grasp(), move_above(*a.grasp)}); };
    auto place = [&] {
      seq.insert(seq.end(), {move_above(*a.release), move_to(*a.release), release(), move_above(*a.release)});
    };
    switch (a.kind) {
      case ActionKind::MoveKnown:
      case ActionKind::MoveUnknown:
        pick();
        place();
        break;
      case ActionKind::Pick: pick(); break;
      case ActionKind::Place: place(); break;
      case ActionKind::Loosen:
      case ActionKind::Tighten:
        seq = {move_above(*a.grasp), move_to(*a.grasp), turn(a.kind == ActionKind::Loosen ? -a.turns : a.turns),
               retreat()};
        break;
      case ActionKind::Pull:
      case ActionKind::Push: {
        Vec3 dir = a.kind == ActionKind::Pull ? a.axis : Vec3(-a.axis);
        seq = {move_above(*a.grasp), move_to(*a.grasp), grasp(), move_to_contact(dir, kSlideForce), release(),
               retreat()};
        break;
      }
      case ActionKind::Wipe: {
        const Rect2& r = *a.area;
        int n = wipe_stroke_count(r.height(), a.spacing);
        auto band = [&](int k) { return r.min.y() + r.height() * (k + 0.5) / n; };
        seq.push_back(move_above(Pose6D{Vec3{r.min.x(), band(0), a.area_z}}));
        seq.push_back(move_to_contact(-Vec3::UnitZ(), kWipeContactForce));
        for (int k = 0; k < n; ++k) {
          double x0 = k % 2 == 0 ? r.min.x() : r.max.x();
          double x1 = k % 2 == 0 ? r.max.x() : r.min.x();
          seq.push_back(wipe_stroke({x0, band(k)}, {x1, band(k)}));
        }
        seq.push_back(retreat());
        break;
      }
    }
    for (auto& p : seq) {
      prog.primitives.push_back(p);
      prog.action_index.push_back(i);
    }
    prog.action_labels.push_back(label(a));
  }
  return prog;
}

// ---------------------------------------------------------------------------
// JSON

namespace {

json vec2_json(const Vec2& v) { return json::array({v.x(), v.y()}); }
Vec2 vec2_from(const json& j) { return {j.at(0).get<double>(), j.at(1).get<double>()}; }
json vec3_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }
Vec3 vec3_from(const json& j) { return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()}; }
json rect_json(const Rect2& r) { return {{"min", vec2_json(r.min)}, {"max", vec2_json(r.max)}}; }
Rect2 rect_from(const json& j) { return Rect2{vec2_from(j.at("min")), vec2_from(j.at("max"))}; }

json handle_json(const Handle& h) { return {{"anchor_pixel", vec2_json(h.anchor_pixel)}, {"yaw", h.yaw}}; }
Handle handle_from(const json& j) { return Handle{vec2_from(j.at("anchor_pixel")), normalize_angle(j.at("yaw").get<double>())}; }

json params_json(const ActionParams& p) {
  json j = json::object();
  if (p.turns) j["turns"] = *p.turns;
  if (p.spacing) j["spacing"] = *p.spacing;
  return j;
}

ActionParams params_from(const json& j) {
  ActionParams p;
  if (j.contains("turns")) p.turns = j["turns"].get<int>();
  if (j.contains("spacing")) p.spacing = j["spacing"].get<double>();
  return p;
}

}  // namespace

json to_json(const SelectionArea& a) {
  json checklist = json::array();
  for (const auto& c : a.checklist) checklist.push_back({{"kind", std::string(to_string(c.kind))}, {"order", c.order}});
  json j{{"rect", rect_json(a.rect)}, {"class", a.chosen_class}, {"checklist", checklist}, {"params", params_json(a.params)}};
  if (a.handles) {
    json h = json::object();
    if (a.handles->start) h["start"] = handle_json(*a.handles->start);
    if (a.handles->goal) h["goal"] = handle_json(*a.handles->goal);
    j["handles"] = h;
  }
  return j;
}

SelectionArea selection_from_json(const json& j) {
  try {
    SelectionArea a;
    a.rect = rect_from(j.at("rect"));
    if (a.rect.width() < 0 || a.rect.height() < 0) throw Error(ErrorCode::MalformedMessage, "inverted selection rect");
    a.chosen_class = j.value("class", "");
    for (const auto& c : j.at("checklist"))
      a.checklist.push_back({action_from_string(c.at("kind").get<std::string>()), c.at("order").get<int>()});
    if (j.contains("handles")) {
      HandlePair hp;
      const auto& h = j["handles"];
      if (h.contains("start")) hp.start = handle_from(h["start"]);
      if (h.contains("goal")) hp.goal = handle_from(h["goal"]);
      a.handles = hp;
    }
    if (j.contains("params")) a.params = params_from(j["params"]);
    return a;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::MalformedMessage, std::string("bad selection area: ") + e.what());
  }
}

json to_json(const ActionSpec& a) {
  json j{{"kind", std::string(to_string(a.kind))}, {"object_id", a.object_id}, {"params", params_json(a.params)}};
  if (a.grasp) j["grasp"] = perception::pose_to_json(*a.grasp);
  if (a.release) j["release"] = perception::pose_to_json(*a.release);
  if (a.area) {
    j["area"] = rect_json(*a.area);
    j["area_z"] = a.area_z;
    j["spacing"] = a.spacing;
  }
  if (a.kind == ActionKind::Pull || a.kind == ActionKind::Push) j["axis"] = vec3_json(a.axis);
  if (a.kind == ActionKind::Loosen || a.kind == ActionKind::Tighten) j["turns"] = a.turns;
  return j;
}

ActionSpec action_from_json(const json& j) {
  try {
    ActionSpec a;
    a.kind = action_from_string(j.at("kind").get<std::string>());
    a.object_id = j.value("object_id", "");
    if (j.contains("params")) a.params = params_from(j["params"]);
    if (j.contains("grasp")) a.grasp = perception::pose_from_json(j["grasp"]);
    if (j.contains("release")) a.release = perception::pose_from_json(j["release"]);
    if (j.contains("area")) a.area = rect_from(j["area"]);
    a.area_z = j.value("area_z", 0.0);
    a.spacing = j.value("spacing", kWipeSpacing);
    if (j.contains("axis")) a.axis = vec3_from(j["axis"]);
    a.turns = j.value("turns", 0);
    return a;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::MalformedMessage, std::string("bad action: ") + e.what());
  }
}

json to_json(const GamePlan& p) {
  json actions = json::array();
  for (const auto& a : p.actions) actions.push_back(to_json(a));
  json areas = json::array();
  for (const auto& a : p.provenance) areas.push_back(to_json(a));
  return {{"actions", actions}, {"provenance", areas}};
}

json to_json(const Primitive& p) {
  json j{{"kind", std::string(to_string(p.kind))}};
  switch (p.kind) {
    case PrimitiveKind::MoveAbove:
    case PrimitiveKind::MoveTo:
    case PrimitiveKind::LookAt: j["pose"] = perception::pose_to_json(p.pose); break;
    case PrimitiveKind::MoveToContact:
      j["axis"] = vec3_json(p.axis);
      j["force_limit"] = p.force_limit;
      break;
    case PrimitiveKind::Turn: j["count"] = p.count; break;
    case PrimitiveKind::WipeStroke:
      j["start"] = vec2_json(p.start);
      j["end"] = vec2_json(p.end);
      break;
    case PrimitiveKind::Grasp:
    case PrimitiveKind::Release:
    case PrimitiveKind::Retreat: break;
  }
  return j;
}

Primitive primitive_from_json(const json& j) {
  try {
    Primitive p = make(primitive_from_string(j.at("kind").get<std::string>()));
    if (j.contains("pose")) p.pose = perception::pose_from_json(j["pose"]);
    if (j.contains("axis")) p.axis = vec3_from(j["axis"]);
    p.force_limit = j.value("force_limit", 0.0);
    p.count = j.value("count", 0);
    if (j.contains("start")) p.start = vec2_from(j["start"]);
    if (j.contains("end")) p.end = vec2_from(j["end"]);
    return p;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::MalformedMessage, std::string("bad primitive: ") + e.what());
  }
}

json to_json(const PrimitiveProgram& p) {
  json prims = json::array();
  for (const auto& x : p.primitives) prims.push_back(to_json(x));
  return {{"primitives", prims}, {"action_index", p.action_index}, {"action_labels", p.action_labels}};
}

PrimitiveProgram program_from_json(const json& j) {
  try {
    PrimitiveProgram p;
    for (const auto& x : j.at("primitives")) p.primitives.push_back(primitive_from_json(x));
    p.action_index = j.value("action_index", std::vector<std::size_t>(p.primitives.size(), 0));
    p.action_labels = j.value("action_labels", std::vector<std::string>{});
    if (p.action_index.size() != p.primitives.size())
      throw Error(ErrorCode::MalformedMessage, "action_index length mismatch");
    return p;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::MalformedMessage, std::string("bad program: ") + e.what());
  }
}

}  // namespace teleop::plan
