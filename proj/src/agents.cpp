// Scripted operators for the three interfaces. Each one sees what the video and
// the overlay show (ground-truth projection plus the markers of the latest state
// message) and pays the latency profile for every input it makes.

#include <cmath>
#include <stdexcept>

#include "teleop/error.hpp"
#include "teleop/harness.hpp"

namespace teleop::harness {

namespace {

using plan::ActionKind;
using plan::ChecklistItem;
using plan::Handle;
using plan::HandlePair;
using plan::SelectionArea;
using protocol::Mode;
using world::ObjectClass;

// Where the operator puts each box inside the target region.
const std::map<std::string, Vec2> kBoxGoals{
    {"box_a", {-0.30, 0.62}},
    {"box_b", {-0.20, 0.62}},
    {"box_c", {-0.25, 0.70}},
};
const Vec2 kEraserDrop{0.08, 0.0};  // offset from where the eraser was picked

struct ScriptError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

class Operator {
 public:
  explicit Operator(SimSession& s) : s_(s), p_(s.profile()) {}

  Pose6D camera() const { return perception::camera_pose_for(s_.world().ee_pose, s_.camera()); }

  Vec2 pixel(const Vec3& point) const {
    auto pr = perception::project(point, camera(), s_.camera());
    if (!pr) throw ScriptError("point out of view");
    return pr->pixel;
  }

  Vec2 marker(const perception::FrameDescription& f, const std::string& id) const {
    for (const auto& m : f.markers)
      if (m.object_id == id) return m.anchor_pixel;
    for (const auto& m : f.poi_markers)
      if (m.name == id) return m.anchor_pixel;
    throw ScriptError("no marker for " + id);
  }

  static Rect2 click(const Vec2& px) { return Rect2{px, px}; }

  /// Top-center of a resting object, where a handle goes.
  static Vec3 top(const world::ObjectInstance& o) { return o.pose.position + Vec3{0, 0, o.size.z() / 2.0}; }

  protocol::Reply act(double input_cost, protocol::CommandBody body) {
    const std::string type(protocol::body_type(body));
    s_.think(p_.decision + input_cost);
    auto r = s_.run(std::move(body));
    if (!r.ok()) throw ScriptError(type + " rejected: " + r.message);
    return r;
  }

  bool at_home() const {
    const Pose6D& a = s_.world().ee_pose;
    const Pose6D& h = s_.workspace().home;
    return (a.position - h.position).norm() < 1e-6 && std::abs(angle_diff(a.yaw, h.yaw)) < 1e-6;
  }

  void reset() { act(p_.click, protocol::ResetCmd{}); }

  /// Nudges the camera over a drawer label until it can be read.
  void nudge_to_label(const std::string& drawer) {
    const Vec3 label = world::drawer_label_point(s_.world().at(drawer));
    const Vec3 goal = label + Vec3{0, 0, 0.20} - s_.camera().mount.position;
    for (int n = 0; n < 80; ++n) {
      if (perception::label_readable(label, camera(), s_.camera())) return;
      Vec3 err = goal - s_.world().ee_pose.position;
      int axis = 0;
      for (int k = 1; k < 3; ++k)
        if (std::abs(err[k]) > std::abs(err[axis])) axis = k;
      if (std::abs(err[axis]) < protocol::kNudgeStep / 2.0) break;
      protocol::CameraNudge nudge{static_cast<protocol::NudgeAxis>(axis), err[axis] > 0 ? 1 : -1};
      // Button presses in a row: no pause to decide.
      s_.think(p_.click);
      auto r = s_.run(nudge);
      if (!r.ok()) throw ScriptError("nudge rejected: " + r.message);
    }
    if (!perception::label_readable(label, camera(), s_.camera())) throw ScriptError("cannot read " + drawer);
  }

  /// Looks into the open drawer until the contents are counted.
  void inspect(const std::string& drawer) {
    s_.think(p_.decision);
    for (int n = 0; n < 50 && s_.world().at(drawer).drawer->inspect_dwell < kInspectRequired - 1e-9; ++n)
      s_.think(0.1);
    s_.note_item_count(s_.world().at(drawer).drawer->item_count);
  }

  std::optional<std::string> target_drawer_by_reading() {
    for (const auto& id : drawer_ids(s_.world())) {
      nudge_to_label(id);
      s_.think(p_.click);  // reading
      if (s_.world().at(id).drawer->label == s_.config().target_label) return id;
    }
    return std::nullopt;
  }

  SimSession& s_;
  const HumanLatencyProfile& p_;
};

SelectionArea area(Rect2 rect, std::string cls, std::vector<ChecklistItem> items,
                   std::optional<HandlePair> handles = std::nullopt) {
  SelectionArea a;
  a.rect = rect;
  a.chosen_class = std::move(cls);
  a.checklist = std::move(items);
  a.handles = std::move(handles);
  return a;
}

// Input cost of one selection area: drawing it, ticking its items, placing its handles.
double area_cost(const HumanLatencyProfile& p, const SelectionArea& a) {
  double c = a.rect.width() > 0.0 ? p.rect_drag : p.click;
  c += p.click * static_cast<double>(a.checklist.size());
  if (a.handles) c += p.handle * ((a.handles->start ? 1 : 0) + (a.handles->goal ? 1 : 0));
  return c;
}

Vec3 table_point(const Vec2& xy) { return Vec3{xy.x(), xy.y(), 0.0}; }

// TLA: one game plan per task.

class TlaOperator : Operator {
 public:
  using Operator::Operator;

  void run(int task) {
    if (!at_home()) reset();
    switch (task) {
      case 0: submit({box_move("box_a")}); break;
      case 1: submit({box_move("box_b"), box_move("box_c")}); break;
      case 2: screws(); break;
      case 3: drawer(); break;
      case 4: wipe(); break;
      default: throw std::invalid_argument("no task " + std::to_string(task));
    }
  }

 private:
  void submit(std::vector<SelectionArea> areas) {
    const auto& st = s_.fresh_state();
    double cost = 0.0;
    for (const auto& a : areas) cost += area_cost(p_, a);
    act(cost, protocol::SubmitPlan{std::move(areas), st.frame.frame_id});
  }

  SelectionArea box_move(const std::string& id) {
    const auto& o = s_.world().at(id);
    Vec2 px = pixel(top(o));
    HandlePair h{Handle{px, o.pose.yaw}, Handle{pixel(table_point(kBoxGoals.at(id))), o.pose.yaw}};
    return area(click(px), std::string(plan::kUnknownObject), {{ActionKind::MoveUnknown, 1}}, h);
  }

  void screws() {
    const auto& f = s_.fresh_state().frame;
    Vec2 lo = Vec2::Constant(1e9), hi = -lo;
    for (const auto& m : f.markers)
      if (m.cls == ObjectClass::Screw) {
        lo = lo.cwiseMin(m.anchor_pixel);
        hi = hi.cwiseMax(m.anchor_pixel);
      }
    if (lo.x() > hi.x()) throw ScriptError("no screws in view");
    const Vec2 margin = Vec2::Constant(25.0);
    submit({area(Rect2{lo - margin, hi + margin}, "screw", {{ActionKind::Loosen, 1}, {ActionKind::MoveKnown, 2}})});
  }

  void drawer() {
    auto id = target_drawer_by_reading();
    if (!id) return;
    submit({area(click(marker(s_.fresh_state().frame, *id)), *id, {{ActionKind::Pull, 1}})});
    inspect(*id);
    submit({area(click(marker(s_.fresh_state().frame, *id)), *id, {{ActionKind::Push, 1}})});
  }

  void wipe() {
    const auto& e = s_.world().at("eraser");
    const auto& f = s_.fresh_state().frame;
    Vec2 grip = pixel(top(e));
    Vec2 drop = pixel(table_point(e.pose.position.head<2>() + kEraserDrop));
    submit({area(click(grip), std::string(plan::kUnknownObject), {{ActionKind::Pick, 1}},
                 HandlePair{Handle{grip, e.pose.yaw}, std::nullopt}),
            area(click(marker(f, "blue_area")), "blue_area", {{ActionKind::Wipe, 1}}),
            area(click(drop), std::string(plan::kUnknownObject), {{ActionKind::Place, 1}},
                 HandlePair{std::nullopt, Handle{drop, e.pose.yaw}})});
  }
};

// PC: one action per command, back to the overview after each.

class PcOperator : Operator {
 public:
  using Operator::Operator;

  void run(int task) {
    if (!at_home()) reset();
    switch (task) {
      case 0: box("box_a"); break;
      case 1:
        box("box_b");
        box("box_c");
        break;
      case 2: screws(); break;
      case 3: drawer(); break;
      case 4: wipe(); break;
      default: throw std::invalid_argument("no task " + std::to_string(task));
    }
  }

 private:
  void single(SelectionArea a) {
    const auto& st = s_.fresh_state();
    double cost = area_cost(p_, a);
    act(cost, protocol::SingleAction{std::move(a), st.frame.frame_id});
  }

  void box(const std::string& id) {
    const auto& o = s_.world().at(id);
    Vec2 px = pixel(top(o));
    single(area(click(px), std::string(plan::kUnknownObject), {{ActionKind::Pick, 1}},
                HandlePair{Handle{px, o.pose.yaw}, std::nullopt}));
    reset();
    Vec2 goal = pixel(table_point(kBoxGoals.at(id)));
    single(area(click(goal), std::string(plan::kUnknownObject), {{ActionKind::Place, 1}},
                HandlePair{std::nullopt, Handle{goal, o.pose.yaw}}));
    reset();
  }

  void screws() {
    std::vector<std::string> ids;
    for (const auto& m : s_.fresh_state().frame.markers)
      if (m.cls == ObjectClass::Screw) ids.push_back(m.object_id);
    std::sort(ids.begin(), ids.end());
    for (const auto& id : ids) {
      single(area(click(marker(s_.fresh_state().frame, id)), "screw", {{ActionKind::Loosen, 1}}));
      reset();
      single(area(click(marker(s_.fresh_state().frame, id)), "screw", {{ActionKind::MoveKnown, 1}}));
      reset();
    }
  }

  void drawer() {
    auto id = target_drawer_by_reading();
    if (!id) return;
    single(area(click(marker(s_.fresh_state().frame, *id)), *id, {{ActionKind::Pull, 1}}));
    inspect(*id);
    single(area(click(marker(s_.fresh_state().frame, *id)), *id, {{ActionKind::Push, 1}}));
    reset();
  }

  void wipe() {
    const auto& e = s_.world().at("eraser");
    Vec2 drop_xy = e.pose.position.head<2>() + kEraserDrop;
    const double yaw = e.pose.yaw;
    Vec2 grip = pixel(top(e));
    single(area(click(grip), std::string(plan::kUnknownObject), {{ActionKind::Pick, 1}},
                HandlePair{Handle{grip, yaw}, std::nullopt}));
    reset();
    single(area(click(marker(s_.fresh_state().frame, "blue_area")), "blue_area", {{ActionKind::Wipe, 1}}));
    reset();
    Vec2 drop = pixel(table_point(drop_xy));
    single(area(click(drop), std::string(plan::kUnknownObject), {{ActionKind::Place, 1}},
                HandlePair{std::nullopt, Handle{drop, yaw}}));
    reset();
  }
};

// CC: typed Cartesian targets, gripper buttons, no screw turning.

class CcOperator : Operator {
 public:
  explicit CcOperator(SimSession& s) : Operator(s), shown_(s.workspace().home) {}

  void run(int task) {
    switch (task) {
      case 0: box("box_a"); break;
      case 1:
        box("box_b");
        box("box_c");
        break;
      case 2: break;  // loosening needs a turn command this interface lacks
      case 3: drawer(); break;
      case 4: wipe(); break;
      default: throw std::invalid_argument("no task " + std::to_string(task));
    }
  }

 private:
  static constexpr double kHover = 0.10;
  static constexpr double kMisjudge = 0.01;  // first read of a position off the video

  /// Types only the fields that differ from the pose currently in the form.
  void go(const Pose6D& target) {
    int fields = 0;
    for (int k = 0; k < 3; ++k)
      if (std::abs(target.position[k] - shown_.position[k]) > 1e-12) ++fields;
    if (std::abs(angle_diff(target.yaw, shown_.yaw)) > 1e-12) ++fields;
    if (fields == 0) return;
    act(p_.numeric_field * fields, protocol::CartesianGoto{target});
    shown_ = target;
  }
  void go(double x, double y, double z, double yaw) { go(Pose6D{Vec3{x, y, z}, yaw}); }
  void go_z(double z) { go(shown_.position.x(), shown_.position.y(), z, shown_.yaw); }

  void grasp() { act(p_.click, protocol::GraspCmd{}); }
  void release() { act(p_.click, protocol::ReleaseCmd{}); }

  /// Approach from above with a misjudged first estimate, then correct it.
  void approach(const Vec3& grip, double yaw) {
    go(grip.x() + kMisjudge, grip.y() + kMisjudge, grip.z() + kHover, yaw);
    go(grip.x(), grip.y(), grip.z() + kHover, yaw);
    go_z(grip.z());
  }

  void pick_place(const std::string& id, const Vec2& goal) {
    const auto o = s_.world().at(id);
    const Vec3 grip = top(o);
    approach(grip, o.pose.yaw);
    grasp();
    go_z(grip.z() + kHover);
    go(goal.x(), goal.y(), grip.z() + kHover, o.pose.yaw);
    go_z(o.size.z() + plan::kReleaseMargin);
    release();
    go_z(grip.z() + kHover);
  }

  void box(const std::string& id) { pick_place(id, kBoxGoals.at(id)); }

  void drawer() {
    std::optional<std::string> found;
    for (const auto& id : drawer_ids(s_.world())) {
      const Vec3 label = world::drawer_label_point(s_.world().at(id));
      const Vec3 view = label + Vec3{0, 0, 0.20} - s_.camera().mount.position;
      go(view.x(), view.y(), view.z(), 0.0);
      if (!perception::label_readable(label, camera(), s_.camera())) throw ScriptError("cannot read " + id);
      s_.think(p_.click);
      if (s_.world().at(id).drawer->label == s_.config().target_label) {
        found = id;
        break;
      }
    }
    if (!found) return;
    const auto d = s_.world().at(*found);
    const Vec3 closed = world::drawer_handle(d);
    const Vec3 open = closed + d.articulation->axis * (d.articulation->max - d.articulation->value);
    go(closed.x(), closed.y(), closed.z() + kHover, 0.0);
    go_z(closed.z());
    grasp();
    go(open.x(), open.y(), open.z(), 0.0);
    release();
    go_z(open.z() + kHover);
    inspect(*found);
    go_z(open.z());
    grasp();
    go(closed.x(), closed.y(), closed.z(), 0.0);
    release();
    go_z(closed.z() + kHover);
  }

  void wipe() {
    const auto e = s_.world().at("eraser");
    const auto& blue = s_.world().at("blue_area");
    const Vec3 grip = top(e);
    approach(grip, e.pose.yaw);
    grasp();
    go_z(grip.z() + kHover);
    // Strokes along x at eraser-on-table height, stepping across y.
    const Vec2 c = blue.pose.position.head<2>();
    const Vec2 h = blue.size.head<2>() / 2.0;
    const int n = plan::wipe_stroke_count(2.0 * h.y(), plan::kWipeSpacing);
    const double z = grip.z() - (e.pose.position.z() - e.size.z() / 2.0);
    auto band = [&](int k) { return c.y() - h.y() + 2.0 * h.y() * (k + 0.5) / n; };
    go(c.x() - h.x(), band(0), grip.z() + kHover, e.pose.yaw);
    go_z(z);
    for (int k = 0; k < n; ++k) {
      go((k % 2 == 0 ? c.x() + h.x() : c.x() - h.x()), band(k), z, e.pose.yaw);
      if (k + 1 < n) go(shown_.position.x(), band(k + 1), z, e.pose.yaw);
    }
    go_z(grip.z() + kHover);
    const Vec2 drop = e.pose.position.head<2>() + kEraserDrop;
    go(drop.x(), drop.y(), grip.z() + kHover, e.pose.yaw);
    go_z(e.size.z() + plan::kReleaseMargin);
    release();
    go_z(grip.z() + kHover);
  }

  Pose6D shown_;  ///< pose in the target form
};

}  // namespace

SessionReport run_agent(Mode mode, const world::Workspace& ws, const StudyConfig& cfg) {
  SimSession s(ws, mode, cfg);
  bool exhausted = false;
  try {
    switch (mode) {
      case Mode::Tla: {
        TlaOperator op(s);
        for (int t : cfg.tasks) op.run(t);
        break;
      }
      case Mode::Pc: {
        PcOperator op(s);
        for (int t : cfg.tasks) op.run(t);
        break;
      }
      case Mode::Cc: {
        CcOperator op(s);
        for (int t : cfg.tasks) op.run(t);
        break;
      }
    }
  } catch (const BudgetExhausted&) {
    exhausted = true;
  }
  return s.finish(exhausted);
}

}  // namespace teleop::harness
