#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "teleop/geometry.hpp"
#include "teleop/perception.hpp"
#include "teleop/world.hpp"

namespace teleop::plan {

enum class ActionKind { MoveKnown, MoveUnknown, Pick, Place, Pull, Push, Tighten, Loosen, Wipe };
std::string_view to_string(ActionKind k);
ActionKind action_from_string(std::string_view s);

inline constexpr std::string_view kUnknownObject = "unknown_object";

inline constexpr double kApproachHeight = 0.10;
inline constexpr double kRetreatHeight = 0.10;
inline constexpr double kReleaseMargin = 0.005;
inline constexpr double kWipeSpacing = 0.02;
inline constexpr double kWipeContactForce = 5.0;

struct Handle {
  Vec2 anchor_pixel{Vec2::Zero()};
  double yaw{0.0};
};

/// Start handle grounds a grasp, goal handle a release. Pick needs only the start,
/// place only the goal, move_unknown both.
struct HandlePair {
  std::optional<Handle> start;
  std::optional<Handle> goal;
};

struct ChecklistItem {
  ActionKind kind{ActionKind::MoveKnown};
  int order{1};
};

struct ActionParams {
  std::optional<int> turns;
  std::optional<double> spacing;
  bool operator==(const ActionParams&) const = default;
};

struct SelectionArea {
  Rect2 rect;  ///< pixels; a zero-area rect is a click
  std::string chosen_class;  ///< empty selects the default candidate
  std::vector<ChecklistItem> checklist;
  std::optional<HandlePair> handles;
  ActionParams params;
};

struct ActionSpec {
  ActionKind kind{ActionKind::MoveKnown};
  std::string object_id;  ///< empty for unknown objects
  std::optional<Pose6D> grasp;    ///< grasp or interaction pose
  std::optional<Pose6D> release;
  std::optional<Rect2> area;      ///< wipe rectangle, world xy
  double area_z{0.0};
  Vec3 axis{Vec3::UnitX()};       ///< drawer opening direction
  int turns{0};
  double spacing{kWipeSpacing};
  ActionParams params;

  bool grounded() const;
};

/// Short human-readable label, e.g. "loosen screw_1".
std::string label(const ActionSpec& a);

struct GamePlan {
  std::vector<ActionSpec> actions;
  std::vector<SelectionArea> provenance;
};

enum class PrimitiveKind { MoveAbove, MoveTo, MoveToContact, Grasp, Release, Turn, Retreat, LookAt, WipeStroke };
std::string_view to_string(PrimitiveKind k);
PrimitiveKind primitive_from_string(std::string_view s);

struct Primitive {
  PrimitiveKind kind{PrimitiveKind::MoveTo};
  Pose6D pose;        ///< move_above / move_to / look_at reference
  Vec3 axis{Vec3::Zero()};  ///< move_to_contact direction
  double force_limit{0.0};
  int count{0};       ///< turn: signed turns, negative loosens
  Vec2 start{Vec2::Zero()};  ///< wipe_stroke endpoints; height comes from contact
  Vec2 end{Vec2::Zero()};

  bool operator==(const Primitive&) const = default;
};

Primitive move_above(const Pose6D& p);
Primitive move_to(const Pose6D& p);
Primitive move_to_contact(const Vec3& axis, double force_limit);
Primitive grasp();
Primitive release();
Primitive turn(int count);
Primitive retreat();
Primitive look_at(const Pose6D& p);
Primitive wipe_stroke(const Vec2& start, const Vec2& end);

struct PrimitiveProgram {
  std::vector<Primitive> primitives;
  std::vector<std::size_t> action_index;  ///< owning action of each primitive
  std::vector<std::string> action_labels;

  std::size_t size() const { return primitives.size(); }
  bool empty() const { return primitives.empty(); }
};

// Selection resolution.

enum class CandidateKind { Detectable, Static, Unknown };

struct Candidate {
  std::string name;  ///< class name, static target id, or unknown_object
  CandidateKind kind{CandidateKind::Unknown};
  std::vector<std::string> members;  ///< raster order
};

struct Resolution {
  std::vector<Candidate> candidates;
  std::string default_class;
  std::vector<std::string> members;

  const Candidate* find(std::string_view name) const;
};

Resolution resolve_selection(const Rect2& rect, const perception::FrameDescription& frame,
                             std::uint64_t latest_frame_id);

/// Actions permitted on a candidate: screws, drawers, blue_area and unknown objects.
std::vector<ActionKind> allowed_actions(const Candidate& c);

/// Per-object-first expansion of a checklist over the members, sorted by order index.
/// Unknown-object areas have one anonymous member.
std::vector<ActionSpec> generalize(const SelectionArea& area, const std::vector<std::string>& members);

/// Grounds drafts against one snapshot. Holds the screw_box slot allocation so
/// several moves in a plan land in distinct cells.
class Grounder {
 public:
  Grounder(const world::WorkspaceState& state, const world::Workspace& ws,
           const perception::FrameDescription& frame, const perception::CameraModel& model);

  ActionSpec ground(const ActionSpec& draft, const std::optional<HandlePair>& handles,
                    const Rect2& pixel_rect);

 private:
  Vec3 surface_point(const Vec2& pixel) const;
  Pose6D next_tray_slot(double object_half_height);

  const world::WorkspaceState& state_;
  const world::Workspace& ws_;
  const perception::FrameDescription& frame_;
  const perception::CameraModel& model_;
  std::vector<Vec3> slots_;
  std::size_t next_slot_{0};
  std::optional<double> last_clearance_;  ///< grasp height above support of the latest pick
};

/// Resolve, generalize and ground every area in creation order.
GamePlan author(const std::vector<SelectionArea>& areas, const perception::FrameDescription& frame,
                std::uint64_t latest_frame_id, const world::WorkspaceState& state,
                const world::Workspace& ws, const perception::CameraModel& model);

PrimitiveProgram compile(const GamePlan& plan);

/// Number of serpentine strokes for a wipe band of the given width.
int wipe_stroke_count(double width, double spacing);

// Canonical JSON.
nlohmann::json to_json(const SelectionArea& a);
SelectionArea selection_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ActionSpec& a);
ActionSpec action_from_json(const nlohmann::json& j);
nlohmann::json to_json(const GamePlan& p);
nlohmann::json to_json(const Primitive& p);
Primitive primitive_from_json(const nlohmann::json& j);
nlohmann::json to_json(const PrimitiveProgram& p);
PrimitiveProgram program_from_json(const nlohmann::json& j);

}  // namespace teleop::plan
