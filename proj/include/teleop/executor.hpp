#pragma once

#include <cstdint>
#include <deque>
#include <optional>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "teleop/perception.hpp"
#include "teleop/plan.hpp"
#include "teleop/world.hpp"

namespace teleop::executor {

enum class EventKind {
  PlanAccepted,
  PrimitiveStarted,
  PrimitiveFinished,
  PlanFinished,
  SafetyLock,
  Resumed,
  Cancelled,
  RobotMoving,
  RobotIdle,
};
std::string_view to_string(EventKind k);
EventKind event_from_string(std::string_view s);

struct ExecutionEvent {
  double sim_time{0.0};
  EventKind kind{EventKind::RobotIdle};
  std::optional<std::uint64_t> plan_id;
  std::optional<std::size_t> primitive;
  std::optional<double> force;

  bool operator==(const ExecutionEvent&) const = default;
};

nlohmann::json to_json(const ExecutionEvent& e);
ExecutionEvent event_from_json(const nlohmann::json& j);

enum class ExecState { Idle, Executing, SafetyLocked };
std::string_view to_string(ExecState s);
ExecState exec_state_from_string(std::string_view s);

struct ExecutorStatus {
  ExecState state{ExecState::Idle};
  std::optional<std::uint64_t> current_plan;
  std::optional<std::size_t> current_primitive;
  std::size_t queue_depth{0};

  bool operator==(const ExecutorStatus&) const = default;
};

nlohmann::json to_json(const ExecutorStatus& s);
ExecutorStatus status_from_json(const nlohmann::json& j);

struct ExecutorConfig {
  double turn_duration{1.5};     ///< seconds per screw turn
  double dwell{0.2};             ///< idle gap between primitives
  double gripper_duration{0.3};  ///< grasp / release actuation
  double position_tolerance{1e-9};  ///< the reference snaps onto the target, so arrival is exact
  double yaw_tolerance{1e-9};
  double retract{0.05};          ///< resume backs off this far
  double contact_travel{0.5};    ///< move_to_contact gives up after this much travel
  double look_height{0.20};      ///< camera height above a look_at point
  double inspect_cap{2.0};
  double motion_epsilon{1e-6};   ///< m/s or rad/s
};

/// Owns the world and runs primitive programs against it one fixed tick at a time.
/// Not thread-safe: a single context calls every method.
class Executor {
 public:
  Executor(const world::Workspace& ws, world::WorkspaceState initial, ExecutorConfig cfg = {});

  /// Appends to the FIFO queue. Throws SafetyLocked while locked.
  std::uint64_t enqueue(plan::PrimitiveProgram program);
  /// Drops a queued or running plan. Throws NoSuchPlan for unknown or finished ids.
  ExecutorStatus cancel(std::uint64_t plan_id);
  /// Leaves a safety lock: retracts, then restarts the locked primitive. Throws NotLocked.
  ExecutorStatus resume();

  /// Advances one tick and returns every event produced since the previous call.
  std::vector<ExecutionEvent> run_tick();
  /// Ends the session: closes an open moving interval.
  std::vector<ExecutionEvent> close();

  ExecutorStatus status() const;
  /// Action owning the running primitive, for progress display.
  std::optional<std::size_t> current_action() const;
  const plan::PrimitiveProgram* current_program() const;
  const world::WorkspaceState& state() const { return state_; }
  const world::Workspace& workspace() const { return ws_; }
  const std::vector<ExecutionEvent>& log() const { return log_; }
  double sim_time() const { return state_.sim_time; }
  bool busy() const { return current_.has_value() || !queue_.empty(); }
  /// Whether the last tick ran a move_to_contact (exempt from the force lock).
  bool contact_motion() const { return contact_motion_; }

 private:
  struct Queued {
    std::uint64_t id{0};
    plan::PrimitiveProgram program;
  };
  enum class Phase { Dwell, Running, Retract };
  struct Running {
    std::uint64_t id{0};
    plan::PrimitiveProgram program;
    std::size_t index{0};
    Phase phase{Phase::Running};
    double timer{0.0};        ///< elapsed seconds in the current phase
    int turns_done{0};
    int turns_total{0};
    int leg{0};               ///< wipe stroke leg: 0 to start, 1 to end
    double travelled{0.0};    ///< move_to_contact
    std::optional<Pose6D> target;
    Vec3 approach{Vec3::Zero()};
  };

  void emit(EventKind kind, double t, std::optional<std::uint64_t> plan = std::nullopt,
            std::optional<std::size_t> prim = std::nullopt, std::optional<double> force = std::nullopt);
  void start_primitive(double t);
  void prepare_tick();
  bool primitive_done();
  void after_step(double t_end);
  void finish_plan(double t);
  void update_inspection();
  bool reached(const Pose6D& target) const;
  Pose6D view_pose(const Pose6D& point) const;

  const world::Workspace& ws_;
  perception::CameraModel camera_;
  ExecutorConfig cfg_;
  world::WorkspaceState state_;
  std::deque<Queued> queue_;
  std::vector<std::uint64_t> unannounced_;
  std::optional<Running> current_;
  bool locked_{false};
  bool moving_{false};
  bool contact_motion_{false};
  std::optional<double> contact_z_;  ///< end-effector height at the last contact
  std::optional<Pose6D> retract_target_;  ///< back-off with no primitive to restart
  Vec3 lock_approach_{-Vec3::UnitZ()};
  std::uint64_t next_id_{1};
  std::vector<ExecutionEvent> log_;
  std::size_t flushed_{0};
};

/// Total moving time: sum of robot_moving..robot_idle spans. An open span ends at `end_time`.
double moving_duration(const std::vector<ExecutionEvent>& events, double end_time);

}  // namespace teleop::executor
