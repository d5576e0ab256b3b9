#include "teleop/executor.hpp"

#include <cmath>

#include "teleop/error.hpp"

namespace teleop::executor {

using plan::Primitive;
using plan::PrimitiveKind;
using world::ObjectClass;

namespace {

constexpr double kEps = 1e-9;

constexpr std::pair<EventKind, std::string_view> kEventNames[] = {
    {EventKind::PlanAccepted, "plan_accepted"},
    {EventKind::PrimitiveStarted, "primitive_started"},
    {EventKind::PrimitiveFinished, "primitive_finished"},
    {EventKind::PlanFinished, "plan_finished"},
    {EventKind::SafetyLock, "safety_lock"},
    {EventKind::Resumed, "resumed"},
    {EventKind::Cancelled, "cancelled"},
    {EventKind::RobotMoving, "robot_moving"},
    {EventKind::RobotIdle, "robot_idle"},
};

world::ObjectInstance* bound_drawer(world::WorkspaceState& s) {
  if (s.gripper.status != world::GripperStatus::Holding || !s.gripper.held_object) return nullptr;
  auto* o = s.find(*s.gripper.held_object);
  return o && o->cls == ObjectClass::Drawer && o->articulation ? o : nullptr;
}

Vec3 unit_or(const Vec3& v, const Vec3& fallback) {
  double n = v.norm();
  return n > kEps ? Vec3(v / n) : fallback;
}

}  // namespace

std::string_view to_string(EventKind k) {
  for (const auto& [kind, name] : kEventNames)
    if (kind == k) return name;
  return "?";
}

EventKind event_from_string(std::string_view s) {
  for (const auto& [kind, name] : kEventNames)
    if (name == s) return kind;
  throw Error(ErrorCode::MalformedLog, "unknown event kind '" + std::string(s) + "'");
}

std::string_view to_string(ExecState s) {
  switch (s) {
    case ExecState::Idle: return "idle";
    case ExecState::Executing: return "executing";
    case ExecState::SafetyLocked: return "safety_locked";
  }
  return "?";
}

nlohmann::json to_json(const ExecutionEvent& e) {
  nlohmann::json j{{"sim_time", e.sim_time}, {"kind", std::string(to_string(e.kind))}};
  if (e.plan_id) j["plan"] = *e.plan_id;
  if (e.primitive) j["primitive"] = *e.primitive;
  if (e.force) j["force"] = *e.force;
  return j;
}

ExecutionEvent event_from_json(const nlohmann::json& j) {
  try {
    ExecutionEvent e;
    e.sim_time = j.at("sim_time").get<double>();
    e.kind = event_from_string(j.at("kind").get<std::string>());
    if (j.contains("plan")) e.plan_id = j["plan"].get<std::uint64_t>();
    if (j.contains("primitive")) e.primitive = j["primitive"].get<std::size_t>();
    if (j.contains("force")) e.force = j["force"].get<double>();
    return e;
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorCode::MalformedLog, std::string("bad event: ") + ex.what());
  }
}

ExecState exec_state_from_string(std::string_view s) {
  for (auto st : {ExecState::Idle, ExecState::Executing, ExecState::SafetyLocked})
    if (to_string(st) == s) return st;
  throw Error(ErrorCode::MalformedMessage, "unknown executor state '" + std::string(s) + "'");
}

ExecutorStatus status_from_json(const nlohmann::json& j) {
  try {
    ExecutorStatus s;
    s.state = exec_state_from_string(j.at("state").get<std::string>());
    s.queue_depth = j.at("queue_depth").get<std::size_t>();
    if (!j.at("current_plan").is_null()) s.current_plan = j["current_plan"].get<std::uint64_t>();
    if (!j.at("current_primitive").is_null()) s.current_primitive = j["current_primitive"].get<std::size_t>();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::MalformedMessage, std::string("bad executor status: ") + e.what());
  }
}

nlohmann::json to_json(const ExecutorStatus& s) {
  nlohmann::json j{{"state", std::string(to_string(s.state))}, {"queue_depth", s.queue_depth}};
  j["current_plan"] = s.current_plan ? nlohmann::json(*s.current_plan) : nlohmann::json();
  j["current_primitive"] = s.current_primitive ? nlohmann::json(*s.current_primitive) : nlohmann::json();
  return j;
}

Executor::Executor(const world::Workspace& ws, world::WorkspaceState initial, ExecutorConfig cfg)
    : ws_(ws), camera_(perception::CameraModel::from(ws.camera)), cfg_(cfg), state_(std::move(initial)) {}

std::uint64_t Executor::enqueue(plan::PrimitiveProgram program) {
  if (locked_) throw Error(ErrorCode::SafetyLocked, "executor is safety locked; resume or cancel first");
  if (program.action_index.size() != program.primitives.size())
    program.action_index.assign(program.primitives.size(), 0);
  std::uint64_t id = next_id_++;
  queue_.push_back({id, std::move(program)});
  unannounced_.push_back(id);
  return id;
}

ExecutorStatus Executor::cancel(std::uint64_t plan_id) {
  const double t = state_.sim_time;
  auto announce = [&] {
    for (auto id : unannounced_) emit(EventKind::PlanAccepted, t, id);
    unannounced_.clear();
  };
  if (current_ && current_->id == plan_id) {
    announce();
    emit(EventKind::Cancelled, t, plan_id, current_->index);
    current_.reset();
    state_.ee_target.reset();
    state_.tool_rate = 0.0;
    if (locked_) {
      // Back off before anything else runs.
      locked_ = false;
      retract_target_ = Pose6D{state_.ee_pose.position - lock_approach_ * cfg_.retract, state_.ee_pose.yaw,
                               state_.ee_pose.pitch, state_.ee_pose.roll};
      state_.ee_target = retract_target_;
    }
    return status();
  }
  for (auto it = queue_.begin(); it != queue_.end(); ++it) {
    if (it->id != plan_id) continue;
    announce();
    queue_.erase(it);
    emit(EventKind::Cancelled, t, plan_id);
    return status();
  }
  throw Error(ErrorCode::NoSuchPlan, "no queued or running plan " + std::to_string(plan_id));
}

ExecutorStatus Executor::resume() {
  if (!locked_) throw Error(ErrorCode::NotLocked, "resume while not safety locked");
  locked_ = false;
  const double t = state_.sim_time;
  Pose6D back{state_.ee_pose.position - lock_approach_ * cfg_.retract, state_.ee_pose.yaw, state_.ee_pose.pitch,
              state_.ee_pose.roll};
  if (current_) {
    emit(EventKind::Resumed, t, current_->id, current_->index);
    current_->phase = Phase::Retract;
    current_->timer = 0.0;
    current_->target = back;
  } else {
    emit(EventKind::Resumed, t);
    retract_target_ = back;
  }
  state_.ee_target = back;
  state_.tool_rate = 0.0;
  return status();
}

ExecutorStatus Executor::status() const {
  ExecutorStatus s;
  s.state = locked_ ? ExecState::SafetyLocked : current_ ? ExecState::Executing : ExecState::Idle;
  if (current_) {
    s.current_plan = current_->id;
    s.current_primitive = current_->index;
  }
  s.queue_depth = queue_.size();
  return s;
}

std::optional<std::size_t> Executor::current_action() const {
  if (!current_ || current_->index >= current_->program.action_index.size()) return std::nullopt;
  return current_->program.action_index[current_->index];
}

const plan::PrimitiveProgram* Executor::current_program() const {
  return current_ ? &current_->program : nullptr;
}

void Executor::emit(EventKind kind, double t, std::optional<std::uint64_t> plan, std::optional<std::size_t> prim,
                    std::optional<double> force) {
  log_.push_back(ExecutionEvent{t, kind, plan, prim, force});
}

bool Executor::reached(const Pose6D& target) const {
  const Pose6D& ee = state_.ee_pose;
  return (ee.position - target.position).norm() < cfg_.position_tolerance &&
         std::abs(angle_diff(target.yaw, ee.yaw)) < cfg_.yaw_tolerance &&
         std::abs(angle_diff(target.pitch, ee.pitch)) < cfg_.yaw_tolerance &&
         std::abs(angle_diff(target.roll, ee.roll)) < cfg_.yaw_tolerance;
}

Pose6D Executor::view_pose(const Pose6D& point) const {
  // Level end-effector, so the mount offset applies unrotated.
  Vec3 p = point.position + Vec3{0.0, 0.0, cfg_.look_height} - camera_.mount.position;
  return Pose6D{p};
}

void Executor::start_primitive(double t) {
  Running& r = *current_;
  if (r.index >= r.program.size()) {
    finish_plan(t);
    return;
  }
  emit(EventKind::PrimitiveStarted, t, r.id, r.index);
  r.phase = Phase::Running;
  r.timer = 0.0;
  r.turns_done = 0;
  r.turns_total = 0;
  r.leg = 0;
  r.travelled = 0.0;
  r.target.reset();
  state_.tool_rate = 0.0;

  const Primitive& p = r.program.primitives[r.index];
  const Pose6D& ee = state_.ee_pose;
  switch (p.kind) {
    case PrimitiveKind::MoveAbove:
      r.target = Pose6D{p.pose.position + Vec3{0, 0, plan::kApproachHeight}, p.pose.yaw, p.pose.pitch, p.pose.roll};
      break;
    case PrimitiveKind::MoveTo: r.target = p.pose; break;
    case PrimitiveKind::LookAt: r.target = view_pose(p.pose); break;
    case PrimitiveKind::Retreat:
      r.target = Pose6D{ee.position + Vec3{0, 0, plan::kRetreatHeight}, ee.yaw, ee.pitch, ee.roll};
      break;
    case PrimitiveKind::WipeStroke: {
      double z = contact_z_.value_or(ee.position.z());
      r.target = Pose6D{Vec3{p.start.x(), p.start.y(), z}, ee.yaw, ee.pitch, ee.roll};
      break;
    }
    case PrimitiveKind::Grasp:
      try {
        state_ = world::grasp_attempt(state_, ws_);
      } catch (const Error&) {
        // Already holding: the gripper stays as it is.
      }
      break;
    case PrimitiveKind::Release: state_ = world::release(state_, ws_); break;
    case PrimitiveKind::Turn:
      try {
        world::turn_tool(state_, ws_, 0);
        r.turns_total = std::abs(p.count);
      } catch (const Error&) {
        r.turns_total = 0;  // nothing under the tool
      }
      break;
    case PrimitiveKind::MoveToContact: break;
  }

  if (p.kind == PrimitiveKind::MoveToContact) {
    r.approach = unit_or(p.axis, -Vec3::UnitZ());
  } else if (r.target) {
    r.approach = unit_or(r.target->position - ee.position, -Vec3::UnitZ());
  } else {
    r.approach = -Vec3::UnitZ();
  }
  state_.ee_target = r.target;
}

void Executor::prepare_tick() {
  if (!current_ || locked_) return;
  Running& r = *current_;
  if (r.phase != Phase::Running) return;
  const Primitive& p = r.program.primitives[r.index];
  if (p.kind == PrimitiveKind::MoveToContact) {
    double step = ws_.physics.v_max * ws_.physics.tick_dt;
    Vec3 base = bound_drawer(state_) ? state_.ee_command : state_.ee_pose.position;
    const Pose6D& ee = state_.ee_pose;
    state_.ee_target = Pose6D{base + r.approach * step, ee.yaw, ee.pitch, ee.roll};
    r.travelled += step;
  } else if (p.kind == PrimitiveKind::Turn) {
    state_.tool_rate = r.turns_done < r.turns_total ? 2.0 * kPi / cfg_.turn_duration : 0.0;
  }
}

bool Executor::primitive_done() {
  Running& r = *current_;
  const Primitive& p = r.program.primitives[r.index];
  switch (p.kind) {
    case PrimitiveKind::MoveAbove:
    case PrimitiveKind::MoveTo:
    case PrimitiveKind::LookAt:
    case PrimitiveKind::Retreat: return reached(*r.target);
    case PrimitiveKind::WipeStroke:
      if (!reached(*r.target)) return false;
      if (r.leg == 1) return true;
      r.leg = 1;
      r.target->position.head<2>() = p.end;
      state_.ee_target = r.target;
      return false;
    case PrimitiveKind::MoveToContact: {
      double along = std::abs(state_.contact_force.dot(r.approach));
      bool at_end = false;
      if (const auto* d = bound_drawer(state_)) {
        const auto& art = *d->articulation;
        double dir = r.approach.dot(art.axis);
        at_end = dir > 0 ? art.value >= art.max - kEps : dir < 0 ? art.value <= art.min + kEps : false;
      }
      bool done = along >= p.force_limit || at_end || r.travelled >= cfg_.contact_travel - kEps;
      if (done) {
        contact_z_ = state_.ee_pose.position.z();
        state_.ee_target.reset();
        if (bound_drawer(state_)) state_.ee_command = state_.ee_pose.position;
      }
      return done;
    }
    case PrimitiveKind::Grasp:
    case PrimitiveKind::Release: return r.timer >= cfg_.gripper_duration - kEps;
    case PrimitiveKind::Turn: {
      const int sign = p.count < 0 ? -1 : 1;
      while (r.turns_done < r.turns_total && r.timer >= (r.turns_done + 1) * cfg_.turn_duration - kEps) {
        try {
          state_ = world::turn_tool(state_, ws_, sign);
        } catch (const Error&) {
          r.turns_total = r.turns_done;
        }
        ++r.turns_done;
      }
      return r.turns_done >= r.turns_total;
    }
  }
  return false;
}

void Executor::finish_plan(double t) {
  emit(EventKind::PlanFinished, t, current_->id);
  current_.reset();
  state_.ee_target.reset();
  state_.tool_rate = 0.0;
}

void Executor::after_step(double t_end) {
  const double dt = ws_.physics.tick_dt;
  if (retract_target_) {
    if (reached(*retract_target_)) {
      retract_target_.reset();
      if (!current_) state_.ee_target.reset();
    }
  }
  if (!current_ || locked_) return;
  Running& r = *current_;
  r.timer += dt;
  switch (r.phase) {
    case Phase::Dwell:
      if (r.timer >= cfg_.dwell - kEps) {
        ++r.index;
        start_primitive(t_end);
      }
      break;
    case Phase::Retract:
      if (reached(*r.target)) start_primitive(t_end);
      break;
    case Phase::Running:
      if (!primitive_done()) break;
      emit(EventKind::PrimitiveFinished, t_end, r.id, r.index);
      if (r.index + 1 >= r.program.size()) {
        finish_plan(t_end);
      } else {
        r.phase = Phase::Dwell;
        r.timer = 0.0;
        r.target.reset();
        state_.ee_target.reset();
      }
      break;
  }
}

void Executor::update_inspection() {
  Pose6D cam = perception::camera_pose_for(state_.ee_pose, camera_);
  for (auto& o : state_.objects) {
    if (o.cls != ObjectClass::Drawer || !o.articulation || !o.drawer) continue;
    const auto& art = *o.articulation;
    if (art.value < 0.5 * (art.max - art.min)) continue;
    if (!perception::project(world::drawer_interior(o), cam, camera_)) continue;
    o.drawer->inspect_dwell = std::min(cfg_.inspect_cap, o.drawer->inspect_dwell + ws_.physics.tick_dt);
  }
}

std::vector<ExecutionEvent> Executor::run_tick() {
  const double t0 = state_.sim_time;
  const double dt = ws_.physics.tick_dt;
  for (auto id : unannounced_) emit(EventKind::PlanAccepted, t0, id);
  unannounced_.clear();
  state_.tool_rate = 0.0;  // only a running turn spins the wrist this tick

  if (!locked_ && !current_ && !retract_target_ && !queue_.empty()) {
    Queued q = std::move(queue_.front());
    queue_.pop_front();
    current_.emplace();
    current_->id = q.id;
    current_->program = std::move(q.program);
    start_primitive(t0);
  }
  prepare_tick();

  const Pose6D before = state_.ee_pose;
  world::step_in_place(state_, ws_, dt);
  update_inspection();

  const Pose6D& now = state_.ee_pose;
  double lin = (now.position - before.position).norm() / dt;
  double ang = std::max({std::abs(angle_diff(now.yaw, before.yaw)), std::abs(angle_diff(now.pitch, before.pitch)),
                         std::abs(angle_diff(now.roll, before.roll))}) /
               dt;
  bool mv = lin > cfg_.motion_epsilon || ang > cfg_.motion_epsilon || state_.tool_rate > cfg_.motion_epsilon;
  if (mv != moving_) {
    emit(mv ? EventKind::RobotMoving : EventKind::RobotIdle, t0);
    moving_ = mv;
  }

  const double f = state_.contact_force.norm();
  contact_motion_ = !locked_ && current_ && current_->phase == Phase::Running &&
                    current_->program.primitives[current_->index].kind == PrimitiveKind::MoveToContact;
  if (!locked_ && f > ws_.physics.f_max && !contact_motion_) {
    locked_ = true;
    lock_approach_ = current_ ? current_->approach : Vec3(-Vec3::UnitZ());
    if (current_ && current_->phase == Phase::Dwell) lock_approach_ = -Vec3::UnitZ();
    retract_target_.reset();
    emit(EventKind::SafetyLock, state_.sim_time, current_ ? std::optional(current_->id) : std::nullopt,
         current_ ? std::optional(current_->index) : std::nullopt, f);
    state_.ee_target.reset();
    state_.tool_rate = 0.0;
  } else {
    after_step(state_.sim_time);
  }

  std::vector<ExecutionEvent> out(log_.begin() + static_cast<std::ptrdiff_t>(flushed_), log_.end());
  flushed_ = log_.size();
  return out;
}

std::vector<ExecutionEvent> Executor::close() {
  if (moving_) {
    emit(EventKind::RobotIdle, state_.sim_time);
    moving_ = false;
  }
  std::vector<ExecutionEvent> out(log_.begin() + static_cast<std::ptrdiff_t>(flushed_), log_.end());
  flushed_ = log_.size();
  return out;
}

double moving_duration(const std::vector<ExecutionEvent>& events, double end_time) {
  double total = 0.0, since = 0.0;
  bool open = false;
  for (const auto& e : events) {
    if (e.kind == EventKind::RobotMoving && !open) {
      since = e.sim_time;
      open = true;
    } else if (e.kind == EventKind::RobotIdle && open) {
      total += e.sim_time - since;
      open = false;
    }
  }
  if (open) total += end_time - since;
  return total;
}

}  // namespace teleop::executor
