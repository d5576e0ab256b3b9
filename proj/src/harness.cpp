#include "teleop/harness.hpp"

#include <algorithm>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include "teleop/error.hpp"

namespace teleop::harness {

using executor::EventKind;
using executor::ExecutionEvent;
using nlohmann::json;
using world::ObjectClass;
using world::WorkspaceState;

// Tasks

bool in_region(const WorkspaceState& s, const world::Workspace& ws, const std::string& id, const std::string& region) {
  const auto* o = s.find(id);
  auto r = ws.regions.find(region);
  if (!o || r == ws.regions.end()) return false;
  if (s.gripper.held_object && *s.gripper.held_object == id) return false;
  return r->second.contains(o->pose.position.head<2>());
}

std::vector<TaskDefinition> standard_tasks(const std::string& target_label) {
  std::vector<TaskDefinition> t;
  t.push_back({0, "single pick and place", [](const WorkspaceState& s, const world::Workspace& ws) {
                 return in_region(s, ws, "box_a", "top_left");
               }});
  t.push_back({1, "multiple pick and place", [](const WorkspaceState& s, const world::Workspace& ws) {
                 return in_region(s, ws, "box_b", "top_left") && in_region(s, ws, "box_c", "top_left");
               }});
  t.push_back({2, "screws", [](const WorkspaceState& s, const world::Workspace&) {
                 int n = 0;
                 for (const auto& o : s.objects) {
                   if (o.cls != ObjectClass::Screw) continue;
                   if (!o.articulation || o.articulation->value > o.articulation->min + 1e-9) return false;
                   if (o.container != "screw_box") return false;
                   if (s.gripper.held_object && *s.gripper.held_object == o.id) return false;
                   ++n;
                 }
                 return n > 0;
               }});
  t.push_back({3, "drawer exploration", [target_label](const WorkspaceState& s, const world::Workspace&) {
                 for (const auto& o : s.objects) {
                   if (o.cls != ObjectClass::Drawer || !o.drawer || o.drawer->label != target_label) continue;
                   return o.drawer->inspect_dwell >= kInspectRequired - 1e-9 &&
                          o.articulation->value <= o.articulation->min + 1e-9;
                 }
                 return false;
               }});
  t.push_back({4, "wiping", [](const WorkspaceState& s, const world::Workspace&) {
                 return !s.dirt.cells.empty() && s.dirt.cleared_fraction() >= kWipeGoal;
               }});
  return t;
}

int task_score(const std::vector<WorkspaceState>& trace, const world::Workspace& ws,
               const std::vector<TaskDefinition>& tasks) {
  int n = 0;
  for (const auto& task : tasks)
    if (std::any_of(trace.begin(), trace.end(), [&](const WorkspaceState& s) { return task.goal(s, ws); })) ++n;
  return n;
}

// Operator model

HumanLatencyProfile HumanLatencyProfile::scaled(double k) const {
  return {click * k, rect_drag * k, handle * k, numeric_field * k, decision * k};
}

void HumanLatencyProfile::validate() const {
  for (double v : {click, rect_drag, handle, numeric_field, decision})
    if (!(v >= 0.0)) throw std::invalid_argument("latency profile costs must be >= 0");
}

json to_json(const HumanLatencyProfile& p) {
  return {{"click", p.click},
          {"rect_drag", p.rect_drag},
          {"handle", p.handle},
          {"numeric_field", p.numeric_field},
          {"decision", p.decision}};
}

HumanLatencyProfile profile_from_json(const json& j) {
  HumanLatencyProfile p;
  if (!j.is_object()) throw std::invalid_argument("latency profile must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!it.value().is_number()) throw std::invalid_argument("latency profile '" + it.key() + "' is not a number");
    double v = it.value().get<double>();
    if (it.key() == "click") p.click = v;
    else if (it.key() == "rect_drag") p.rect_drag = v;
    else if (it.key() == "handle") p.handle = v;
    else if (it.key() == "numeric_field") p.numeric_field = v;
    else if (it.key() == "decision") p.decision = v;
    else throw std::invalid_argument("unknown latency profile key '" + it.key() + "'");
  }
  p.validate();
  return p;
}

// Study session

SimSession::SimSession(const world::Workspace& ws, protocol::Mode mode, const StudyConfig& cfg)
    : ws_(ws),
      mode_(mode),
      cfg_(cfg),
      camera_(perception::CameraModel::from(ws.camera)),
      ex_(ws, ws.initial),
      session_(ex_, protocol::SessionConfig{cfg.noise_sigma, cfg.seed}),
      up_(cfg.link.delay_s(), cfg.link.jitter_s(), cfg.seed * 2 + 1),
      down_(cfg.link.delay_s(), cfg.link.jitter_s(), cfg.seed * 2 + 2),
      tasks_(standard_tasks(cfg.target_label)) {
  cfg_.link.validate();
  cfg_.profile.validate();
  if (!cfg_.log_path.empty()) {
    log_.open(cfg_.log_path);
    if (!log_) throw std::runtime_error("cannot write log " + cfg_.log_path);
    log_ << json{{"wall_time", 0.0}, {"sim_time", 0.0}, {"session", "connected"}, {"mode", to_string(mode)}}.dump()
         << "\n";
  }
  record_tasks();
}

void SimSession::record_tasks() {
  for (const auto& t : tasks_)
    if (!completed_.count(t.id) && t.goal(ex_.state(), ws_)) completed_.insert(t.id);
}

void SimSession::tick() {
  if (now() >= cfg_.budget - 1e-9) throw BudgetExhausted{};
  const double t = now();
  for (auto& cmd : up_.receive(t)) {
    protocol::Reply r = session_.handle(cmd);
    if (log_.is_open()) log_ << protocol::log_record(t, t, cmd, r).dump() << "\n";
    down_.send(t, {t, r});
  }
  auto events = ex_.run_tick();
  const double t_end = now();
  session_.observe(events);
  for (const auto& e : events) {
    events_.push_back(e);
    if (log_.is_open()) log_ << protocol::log_record(t_end, t_end, e).dump() << "\n";
    down_.send(t_end, {t_end, e});
  }
  if (t_end >= next_state_ - 1e-9) {
    down_.send(t_end, {t_end, session_.state()});
    next_state_ = t_end + 1.0 / cfg_.link.state_rate;
  }
  if (++ticks_ % 10 == 0) record_tasks();
  client_receive(t_end);
}

void SimSession::client_receive(double t) {
  for (auto& [generated, m] : down_.receive(t)) {
    if (!std::holds_alternative<protocol::StateMsg>(m)) seen_until_ = std::max(seen_until_, generated);
    std::visit(
        [&](auto& msg) {
          using T = std::decay_t<decltype(msg)>;
          if constexpr (std::is_same_v<T, protocol::Reply>) {
            if (msg.seq) replies_[*msg.seq] = msg;
          } else if constexpr (std::is_same_v<T, protocol::StateMsg>) {
            state_ = std::move(msg);
          } else {
            if (!msg.plan_id) return;
            if (msg.kind == EventKind::PlanFinished || msg.kind == EventKind::Cancelled) ended_.insert(*msg.plan_id);
            if (msg.kind == EventKind::SafetyLock) locked_.insert(*msg.plan_id);
            if (msg.kind == EventKind::Resumed) locked_.erase(*msg.plan_id);
          }
        },
        m);
  }
}

void SimSession::think(double seconds) {
  const double until = now() + seconds;
  while (now() < until - 1e-9) tick();
}

protocol::Reply SimSession::call(protocol::CommandBody body) {
  protocol::CommandMsg msg{++seq_, mode_, std::move(body)};
  sent_.push_back(msg);
  ++commands_;
  up_.send(now(), msg);
  while (!replies_.count(msg.seq)) tick();
  protocol::Reply r = replies_[msg.seq];
  record_tasks();
  return r;
}

void SimSession::await_plan(std::uint64_t plan) {
  while (!ended_.count(plan)) {
    if (locked_.count(plan)) {
      // The operator notices the lock and presses resume.
      think(cfg_.profile.decision + cfg_.profile.click);
      locked_.erase(plan);
      call(protocol::ResumeCmd{});
      continue;
    }
    tick();
  }
  record_tasks();
}

protocol::Reply SimSession::run(protocol::CommandBody body) {
  protocol::Reply r = call(std::move(body));
  if (r.ok() && r.plan) await_plan(*r.plan);
  return r;
}

const protocol::StateMsg& SimSession::fresh_state() {
  while (!state_ || state_->sim_time <= seen_until_) tick();
  return *state_;
}

SessionReport SimSession::finish(bool budget_exhausted) {
  record_tasks();
  const double end = std::min(now(), cfg_.budget);
  for (const auto& e : ex_.close()) {
    events_.push_back(e);
    if (log_.is_open()) log_ << protocol::log_record(now(), now(), e).dump() << "\n";
  }
  if (log_.is_open()) {
    log_ << json{{"wall_time", now()}, {"sim_time", now()}, {"session", "disconnected"}}.dump() << "\n";
    log_.close();
  }
  SessionReport r;
  r.mode = mode_;
  r.completed.assign(completed_.begin(), completed_.end());
  r.score = static_cast<int>(completed_.size());
  r.periods = autonomy_periods(events_, kAutonomyThreshold, kGapTolerance, end);
  r.total_autonomy = total_duration(r.periods);
  r.wall_time = end;
  r.command_count = commands_;
  r.budget_exhausted = budget_exhausted;
  r.item_count = item_count_;
  r.world_hash = world::physical_hash(ex_.state());
  r.final_state = ex_.state();
  return r;
}

world::Workspace with_label_on(const world::Workspace& ws, const std::string& label, const std::string& drawer_id) {
  world::Workspace out = ws;
  world::ObjectInstance* target = out.initial.find(drawer_id);
  if (!target || !target->drawer) throw std::invalid_argument("no drawer '" + drawer_id + "'");
  for (auto& o : out.initial.objects) {
    if (!o.drawer || o.drawer->label != label) continue;
    std::swap(o.drawer->label, target->drawer->label);
    std::swap(o.drawer->item_count, target->drawer->item_count);
    return out;
  }
  target->drawer->label = label;
  return out;
}

// Reference solution

std::vector<std::string> drawer_ids(const WorkspaceState& s) {
  std::vector<std::string> ids;
  for (const auto& o : s.objects)
    if (o.cls == ObjectClass::Drawer) ids.push_back(o.id);
  std::sort(ids.begin(), ids.end());
  return ids;
}

namespace {

void run_program(executor::Executor& ex, plan::PrimitiveProgram prog) {
  ex.enqueue(std::move(prog));
  for (int guard = 0; ex.busy(); ++guard) {
    if (guard > 100000) throw std::runtime_error("oracle program did not finish");
    ex.run_tick();
    if (ex.status().state == executor::ExecState::SafetyLocked) throw std::runtime_error("oracle program locked");
  }
}

plan::PrimitiveProgram look_program(const Vec3& point) {
  plan::PrimitiveProgram p;
  p.primitives.push_back(plan::look_at(Pose6D{point}));
  p.action_index.push_back(0);
  p.action_labels.push_back("look_at");
  return p;
}

plan::PrimitiveProgram slide_program(const world::ObjectInstance& d, plan::ActionKind kind) {
  plan::ActionSpec a;
  a.kind = kind;
  a.object_id = d.id;
  a.grasp = Pose6D{world::drawer_handle(d)};
  a.axis = d.articulation->axis;
  return plan::compile(plan::GamePlan{{a}, {}});
}

}  // namespace

OracleResult algorithm1_oracle(const world::Workspace& ws, const std::string& target_label) {
  executor::Executor ex(ws, ws.initial);
  const auto camera = perception::CameraModel::from(ws.camera);
  OracleResult out;
  for (const auto& id : drawer_ids(ex.state())) {
    run_program(ex, look_program(world::drawer_label_point(ex.state().at(id))));
    const auto& d = ex.state().at(id);
    auto cam = perception::camera_pose_for(ex.state().ee_pose, camera);
    if (!perception::label_readable(world::drawer_label_point(d), cam, camera))
      throw std::runtime_error("oracle cannot read the label of " + id);
    out.read.push_back(id);
    if (d.drawer->label != target_label) continue;

    run_program(ex, slide_program(d, plan::ActionKind::Pull));
    run_program(ex, look_program(world::drawer_interior(ex.state().at(id))));
    for (int guard = 0; ex.state().at(id).drawer->inspect_dwell < kInspectRequired - 1e-9; ++guard) {
      if (guard > 100000) throw std::runtime_error("oracle cannot see inside " + id);
      ex.run_tick();
    }
    out.item_count = ex.state().at(id).drawer->item_count;
    run_program(ex, slide_program(ex.state().at(id), plan::ActionKind::Push));
    out.drawer = id;
    out.final_state = ex.state();
    return out;
  }
  throw Error(ErrorCode::LabelNotFound, "no drawer is labelled '" + target_label + "'");
}

// Report

std::string csv_header() { return "mode,score,total_autonomy_s,n_periods,mean_period_s,wall_time_s,command_count"; }

std::string csv_row(const SessionReport& r) {
  std::ostringstream o;
  o << std::fixed << std::setprecision(3) << protocol::to_string(r.mode) << ',' << r.score << ',' << r.total_autonomy
    << ',' << r.periods.size() << ',' << mean_duration(r.periods) << ',' << r.wall_time << ',' << r.command_count;
  return o.str();
}

}  // namespace teleop::harness
