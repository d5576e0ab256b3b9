#include <random>

#include "doctest.h"
#include "fixtures.hpp"
#include "oracles.hpp"
#include "teleop/error.hpp"
#include "teleop/executor.hpp"

using namespace teleop;
using namespace teleop::executor;
using teleop::testing::bare_workspace;
using teleop::testing::default_workspace;
using teleop::testing::place_ee;

namespace {

plan::PrimitiveProgram program_of(std::vector<plan::Primitive> prims) {
  plan::PrimitiveProgram p;
  p.primitives = std::move(prims);
  p.action_index.assign(p.primitives.size(), 0);
  return p;
}

std::vector<ExecutionEvent> run_until(Executor& ex, EventKind kind, int max_ticks = 100000) {
  std::vector<ExecutionEvent> all;
  for (int i = 0; i < max_ticks; ++i) {
    auto ev = ex.run_tick();
    all.insert(all.end(), ev.begin(), ev.end());
    for (const auto& e : ev)
      if (e.kind == kind) return all;
  }
  return all;
}

const ExecutionEvent* find(const std::vector<ExecutionEvent>& evs, EventKind kind) {
  for (const auto& e : evs)
    if (e.kind == kind) return &e;
  return nullptr;
}

world::WorkspaceState at(const world::Workspace& ws, Vec3 p) {
  world::WorkspaceState s = ws.initial;
  place_ee(s, p);
  return s;
}

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no error raised");
  return ErrorCode::MalformedMessage;
}

}  // namespace

TEST_SUITE("executor") {

TEST_CASE("a 0.1 m move takes distance over v_max") {
  world::Workspace ws = bare_workspace();
  Executor ex(ws, at(ws, {0.0, 0.4, 0.2}));
  ex.enqueue(program_of({plan::move_to(Pose6D{Vec3{0.1, 0.4, 0.2}})}));
  auto evs = run_until(ex, EventKind::PlanFinished);
  const auto* done = find(evs, EventKind::PrimitiveFinished);
  REQUIRE(done);
  CHECK(std::abs(done->sim_time - 0.1 / 0.2) <= ws.physics.tick_dt + 1e-9);
  CHECK(find(evs, EventKind::PlanAccepted)->sim_time == 0.0);
}

TEST_CASE("pressing into the table locks past 30 N") {
  world::Workspace ws = bare_workspace();
  Executor ex(ws, at(ws, {0.0, 0.4, 0.05}));
  auto id = ex.enqueue(program_of({plan::move_above(Pose6D{Vec3{0.0, 0.4, 0.05}}),
                                   plan::move_to(Pose6D{Vec3{0.0, 0.4, -0.02}})}));
  auto evs = run_until(ex, EventKind::SafetyLock);
  const auto* lock = find(evs, EventKind::SafetyLock);
  REQUIRE(lock);
  CHECK(lock->primitive == 1u);
  CHECK(*lock->force > 30.0);
  // Spring oracle: force = k * penetration, so the lock needs more than 6 mm.
  const double pen = -ex.state().ee_pose.position.z();
  CHECK(pen > 30.0 / ws.physics.k_contact);
  CHECK(*lock->force == doctest::Approx(ws.physics.k_contact * pen));
  CHECK(ex.status().state == ExecState::SafetyLocked);
  CHECK(code_of([&] { ex.enqueue(program_of({})); }) == ErrorCode::SafetyLocked);

  // Frozen while locked.
  Vec3 frozen = ex.state().ee_pose.position;
  for (int i = 0; i < 20; ++i) ex.run_tick();
  CHECK(ex.state().ee_pose.position == frozen);

  SUBCASE("resume retracts 5 cm up and restarts the same primitive") {
    ex.resume();
    auto after = run_until(ex, EventKind::PrimitiveStarted);
    const auto* restarted = find(after, EventKind::PrimitiveStarted);
    REQUIRE(restarted);
    CHECK(restarted->primitive == 1u);
    CHECK(restarted->plan_id == id);
    CHECK((ex.state().ee_pose.position - (frozen + Vec3{0, 0, 0.05})).norm() < 1e-3);
    CHECK(find(ex.log(), EventKind::Resumed));
  }
  SUBCASE("cancel leaves the lock and backs off") {
    ex.cancel(id);
    CHECK(ex.status().state == ExecState::Idle);
    for (int i = 0; i < 50; ++i) ex.run_tick();
    CHECK(ex.status().state == ExecState::Idle);
    CHECK(ex.state().contact_force.norm() == 0.0);
  }
}

TEST_CASE("resume and cancel errors") {
  world::Workspace ws = bare_workspace();
  Executor ex(ws, at(ws, {0.0, 0.4, 0.2}));
  CHECK(code_of([&] { ex.resume(); }) == ErrorCode::NotLocked);
  CHECK(code_of([&] { ex.cancel(7); }) == ErrorCode::NoSuchPlan);
  auto id = ex.enqueue(program_of({}));
  run_until(ex, EventKind::PlanFinished);
  CHECK(code_of([&] { ex.cancel(id); }) == ErrorCode::NoSuchPlan);
}

TEST_CASE("empty program finishes at once without motion") {
  world::Workspace ws = bare_workspace();
  Executor ex(ws, at(ws, {0.0, 0.4, 0.2}));
  ex.enqueue(program_of({}));
  auto evs = ex.run_tick();
  REQUIRE(find(evs, EventKind::PlanFinished));
  CHECK(find(evs, EventKind::PlanFinished)->sim_time == 0.0);
  CHECK_FALSE(find(evs, EventKind::RobotMoving));
}

TEST_CASE("FIFO order and cancel mid-plan") {
  world::Workspace ws = bare_workspace();
  Executor ex(ws, at(ws, {0.0, 0.4, 0.2}));
  auto a = ex.enqueue(program_of({plan::move_to(Pose6D{Vec3{0.1, 0.4, 0.2}}), plan::move_to(Pose6D{Vec3{0.1, 0.5, 0.2}})}));
  auto b = ex.enqueue(program_of({plan::move_to(Pose6D{Vec3{0.0, 0.4, 0.2}})}));
  auto c = ex.enqueue(program_of({plan::retreat()}));

  SUBCASE("execution events of A precede those of B") {
    for (int i = 0; i < 2000; ++i) ex.run_tick();
    std::vector<std::uint64_t> order;
    for (const auto& e : ex.log())
      if (e.plan_id && e.kind != EventKind::PlanAccepted && (order.empty() || order.back() != *e.plan_id))
        order.push_back(*e.plan_id);
    CHECK(order == std::vector<std::uint64_t>{a, b, c});
  }
  SUBCASE("cancelling the running plan starts the next") {
    for (int i = 0; i < 10; ++i) ex.run_tick();
    ex.cancel(a);
    auto evs = run_until(ex, EventKind::PrimitiveStarted);
    const auto* s = find(evs, EventKind::PrimitiveStarted);
    REQUIRE(s);
    CHECK(s->plan_id == b);
    ex.cancel(c);
    CHECK(ex.status().queue_depth == 0);
  }
}

TEST_CASE("every enqueue is accepted within one tick") {
  world::Workspace ws = bare_workspace();
  Executor ex(ws, at(ws, {0.0, 0.4, 0.2}));
  ex.enqueue(program_of({plan::move_to(Pose6D{Vec3{0.2, 0.4, 0.2}})}));
  for (int i = 0; i < 5; ++i) ex.run_tick();
  for (int depth = 0; depth < 20; ++depth) {
    double t = ex.sim_time();
    auto id = ex.enqueue(program_of({plan::retreat()}));
    auto evs = ex.run_tick();
    bool accepted = false;
    for (const auto& e : evs) accepted |= e.kind == EventKind::PlanAccepted && e.plan_id == id && e.sim_time == t;
    CHECK(accepted);
  }
  CHECK(ex.status().queue_depth >= 19);
}

TEST_CASE("moving time equals the count of moving ticks") {
  const world::Workspace& ws = default_workspace();
  world::WorkspaceState s = ws.initial;
  auto& screw = *s.find("screw_1");
  place_ee(s, screw.pose.position + Vec3{0, 0, 0.2});
  Executor ex(ws, s);
  ex.enqueue(program_of({plan::move_above(screw.pose), plan::move_to(screw.pose), plan::turn(-2), plan::retreat(),
                         plan::grasp(), plan::release(), plan::look_at(Pose6D{Vec3{0.1, 0.5, 0.0}})}));
  int moving_ticks = 0;
  bool done = false;
  for (int i = 0; i < 5000 && !done; ++i) {
    Pose6D before = ex.state().ee_pose;
    for (const auto& e : ex.run_tick()) done |= e.kind == EventKind::PlanFinished;
    const Pose6D& now = ex.state().ee_pose;
    bool moved = (now.position - before.position).norm() > 0.0 || now.yaw != before.yaw ||
                 now.pitch != before.pitch || now.roll != before.roll || ex.state().tool_rate > 0.0;
    moving_ticks += moved;
  }
  REQUIRE(done);
  for (int i = 0; i < 10; ++i) ex.run_tick();
  ex.close();
  CHECK(moving_duration(ex.log(), ex.sim_time()) == doctest::Approx(moving_ticks * ws.physics.tick_dt).epsilon(1e-9));
  CHECK(ex.state().at("screw_1").articulation->value == 2.0);
  // Moving/idle alternate strictly.
  std::optional<EventKind> last;
  for (const auto& e : ex.log()) {
    if (e.kind != EventKind::RobotMoving && e.kind != EventKind::RobotIdle) continue;
    if (last) CHECK(*last != e.kind);
    last = e.kind;
  }
  CHECK(last == EventKind::RobotIdle);
}

TEST_CASE("loosen program frees a screw") {
  const world::Workspace& ws = default_workspace();
  world::WorkspaceState s = ws.initial;
  const auto& screw = s.at("screw_3");
  plan::ActionSpec a;
  a.kind = plan::ActionKind::Loosen;
  a.object_id = "screw_3";
  a.grasp = screw.pose;
  a.turns = 4;
  Executor ex(ws, s);
  ex.enqueue(plan::compile({{a}}));
  auto evs = run_until(ex, EventKind::PlanFinished);
  REQUIRE(find(evs, EventKind::PlanFinished));
  CHECK(ex.state().at("screw_3").articulation->value == 0.0);
  CHECK(ex.state().at("screw_3").movable);
  // 4 turns at 1.5 s dominate the plan.
  CHECK(ex.sim_time() > 6.0);
}

TEST_CASE("pull then push a drawer") {
  const world::Workspace& ws = default_workspace();
  const auto& d = ws.initial.at("drawer_2");
  plan::ActionSpec pull;
  pull.kind = plan::ActionKind::Pull;
  pull.object_id = "drawer_2";
  pull.grasp = Pose6D{world::drawer_handle(d)};
  pull.axis = d.articulation->axis;
  plan::ActionSpec push = pull;
  push.kind = plan::ActionKind::Push;
  Executor ex(ws, ws.initial);
  ex.enqueue(plan::compile({{pull}}));
  run_until(ex, EventKind::PlanFinished);
  const auto& opened = ex.state().at("drawer_2");
  CHECK(opened.articulation->value == doctest::Approx(opened.articulation->max));
  CHECK(opened.drawer->max_extension == doctest::Approx(0.15));
  CHECK_FALSE(find(ex.log(), EventKind::SafetyLock));
  // Parked above the open drawer: the interior is in view and dwell builds up.
  for (int i = 0; i < 300; ++i) ex.run_tick();
  CHECK(ex.state().at("drawer_2").drawer->inspect_dwell == doctest::Approx(2.0));

  push.grasp = Pose6D{world::drawer_handle(ex.state().at("drawer_2"))};
  ex.enqueue(plan::compile({{push}}));
  run_until(ex, EventKind::PlanFinished);
  CHECK(ex.state().at("drawer_2").articulation->value == doctest::Approx(0.0));
  CHECK(ex.state().gripper.status == world::GripperStatus::Open);
  CHECK_FALSE(find(ex.log(), EventKind::SafetyLock));
}

TEST_CASE("look_at centres the point in the image") {
  world::Workspace ws = bare_workspace();
  Executor ex(ws, at(ws, {0.0, 0.4, 0.3}));
  const Vec3 p{-0.2, 0.6, 0.05};
  ex.enqueue(program_of({plan::look_at(Pose6D{p})}));
  run_until(ex, EventKind::PlanFinished);
  auto model = perception::CameraModel::from(ws.camera);
  auto proj = perception::project(p, perception::camera_pose_for(ex.state().ee_pose, model), model);
  REQUIRE(proj);
  CHECK((proj->pixel - Vec2{model.cx, model.cy}).norm() < 3.0);
  CHECK(proj->depth == doctest::Approx(0.2).epsilon(0.01));
}

TEST_CASE("wipe coverage") {
  for (double w : {0.04, 0.10, 0.16}) {
    auto c = oracle::wipe_coverage(w);
    CAPTURE(w);
    CHECK(c.finished);
    CHECK(c.strokes == static_cast<std::size_t>(std::ceil(w / 0.02 - 1e-9)));
    CHECK(c.swept >= 0.95);
    CHECK(c.simulated >= 0.95);
    CHECK(c.simulated == doctest::Approx(c.swept).epsilon(0.02));
  }
}

TEST_CASE("fuzz: progress and same-tick safety locks") {
  const world::Workspace& ws = default_workspace();
  std::mt19937_64 rng(99);
  for (int n = 0; n < 100; ++n) {
    Executor ex(ws, ws.initial);
    auto id = ex.enqueue(oracle::random_program(rng));
    bool terminal = false;
    for (int t = 0; t < 200000 && !terminal; ++t) {
      auto evs = ex.run_tick();
      bool locked = find(evs, EventKind::SafetyLock) != nullptr;
      if (ex.state().contact_force.norm() > ws.physics.f_max && !ex.contact_motion()) CHECK(locked);
      for (const auto& e : evs)
        terminal |= e.plan_id == id && (e.kind == EventKind::PlanFinished || e.kind == EventKind::SafetyLock);
    }
    CHECK(terminal);
  }
}

TEST_CASE("event JSON round trip") {
  ExecutionEvent e{1.25, EventKind::SafetyLock, 3, 4, 31.5};
  CHECK(event_from_json(to_json(e)) == e);
  ExecutionEvent bare{0.5, EventKind::RobotIdle, std::nullopt, std::nullopt, std::nullopt};
  CHECK(event_from_json(to_json(bare)) == bare);
  CHECK_THROWS_AS(event_from_json(nlohmann::json{{"sim_time", 1.0}, {"kind", "teleport"}}), Error);
}

}  // TEST_SUITE
