#pragma once

// Independent reference computations shared by unit and acceptance tests.
// Expected values are computed here without the code under test.

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "fixtures.hpp"
#include "teleop/executor.hpp"
#include "teleop/perception.hpp"
#include "teleop/plan.hpp"

namespace teleop::oracle {

/// Hand pinhole for the default rig: end-effector at `ee` with zero rotation, camera
/// mounted 0.05 behind and 0.10 above it, looking straight down (image x = world x,
/// image y = -world y).
inline Vec2 pixel_from_above(const Vec3& ee, const Vec3& p, double focal = 600.0, double cx = 640.0,
                             double cy = 360.0) {
  Vec3 cam = ee + Vec3{0.0, -0.05, 0.10};
  double xc = p.x() - cam.x();
  double yc = -(p.y() - cam.y());
  double zc = cam.z() - p.z();
  return {cx + focal * xc / zc, cy + focal * yc / zc};
}

struct GeneralizationCase {
  std::size_t members{0};
  std::size_t checklist{0};
  std::vector<std::string> expected;  ///< action labels
  std::vector<std::string> actual;
  std::size_t expected_primitives{0};
  std::size_t actual_primitives{0};

  bool pass() const { return expected == actual && expected_primitives == actual_primitives; }
};

inline std::size_t primitives_per_action(plan::ActionKind k) {
  switch (k) {
    case plan::ActionKind::MoveKnown:
    case plan::ActionKind::MoveUnknown: return 8;
    case plan::ActionKind::Loosen:
    case plan::ActionKind::Tighten:
    case plan::ActionKind::Pick:
    case plan::ActionKind::Place: return 4;
    case plan::ActionKind::Pull:
    case plan::ActionKind::Push: return 6;
    case plan::ActionKind::Wipe: return 0;
  }
  return 0;
}

/// One randomized selection over N in 1..6 screws with a checklist of length 1..3,
/// compiled end to end and compared against the cross-product enumeration.
inline GeneralizationCase generalization_case(std::mt19937_64& rng) {
  using plan::ActionKind;
  const world::Workspace& base = testing::default_workspace();
  world::Workspace ws = testing::bare_workspace();
  for (const auto& o : base.initial.objects)
    if (o.cls == world::ObjectClass::ScrewBox) ws.initial.objects.push_back(o);

  std::uniform_int_distribution<int> n_dist(1, 6), k_dist(1, 3), turns(0, 4);
  std::uniform_real_distribution<double> ux(-0.25, 0.25), uy(0.30, 0.58);
  const std::size_t n = static_cast<std::size_t>(n_dist(rng));
  std::vector<Vec3> spots;
  while (spots.size() < n) {
    Vec3 p{ux(rng), uy(rng), 0.01};
    bool clear = std::all_of(spots.begin(), spots.end(),
                             [&](const Vec3& q) { return (q - p).head<2>().norm() > 0.03; });
    if (clear) spots.push_back(p);
  }
  for (std::size_t i = 0; i < n; ++i)
    ws.initial.objects.push_back(testing::make_screw("s" + std::to_string(i), spots[i], turns(rng)));

  std::vector<ActionKind> kinds{ActionKind::Loosen, ActionKind::Tighten, ActionKind::MoveKnown};
  std::shuffle(kinds.begin(), kinds.end(), rng);
  const std::size_t k = static_cast<std::size_t>(k_dist(rng));
  kinds.resize(k);
  std::vector<int> orders(k);
  for (std::size_t i = 0; i < k; ++i) orders[i] = static_cast<int>(i) + 1;
  std::shuffle(orders.begin(), orders.end(), rng);

  plan::SelectionArea area;
  for (std::size_t i = 0; i < k; ++i) area.checklist.push_back({kinds[i], orders[i]});

  // Oracle: hand-projected anchors, raster sorted, crossed with the ordered checklist.
  struct Px {
    Vec2 px;
    std::string id;
  };
  std::vector<Px> px;
  Vec2 lo = Vec2::Constant(1e9), hi = Vec2::Constant(-1e9);
  for (std::size_t i = 0; i < n; ++i) {
    Vec2 p = pixel_from_above(ws.home.position, spots[i]);
    px.push_back({p, "s" + std::to_string(i)});
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  area.rect = Rect2{lo - Vec2::Constant(5.0), hi + Vec2::Constant(5.0)};
  std::sort(px.begin(), px.end(), [](const Px& a, const Px& b) {
    if (a.px.y() != b.px.y()) return a.px.y() < b.px.y();
    return a.px.x() < b.px.x();
  });
  std::vector<std::pair<int, ActionKind>> ordered;
  for (std::size_t i = 0; i < k; ++i) ordered.push_back({orders[i], kinds[i]});
  std::sort(ordered.begin(), ordered.end());

  GeneralizationCase out;
  out.members = n;
  out.checklist = k;
  for (const auto& m : px)
    for (const auto& [order, kind] : ordered) {
      out.expected.push_back(std::string(plan::to_string(kind)) + " " + m.id);
      out.expected_primitives += primitives_per_action(kind);
    }

  auto model = perception::CameraModel::from(ws.camera);
  auto frame = perception::describe_frame(ws.initial, ws, model, 1);
  auto program = plan::compile(plan::author({area}, frame, 1, ws.initial, ws, model));
  out.actual = program.action_labels;
  out.actual_primitives = program.size();
  return out;
}


/// Random primitive program for fuzzing: poses above, on and below the table, every
/// primitive kind, up to `max_len` primitives.
inline plan::PrimitiveProgram random_program(std::mt19937_64& rng, std::size_t max_len = 50) {
  std::uniform_int_distribution<std::size_t> len(1, max_len);
  std::uniform_int_distribution<int> kind(0, 8), turns(-3, 3), axis(0, 3);
  std::uniform_real_distribution<double> ux(-0.5, 0.4), uy(0.2, 0.7), uz(-0.03, 0.3), uyaw(-kPi, kPi),
      uforce(3.0, 25.0);
  const Vec3 axes[] = {-Vec3::UnitZ(), Vec3::UnitZ(), Vec3::UnitX(), -Vec3::UnitX()};
  plan::PrimitiveProgram p;
  const std::size_t n = len(rng);
  for (std::size_t i = 0; i < n; ++i) {
    Pose6D pose{Vec3{ux(rng), uy(rng), uz(rng)}, uyaw(rng)};
    plan::Primitive x;
    switch (kind(rng)) {
      case 0: x = plan::move_above(pose); break;
      case 1: x = plan::move_to(pose); break;
      case 2: x = plan::move_to_contact(axes[axis(rng)], uforce(rng)); break;
      case 3: x = plan::grasp(); break;
      case 4: x = plan::release(); break;
      case 5: x = plan::turn(turns(rng)); break;
      case 6: x = plan::retreat(); break;
      case 7: x = plan::look_at(pose); break;
      default: x = plan::wipe_stroke(pose.position.head<2>(), Vec2{ux(rng), uy(rng)}); break;
    }
    p.primitives.push_back(x);
    p.action_index.push_back(i);
  }
  return p;
}

struct WipeCoverage {
  double simulated{0.0};  ///< cleared fraction after running the compiled program
  double swept{0.0};      ///< fraction of cell centres under the swept eraser footprint
  std::size_t strokes{0};
  bool finished{false};
};

/// Pick an eraser, wipe a `length` x `width` dirt rectangle at default spacing, put
/// the eraser back; compare the simulated result with a geometric sweep of the strokes.
inline WipeCoverage wipe_coverage(double width, double length = 0.24) {
  using plan::ActionKind;
  world::Workspace ws = testing::bare_workspace();
  const Vec2 eraser_half{0.025, 0.015};
  const Rect2 area{{-length / 2, 0.40}, {length / 2, 0.40 + width}};
  ws.initial.dirt = world::DirtField::covering(area, 0.01);
  ws.initial.objects.push_back(
      testing::make_object("eraser", world::ObjectClass::Eraser, {0.0, 0.65, 0.01}, {0.05, 0.03, 0.02}));

  plan::GamePlan gp;
  plan::ActionSpec pick;
  pick.kind = ActionKind::Pick;
  pick.grasp = Pose6D{Vec3{0.0, 0.65, 0.02}};
  plan::ActionSpec wipe;
  wipe.kind = ActionKind::Wipe;
  wipe.object_id = "blue_area";
  wipe.area = area;
  plan::ActionSpec place;
  place.kind = ActionKind::Place;
  place.release = Pose6D{Vec3{0.0, 0.65, 0.025}};
  gp.actions = {pick, wipe, place};
  auto program = plan::compile(gp);

  WipeCoverage out;
  executor::Executor ex(ws, ws.initial);
  auto id = ex.enqueue(program);
  for (int t = 0; t < 200000 && !out.finished; ++t)
    for (const auto& e : ex.run_tick())
      if (e.kind == executor::EventKind::PlanFinished && e.plan_id == id) out.finished = true;
  out.simulated = ex.state().dirt.cleared_fraction();

  std::vector<Rect2> swept;
  std::vector<const plan::Primitive*> strokes;
  for (const auto& p : program.primitives)
    if (p.kind == plan::PrimitiveKind::WipeStroke) strokes.push_back(&p);
  auto segment = [&](const Vec2& a, const Vec2& b) {
    swept.push_back(Rect2{a.cwiseMin(b) - eraser_half, a.cwiseMax(b) + eraser_half});
  };
  for (std::size_t i = 0; i < strokes.size(); ++i) {
    segment(strokes[i]->start, strokes[i]->end);
    if (i + 1 < strokes.size()) segment(strokes[i]->end, strokes[i + 1]->start);
  }
  out.strokes = strokes.size();
  const auto& d = ws.initial.dirt;
  std::size_t covered = 0;
  for (int r = 0; r < d.rows; ++r)
    for (int c = 0; c < d.cols; ++c) {
      Vec2 centre{d.rect.min.x() + (c + 0.5) * d.cell, d.rect.min.y() + (r + 0.5) * d.cell};
      if (std::any_of(swept.begin(), swept.end(), [&](const Rect2& s) { return s.contains(centre); })) ++covered;
    }
  out.swept = static_cast<double>(covered) / static_cast<double>(d.rows * d.cols);
  return out;
}

}  // namespace teleop::oracle
