#pragma once

#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "teleop/executor.hpp"
#include "teleop/metrics.hpp"
#include "teleop/protocol.hpp"
#include "teleop/world.hpp"

namespace teleop::harness {

inline constexpr const char* kTargetLabel = "Bolt M5";
inline constexpr double kInspectRequired = 2.0;  ///< s of camera dwell on an open drawer
inline constexpr double kWipeGoal = 0.95;

// Tasks

struct TaskDefinition {
  int id{0};
  std::string name;
  std::function<bool(const world::WorkspaceState&, const world::Workspace&)> goal;
};

/// Tasks 0..4 on the default layout. Task 3 targets the drawer carrying `target_label`.
std::vector<TaskDefinition> standard_tasks(const std::string& target_label = kTargetLabel);

/// Number of tasks whose goal held in at least one snapshot.
int task_score(const std::vector<world::WorkspaceState>& trace, const world::Workspace& ws,
               const std::vector<TaskDefinition>& tasks);

/// Whether `id` rests inside the named region (center inside, not held).
bool in_region(const world::WorkspaceState& s, const world::Workspace& ws, const std::string& id,
               const std::string& region);

// Operator model

struct HumanLatencyProfile {
  double click{1.0};
  double rect_drag{2.0};
  double handle{4.0};         ///< place and rotate one handle triple
  double numeric_field{5.0};  ///< per edited field
  double decision{3.0};       ///< pause before each command

  HumanLatencyProfile scaled(double k) const;
  void validate() const;  ///< throws std::invalid_argument on negative costs
};

nlohmann::json to_json(const HumanLatencyProfile& p);
HumanLatencyProfile profile_from_json(const nlohmann::json& j);

// Study session

struct StudyConfig {
  HumanLatencyProfile profile;
  double budget{900.0};
  protocol::LinkConfig link;
  std::uint64_t seed{0};
  double noise_sigma{0.0};
  std::string target_label{kTargetLabel};
  std::vector<int> tasks{0, 1, 2, 3, 4};  ///< attempted in this order
  std::string log_path;  ///< optional JSON Lines session log
};

struct SessionReport {
  protocol::Mode mode{protocol::Mode::Tla};
  int score{0};
  std::vector<int> completed;
  double total_autonomy{0.0};
  std::vector<AutonomyPeriod> periods;
  double wall_time{0.0};
  std::size_t command_count{0};
  bool budget_exhausted{false};
  std::optional<int> item_count;  ///< drawer contents counted in task 3
  std::uint64_t world_hash{0};
  world::WorkspaceState final_state;
};

/// Thrown inside a session when the operator's time is up.
struct BudgetExhausted {};

/// Deterministic discrete-event run of one operator client, the delayed link,
/// the protocol session and the executor, all on the simulation clock.
class SimSession {
 public:
  SimSession(const world::Workspace& ws, protocol::Mode mode, const StudyConfig& cfg);

  double now() const { return ex_.sim_time(); }
  /// Operator time passes with no input.
  void think(double seconds);
  /// Sends a command and blocks until its reply arrives. Counts toward command_count.
  protocol::Reply call(protocol::CommandBody body);
  /// Blocks until the client has seen the plan finish (resuming after a safety lock).
  void await_plan(std::uint64_t plan);
  /// Sends, then waits for the plan if one was accepted. Returns the reply.
  protocol::Reply run(protocol::CommandBody body);
  /// Latest state generated after everything the client has already seen.
  const protocol::StateMsg& fresh_state();

  /// Ground truth the operator sees in the video.
  const world::WorkspaceState& world() const { return ex_.state(); }
  const world::Workspace& workspace() const { return ws_; }
  const perception::CameraModel& camera() const { return camera_; }
  const HumanLatencyProfile& profile() const { return cfg_.profile; }
  const StudyConfig& config() const { return cfg_; }
  protocol::Mode mode() const { return mode_; }
  std::size_t command_count() const { return commands_; }
  const std::vector<protocol::CommandMsg>& sent() const { return sent_; }
  void note_item_count(int n) { item_count_ = n; }

  SessionReport finish(bool budget_exhausted);

 private:
  void tick();
  void client_receive(double t);
  void record_tasks();

  const world::Workspace& ws_;
  protocol::Mode mode_;
  StudyConfig cfg_;
  perception::CameraModel camera_;
  executor::Executor ex_;
  protocol::Session session_;
  protocol::DelayLine<protocol::CommandMsg> up_;
  protocol::DelayLine<std::pair<double, protocol::ServerMsg>> down_;  ///< with generation time
  std::vector<TaskDefinition> tasks_;
  std::set<int> completed_;
  double next_state_{0.0};
  std::uint64_t seq_{0};
  std::size_t commands_{0};
  std::vector<protocol::CommandMsg> sent_;
  std::map<std::uint64_t, protocol::Reply> replies_;
  std::set<std::uint64_t> ended_;     ///< plans the client saw finish or get cancelled
  std::set<std::uint64_t> locked_;    ///< plans the client saw locked and not yet resumed
  double seen_until_{-1.0};  ///< generation time of the newest message the client saw
  std::optional<protocol::StateMsg> state_;
  std::optional<int> item_count_;
  std::vector<executor::ExecutionEvent> events_;
  std::ofstream log_;
  int ticks_{0};
};

/// Runs one scripted operator in the given mode until its script ends or the budget runs out.
SessionReport run_agent(protocol::Mode mode, const world::Workspace& ws, const StudyConfig& cfg);

/// Copy of the workspace with `label` moved onto drawer `drawer_id` (labels swapped).
world::Workspace with_label_on(const world::Workspace& ws, const std::string& label, const std::string& drawer_id);

// Reference solution of the exploration task with ground-truth label reading.

struct OracleResult {
  world::WorkspaceState final_state;
  int item_count{0};
  std::string drawer;
  std::vector<std::string> read;  ///< drawers whose label was read, in order
};

/// Visits drawers in id order: look at the label, read it, and on a match pull,
/// look inside until inspected, count, push and stop. Throws LabelNotFound.
OracleResult algorithm1_oracle(const world::Workspace& ws, const std::string& target_label = kTargetLabel);

/// Drawer ids in visiting order.
std::vector<std::string> drawer_ids(const world::WorkspaceState& s);

// CSV report: mode, score, total_autonomy_s, n_periods, mean_period_s, wall_time_s, command_count.
std::string csv_header();
std::string csv_row(const SessionReport& r);

}  // namespace teleop::harness
