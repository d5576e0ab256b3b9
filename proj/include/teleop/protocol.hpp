#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "teleop/error.hpp"
#include "teleop/executor.hpp"
#include "teleop/perception.hpp"
#include "teleop/plan.hpp"

namespace teleop::protocol {

inline constexpr int kSchemaVersion = 1;
inline constexpr double kNudgeStep = 0.05;           ///< m per position button
inline constexpr double kNudgeAngle = kPi / 16.0;    ///< rad per rotation button

enum class Mode { Cc, Pc, Tla };
std::string_view to_string(Mode m);
Mode mode_from_string(std::string_view s);

enum class NudgeAxis { X, Y, Z, Roll, Pitch, Yaw };
std::string_view to_string(NudgeAxis a);
NudgeAxis axis_from_string(std::string_view s);

struct CartesianGoto {
  Pose6D pose;
};
struct CameraNudge {
  NudgeAxis axis{NudgeAxis::X};
  int sign{1};
};
struct GraspCmd {};
struct ReleaseCmd {};
struct ResetCmd {};
/// One selection area with a single checklist entry, executed immediately.
struct SingleAction {
  plan::SelectionArea area;
  std::optional<std::uint64_t> frame;  ///< frame the operator clicked on
};
struct SubmitPlan {
  std::vector<plan::SelectionArea> areas;
  std::optional<std::uint64_t> frame;
};
struct CancelCmd {
  std::optional<std::uint64_t> plan;  ///< defaults to the running plan
};
struct ResumeCmd {};

using CommandBody = std::variant<CartesianGoto, CameraNudge, GraspCmd, ReleaseCmd, ResetCmd, SingleAction,
                                 SubmitPlan, CancelCmd, ResumeCmd>;

std::string_view body_type(const CommandBody& b);
bool allowed_in(Mode mode, const CommandBody& b);

struct CommandMsg {
  std::uint64_t seq{0};
  Mode mode{Mode::Tla};
  CommandBody body;
};

nlohmann::json to_json(const CommandMsg& c);
CommandMsg command_from_json(const nlohmann::json& j);

/// Target pose of one nudge button press applied to `from`.
Pose6D nudged(const Pose6D& from, const CameraNudge& n);

enum class ItemStatus { Done, Active, Pending };
std::string_view to_string(ItemStatus s);

struct PlanViewItem {
  std::string label;
  ItemStatus status{ItemStatus::Pending};
  bool operator==(const PlanViewItem&) const = default;
};

struct StateMsg {
  double sim_time{0.0};
  perception::FrameDescription frame;
  executor::ExecutorStatus executor;
  std::optional<std::uint64_t> plan;  ///< plan shown in game_plan_view
  std::vector<PlanViewItem> game_plan_view;
  std::uint64_t ack{0};  ///< last applied seq
};

struct Reply {
  std::optional<std::uint64_t> seq;  ///< empty when the message could not be parsed
  std::optional<ErrorCode> error;
  std::string message;
  std::optional<std::uint64_t> plan;
  std::size_t primitives{0};
  std::vector<std::string> actions;  ///< game plan labels for accepted plans

  bool ok() const { return !error; }
};

/// Server to client traffic.
using ServerMsg = std::variant<Reply, StateMsg, executor::ExecutionEvent>;

nlohmann::json to_json(const StateMsg& s);
nlohmann::json to_json(const Reply& r);
nlohmann::json to_json(const ServerMsg& m);
ServerMsg server_msg_from_json(const nlohmann::json& j);

struct SessionConfig {
  double noise_sigma{0.0};
  std::uint64_t seed{0};
};

/// One operator session against a shared executor: mode gate, seq check,
/// command translation and the game plan view. The owner ticks the executor
/// and feeds the produced events back through observe().
class Session {
 public:
  explicit Session(executor::Executor& ex, SessionConfig cfg = {});

  Reply handle(const CommandMsg& msg);
  /// Parses and handles one JSON command; parse failures become error replies.
  Reply handle_json(const nlohmann::json& j);
  void observe(const std::vector<executor::ExecutionEvent>& events);
  /// Describes the current scene. The frame id only advances when the description changes.
  StateMsg state();

  std::optional<Mode> mode() const { return mode_; }
  std::uint64_t ack() const { return ack_; }
  std::vector<PlanViewItem> game_plan_view() const;

 private:
  struct PlanRecord {
    std::uint64_t id{0};
    std::vector<std::string> labels;
    std::vector<std::size_t> action_index;
    bool finished{false};
    bool cancelled{false};
    std::optional<std::size_t> active;
  };

  Reply apply(const CommandBody& body);
  Reply enqueue(plan::PrimitiveProgram program, bool authored);
  Reply author_and_enqueue(const std::vector<plan::SelectionArea>& areas, std::optional<std::uint64_t> frame);
  const perception::FrameDescription& refresh_frame();
  Pose6D pose_base() const;

  executor::Executor& ex_;
  SessionConfig cfg_;
  perception::CameraModel camera_;
  std::optional<Mode> mode_;
  std::uint64_t ack_{0};
  bool any_seq_{false};
  perception::FrameDescription frame_;
  std::string frame_key_;
  std::uint64_t next_frame_id_{1};
  std::map<std::uint64_t, PlanRecord> plans_;
  std::optional<std::uint64_t> shown_;  ///< latest authored plan
  std::optional<std::pair<std::uint64_t, Pose6D>> pending_pose_;  ///< last pose command and its plan
};

struct LinkConfig {
  double one_way_delay_ms{0.0};
  double jitter_ms{0.0};
  double state_rate{10.0};  ///< Hz

  /// Throws std::invalid_argument unless delay >= 0, 0 <= jitter <= delay, rate > 0.
  void validate() const;
  double delay_s() const { return one_way_delay_ms / 1000.0; }
  double jitter_s() const { return jitter_ms / 1000.0; }
};

/// One direction of a link: each message arrives after delay + U(-jitter, +jitter),
/// never before an earlier message.
template <class T>
class DelayLine {
 public:
  DelayLine(double delay_s, double jitter_s, std::uint64_t seed) : delay_(delay_s), jitter_(jitter_s), rng_(seed) {}

  double send(double now, T msg) {
    double t = now + delay_;
    if (jitter_ > 0.0) t += std::uniform_real_distribution<double>(-jitter_, jitter_)(rng_);
    t = std::max(t, last_);
    last_ = t;
    queue_.emplace_back(t, std::move(msg));
    return t;
  }

  std::optional<double> next_arrival() const {
    if (queue_.empty()) return std::nullopt;
    return queue_.front().first;
  }

  std::vector<T> receive(double now) {
    std::vector<T> out;
    while (!queue_.empty() && queue_.front().first <= now) {
      out.push_back(std::move(queue_.front().second));
      queue_.pop_front();
    }
    return out;
  }

  bool empty() const { return queue_.empty(); }
  void clear() { queue_.clear(); }

 private:
  double delay_;
  double jitter_;
  double last_{-1e300};
  std::mt19937_64 rng_;
  std::deque<std::pair<double, T>> queue_;
};

// Wire framing: 4-byte big-endian length, then UTF-8 JSON.
inline constexpr std::size_t kMaxFrame = 16u << 20;

std::string encode_frame(std::string_view payload);

class FrameDecoder {
 public:
  void feed(std::string_view bytes);
  /// Next complete payload. Throws MalformedMessage on an oversized length.
  std::optional<std::string> next();
  std::size_t buffered() const { return buf_.size(); }

 private:
  std::string buf_;
};

/// One JSON Lines record of the session log.
nlohmann::json log_record(double wall_time, double sim_time, const executor::ExecutionEvent& e);
nlohmann::json log_record(double wall_time, double sim_time, const CommandMsg& c, const Reply& r);

}  // namespace teleop::protocol
