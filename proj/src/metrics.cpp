#include "teleop/metrics.hpp"

#include <fstream>

#include "teleop/error.hpp"

namespace teleop::harness {

using executor::EventKind;
using executor::ExecutionEvent;

AutonomyTracker::AutonomyTracker(double threshold, double gap) : threshold_(threshold), gap_(gap) {}

void AutonomyTracker::feed(const std::vector<ExecutionEvent>& chunk) {
  for (const auto& e : chunk) feed(e);
}

void AutonomyTracker::feed(const ExecutionEvent& e) {
  if (e.sim_time < last_time_)
    throw Error(ErrorCode::MalformedLog, "event at t=" + std::to_string(e.sim_time) + " after t=" +
                                             std::to_string(last_time_));
  last_time_ = e.sim_time;
  if (e.kind == EventKind::RobotMoving) {
    if (moving_since_) throw Error(ErrorCode::MalformedLog, "robot_moving while already moving");
    moving_since_ = e.sim_time;
  } else if (e.kind == EventKind::RobotIdle) {
    if (!moving_since_) throw Error(ErrorCode::MalformedLog, "robot_idle without robot_moving");
    spans_.push_back({*moving_since_, e.sim_time});
    moving_since_.reset();
  }
}

void AutonomyTracker::close_span(Span s, std::vector<AutonomyPeriod>& out, std::optional<Span>& merged) const {
  if (merged && s.start - merged->end <= gap_) {
    merged->end = std::max(merged->end, s.end);
    return;
  }
  if (merged && merged->end - merged->start > threshold_) out.push_back({merged->start, merged->end});
  merged = s;
}

std::vector<AutonomyPeriod> AutonomyTracker::periods(std::optional<double> end_time) const {
  std::vector<AutonomyPeriod> out;
  std::optional<Span> merged;
  for (const auto& s : spans_) close_span(s, out, merged);
  if (moving_since_) close_span({*moving_since_, std::max(end_time.value_or(last_time_), *moving_since_)}, out, merged);
  if (merged && merged->end - merged->start > threshold_) out.push_back({merged->start, merged->end});
  return out;
}

std::vector<AutonomyPeriod> autonomy_periods(const std::vector<ExecutionEvent>& log, double threshold, double gap,
                                             std::optional<double> end_time) {
  AutonomyTracker t(threshold, gap);
  t.feed(log);
  return t.periods(end_time);
}

double total_duration(const std::vector<AutonomyPeriod>& periods) {
  double s = 0.0;
  for (const auto& p : periods) s += p.duration();
  return s;
}

double mean_duration(const std::vector<AutonomyPeriod>& periods) {
  return periods.empty() ? 0.0 : total_duration(periods) / static_cast<double>(periods.size());
}

std::vector<ExecutionEvent> read_session_log(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::MalformedLog, "cannot open log " + path);
  std::vector<ExecutionEvent> events;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::MalformedLog, path + ":" + std::to_string(n) + ": " + e.what());
    }
    if (!j.is_object() || !j.contains("event")) continue;
    events.push_back(executor::event_from_json(j["event"]));
  }
  return events;
}

}  // namespace teleop::harness
