#pragma once

#include <optional>
#include <string>
#include <vector>

#include "teleop/executor.hpp"

namespace teleop::harness {

inline constexpr double kAutonomyThreshold = 10.0;  ///< s of continuous motion
inline constexpr double kGapTolerance = 1.0;        ///< idle gaps this short do not split a period

struct AutonomyPeriod {
  double start{0.0};
  double end{0.0};
  double duration() const { return end - start; }
  bool operator==(const AutonomyPeriod&) const = default;
};

/// Streaming form of autonomy_periods, so a log can be fed in any chunking.
class AutonomyTracker {
 public:
  explicit AutonomyTracker(double threshold = kAutonomyThreshold, double gap = kGapTolerance);

  /// Throws MalformedLog on time going backwards or unpaired moving/idle events.
  void feed(const std::vector<executor::ExecutionEvent>& chunk);
  void feed(const executor::ExecutionEvent& e);
  /// Periods so far. An open moving span is closed at `end_time`, else at the last event time.
  std::vector<AutonomyPeriod> periods(std::optional<double> end_time = std::nullopt) const;

 private:
  struct Span {
    double start{0.0};
    double end{0.0};
  };
  void close_span(Span s, std::vector<AutonomyPeriod>& out, std::optional<Span>& merged) const;

  double threshold_;
  double gap_;
  double last_time_{-1e300};
  std::optional<double> moving_since_;
  std::vector<Span> spans_;
};

std::vector<AutonomyPeriod> autonomy_periods(const std::vector<executor::ExecutionEvent>& log,
                                             double threshold = kAutonomyThreshold, double gap = kGapTolerance,
                                             std::optional<double> end_time = std::nullopt);

double total_duration(const std::vector<AutonomyPeriod>& periods);
double mean_duration(const std::vector<AutonomyPeriod>& periods);

/// Execution events from a JSON Lines session log; other records are skipped.
/// Throws MalformedLog on unparsable lines.
std::vector<executor::ExecutionEvent> read_session_log(const std::string& path);

}  // namespace teleop::harness
