#include "teleop/error.hpp"

namespace teleop {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::GraspWhileHolding: return "GraspWhileHolding";
    case ErrorCode::NoScrewEngaged: return "NoScrewEngaged";
    case ErrorCode::InvalidWorkspace: return "InvalidWorkspace";
    case ErrorCode::StaleFrame: return "StaleFrame";
    case ErrorCode::NoSurface: return "NoSurface";
    case ErrorCode::UngroundableObject: return "UngroundableObject";
    case ErrorCode::EmptyChecklist: return "EmptyChecklist";
    case ErrorCode::UngroundedAction: return "UngroundedAction";
    case ErrorCode::InvalidSelection: return "InvalidSelection";
    case ErrorCode::SafetyLocked: return "SafetyLocked";
    case ErrorCode::NotLocked: return "NotLocked";
    case ErrorCode::NoSuchPlan: return "NoSuchPlan";
    case ErrorCode::ModeViolation: return "ModeViolation";
    case ErrorCode::StaleSeq: return "StaleSeq";
    case ErrorCode::MalformedMessage: return "MalformedMessage";
    case ErrorCode::BindFailure: return "BindFailure";
    case ErrorCode::Busy: return "Busy";
    case ErrorCode::MalformedLog: return "MalformedLog";
    case ErrorCode::LabelNotFound: return "LabelNotFound";
    case ErrorCode::ServerUnreachable: return "ServerUnreachable";
  }
  return "Unknown";
}

std::optional<ErrorCode> error_from_string(std::string_view name) {
  for (int i = 0; i <= static_cast<int>(ErrorCode::ServerUnreachable); ++i) {
    auto code = static_cast<ErrorCode>(i);
    if (to_string(code) == name) return code;
  }
  return std::nullopt;
}

}  // namespace teleop
