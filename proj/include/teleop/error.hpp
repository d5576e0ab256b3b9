#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace teleop {

enum class ErrorCode {
  GraspWhileHolding,
  NoScrewEngaged,
  InvalidWorkspace,
  StaleFrame,
  NoSurface,
  UngroundableObject,
  EmptyChecklist,
  UngroundedAction,
  InvalidSelection,
  SafetyLocked,
  NotLocked,
  NoSuchPlan,
  ModeViolation,
  StaleSeq,
  MalformedMessage,
  BindFailure,
  Busy,
  MalformedLog,
  LabelNotFound,
  ServerUnreachable,
};

std::string_view to_string(ErrorCode code);
std::optional<ErrorCode> error_from_string(std::string_view name);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace teleop
