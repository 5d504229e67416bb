#pragma once

#include <nlohmann/json.hpp>

#include <stdexcept>
#include <string>
#include <string_view>

namespace crowdflow {

// Machine-readable error codes. The string form (to_string) is what the
// gateway and CLI report, so renaming an enumerator is a contract change.
enum class ErrorCode {
  SyntaxError,
  ValidationError,
  UnknownDefinition,
  DuplicateDefinition,
  UnknownInstance,
  UnknownActivity,
  UnknownExecution,
  UnknownUser,
  UnknownItem,
  StartConditionUnmet,
  IllegalState,
  IllegalExecState,
  RoleDenied,
  AuthorizationDenied,
  DuplicateSession,
  SessionClosed,
  SessionNotClosed,
  CapacityReached,
  DuplicateActiveClaim,
  InvalidSelection,
  InvalidRegistration,
  InvalidArgument,
  ClockRegression,
  StorageFailure,
  CorruptLog,
  CorruptSnapshot,
  BindFailure,
  EngineUnavailable,
  Unauthenticated,
  NotFound,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message,
        nlohmann::json details = nullptr)
      : std::runtime_error(message), code_(code), details_(std::move(details)) {}

  ErrorCode code() const noexcept { return code_; }
  const nlohmann::json& details() const noexcept { return details_; }

 private:
  ErrorCode code_;
  nlohmann::json details_;
};

}  // namespace crowdflow
