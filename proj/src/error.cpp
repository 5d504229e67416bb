#include "crowdflow/error.hpp"

namespace crowdflow {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::SyntaxError: return "SyntaxError";
    case ErrorCode::ValidationError: return "ValidationError";
    case ErrorCode::UnknownDefinition: return "UnknownDefinition";
    case ErrorCode::DuplicateDefinition: return "DuplicateDefinition";
    case ErrorCode::UnknownInstance: return "UnknownInstance";
    case ErrorCode::UnknownActivity: return "UnknownActivity";
    case ErrorCode::UnknownExecution: return "UnknownExecution";
    case ErrorCode::UnknownUser: return "UnknownUser";
    case ErrorCode::UnknownItem: return "UnknownItem";
    case ErrorCode::StartConditionUnmet: return "StartConditionUnmet";
    case ErrorCode::IllegalState: return "IllegalState";
    case ErrorCode::IllegalExecState: return "IllegalExecState";
    case ErrorCode::RoleDenied: return "RoleDenied";
    case ErrorCode::AuthorizationDenied: return "AuthorizationDenied";
    case ErrorCode::DuplicateSession: return "DuplicateSession";
    case ErrorCode::SessionClosed: return "SessionClosed";
    case ErrorCode::SessionNotClosed: return "SessionNotClosed";
    case ErrorCode::CapacityReached: return "CapacityReached";
    case ErrorCode::DuplicateActiveClaim: return "DuplicateActiveClaim";
    case ErrorCode::InvalidSelection: return "InvalidSelection";
    case ErrorCode::InvalidRegistration: return "InvalidRegistration";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::ClockRegression: return "ClockRegression";
    case ErrorCode::StorageFailure: return "StorageFailure";
    case ErrorCode::CorruptLog: return "CorruptLog";
    case ErrorCode::CorruptSnapshot: return "CorruptSnapshot";
    case ErrorCode::BindFailure: return "BindFailure";
    case ErrorCode::EngineUnavailable: return "EngineUnavailable";
    case ErrorCode::Unauthenticated: return "Unauthenticated";
    case ErrorCode::NotFound: return "NotFound";
  }
  return "Unknown";
}

}  // namespace crowdflow
