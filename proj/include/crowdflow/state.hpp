#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "crowdflow/mesam.hpp"
#include "crowdflow/process_model.hpp"

namespace crowdflow {

enum class ProcessState { Running, Completed, Failed, Terminated };

enum class ActivityState {
  Inactive,
  Available,
  Active,
  Open,
  Completed,
  ForceTerminated,
  Failed,
  Skipped,
};

std::string_view to_string(ProcessState state);
std::string_view to_string(ActivityState state);
std::optional<ProcessState> parse_process_state(std::string_view text);
std::optional<ActivityState> parse_activity_state(std::string_view text);

bool is_terminal(ActivityState state);

/// The only legal activity state changes for an activity of the given kind.
bool is_legal_transition(TaskKind kind, ActivityState from, ActivityState to);

struct ActivityInstance {
  std::string activity_id;
  TaskKind kind = TaskKind::Human;
  ActivityState state = ActivityState::Inactive;
  std::optional<LogicalTime> available_at;
  std::optional<LogicalTime> started_at;
  std::optional<LogicalTime> finished_at;
  std::optional<std::string> assignee;
  std::optional<Json> result;

  friend bool operator==(const ActivityInstance&, const ActivityInstance&) = default;
};

struct ProcessInstance {
  std::string id;
  std::string definition_id;
  std::string initiator;
  ProcessState state = ProcessState::Running;
  std::map<std::string, ActivityInstance> activities;
  SessionTable sessions;
  std::map<std::string, Json> data;
  LogicalTime created_at = 0;
  std::optional<LogicalTime> finished_at;

  friend bool operator==(const ProcessInstance&, const ProcessInstance&) = default;
};

/// Immutable view handed out by query_instance.
using InstanceSnapshot = ProcessInstance;

struct ExternalUser {
  std::string user_id;
  std::string display_name;
  std::string contact;
  LogicalTime registered_at = 0;
  LogicalTime consent_expiry = 0;
  bool purged = false;

  friend bool operator==(const ExternalUser&, const ExternalUser&) = default;
};

/// Everything the event log determines. Built only by folding events.
struct SystemState {
  std::map<std::string, ProcessDefinition> definitions;  // those used by instances
  std::map<std::string, ProcessInstance> instances;
  std::map<std::string, ExternalUser> users;
  std::uint64_t last_seq = 0;
  LogicalTime last_event_at = 0;
  std::uint64_t instance_counter = 0;
  std::uint64_t execution_counter = 0;
  std::uint64_t user_counter = 0;

  friend bool operator==(const SystemState&, const SystemState&) = default;
};

/// Identifier formats: zero padded so lexicographic order equals issue order.
std::string format_id(std::string_view prefix, std::uint64_t number);

Json to_json(const ActivityInstance& activity);
Json to_json(const ProcessInstance& instance);
Json to_json(const CsActivitySession& session);
Json to_json(const ExecutionCopy& copy);
Json to_json(const ExternalUser& user);
Json to_json(const SystemState& state);

/// Inverse of to_json(SystemState). Throws Error(CorruptSnapshot).
SystemState system_state_from_json(const Json& document);

}  // namespace crowdflow
