#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

namespace crowdflow {

using Json = nlohmann::json;

/// Logical time. Every duration and deadline in the engine is expressed in
/// these abstract units; only the gateway binds them to a wall clock.
using LogicalTime = std::int64_t;

enum class TaskKind { Human, Automatic, Crowdsourced, Delegated };

std::string_view to_string(TaskKind kind);
std::optional<TaskKind> parse_task_kind(std::string_view text);

enum class RoutingMode { Sequence, Parallel };

// --- crowdsourcing task configuration --------------------------------------

struct AggregateAll {
  friend bool operator==(const AggregateAll&, const AggregateAll&) = default;
};
struct AggregateFirstN {
  std::int64_t n = 1;
  friend bool operator==(const AggregateFirstN&, const AggregateFirstN&) = default;
};
struct AggregateOwnerSelect {
  std::int64_t k = 1;
  friend bool operator==(const AggregateOwnerSelect&, const AggregateOwnerSelect&) = default;
};
using AggregationPolicy = std::variant<AggregateAll, AggregateFirstN, AggregateOwnerSelect>;

struct ZeroCompleteEmpty {
  friend bool operator==(const ZeroCompleteEmpty&, const ZeroCompleteEmpty&) = default;
};
struct ZeroFail {
  friend bool operator==(const ZeroFail&, const ZeroFail&) = default;
};
struct ZeroExtend {
  LogicalTime span = 0;
  std::int64_t max_extensions = 0;
  friend bool operator==(const ZeroExtend&, const ZeroExtend&) = default;
};
using ZeroPolicy = std::variant<ZeroCompleteEmpty, ZeroFail, ZeroExtend>;

struct CsConfig {
  LogicalTime open_duration = 1;
  std::optional<std::int64_t> max_executions;  // nullopt == UNBOUNDED
  std::int64_t min_results = 0;
  AggregationPolicy aggregation = AggregateAll{};
  ZeroPolicy on_zero_results = ZeroCompleteEmpty{};
  std::string instructions;
  double reward = 0.0;  // recorded, never transacted

  friend bool operator==(const CsConfig&, const CsConfig&) = default;
};

// --- definition ------------------------------------------------------------

struct StartRule {
  // Roles the initiator must hold (any one of them). Empty: anyone may start.
  std::vector<std::string> initiator_roles;
  friend bool operator==(const StartRule&, const StartRule&) = default;
};

struct EndRule {
  // Only "ALL_END_ACTIVITIES" is supported.
  std::string mode = "ALL_END_ACTIVITIES";
  friend bool operator==(const EndRule&, const EndRule&) = default;
};

struct ActivityDef {
  std::string id;
  TaskKind kind = TaskKind::Human;
  std::optional<std::string> role;       // Human only
  std::optional<std::string> app_ref;    // Automatic only
  std::optional<CsConfig> cs_config;     // Crowdsourced only
  std::string description;
  RoutingMode split = RoutingMode::Sequence;
  RoutingMode join = RoutingMode::Sequence;

  friend bool operator==(const ActivityDef&, const ActivityDef&) = default;
};

struct Transition {
  std::string from;
  std::string to;
  std::string guard;  // must be empty; conditional routing is not supported
  friend bool operator==(const Transition&, const Transition&) = default;
};

struct RoleDef {
  std::string id;
  std::string description;
  friend bool operator==(const RoleDef&, const RoleDef&) = default;
};

struct AppRef {
  std::string id;
  std::string uri;
  friend bool operator==(const AppRef&, const AppRef&) = default;
};

struct DataSlot {
  std::string name;
  std::string type;  // string | number | boolean | json
  friend bool operator==(const DataSlot&, const DataSlot&) = default;
};

struct ProcessDefinition {
  std::string id;
  std::string name;
  StartRule start_condition;
  EndRule end_condition;
  std::vector<ActivityDef> activities;
  std::vector<Transition> transitions;
  std::vector<RoleDef> roles;
  std::vector<AppRef> app_refs;
  std::vector<DataSlot> wf_data;

  const ActivityDef* find_activity(std::string_view activity_id) const;

  friend bool operator==(const ProcessDefinition&, const ProcessDefinition&) = default;
};

// --- validation ------------------------------------------------------------

struct Violation {
  std::string rule;     // e.g. "CYCLE", "UNKNOWN_ROLE"
  std::string subject;  // activity id, role id, ... (may be empty)
  std::string message;
  friend bool operator==(const Violation&, const Violation&) = default;
};

struct ValidationReport {
  std::vector<Violation> violations;

  bool ok() const { return violations.empty(); }
  bool has(std::string_view rule) const;
};

ValidationReport validate_definition(const ProcessDefinition& def);

// --- routing ---------------------------------------------------------------

struct ExecutionPlan {
  std::string start;
  std::map<std::string, std::set<std::string>> successors;
  std::map<std::string, std::set<std::string>> predecessors;
  std::vector<std::string> order;  // activity ids in definition order
  std::set<std::string> end_activities;

  /// True when the activity waits for all predecessors before it can run.
  bool joins(const std::string& activity_id) const {
    auto it = predecessors.find(activity_id);
    return it != predecessors.end() && it->second.size() > 1;
  }
};

/// Successor/predecessor structure of a valid definition.
ExecutionPlan topology(const ProcessDefinition& def);

// --- document format -------------------------------------------------------

/// Decodes and validates a definition document. Throws Error(SyntaxError) for
/// malformed or mistyped documents and Error(ValidationError) with the report
/// in details() when an invariant fails.
ProcessDefinition parse_definition(std::string_view source);
ProcessDefinition parse_definition(const Json& document);
inline ProcessDefinition parse_definition(const std::string& source) {
  return parse_definition(std::string_view(source));
}
inline ProcessDefinition parse_definition(const char* source) {
  return parse_definition(std::string_view(source));
}

/// Decodes without validating (used by validate tooling and tests).
ProcessDefinition decode_definition(const Json& document);

Json to_json(const ProcessDefinition& def);
Json to_json(const CsConfig& config);
CsConfig decode_cs_config(const Json& node);

/// Canonical document text: sorted keys, two-space indent, trailing newline.
std::string serialize_definition(const ProcessDefinition& def);

Json to_json(const ValidationReport& report);

}  // namespace crowdflow
