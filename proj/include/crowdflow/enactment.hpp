#pragma once

// Workflow enactment service.
//
// The engine is event sourced: every command validates against the current
// SystemState, emits one or more Events, and each Event is folded into the
// state by apply_event -- the same function replay uses. No other code path
// mutates the state, so a log replayed from scratch reproduces the live state
// exactly.

#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "crowdflow/eventstore.hpp"
#include "crowdflow/mesam.hpp"
#include "crowdflow/process_model.hpp"
#include "crowdflow/state.hpp"

namespace crowdflow {

inline constexpr std::string_view kSystemActor = "SYSTEM";

/// Who issues a command: a defined internal user or the engine itself.
struct Actor {
  std::string id;

  static Actor system() { return Actor{std::string(kSystemActor)}; }
  static Actor user(std::string id) { return Actor{std::move(id)}; }
  bool is_system() const { return id == kSystemActor; }
};

/// Defined (internal) users and the roles they hold. Configuration, not
/// event-sourced state.
class Directory {
 public:
  void add(const std::string& user_id, std::set<std::string> roles);
  bool contains(const std::string& user_id) const { return users_.count(user_id) != 0; }
  const std::set<std::string>* roles_of(const std::string& user_id) const;
  bool holds(const std::string& user_id, const std::string& role) const;
  const std::map<std::string, std::set<std::string>>& users() const { return users_; }

 private:
  std::map<std::string, std::set<std::string>> users_;
};

struct RoutingOutcome {
  std::string activity_id;
  ActivityState state = ActivityState::Completed;
  std::vector<std::string> enabled;         // successors that became AVAILABLE
  std::vector<std::string> auto_completed;  // AUTOMATIC activities run as a consequence
  ProcessState instance_state = ProcessState::Running;
};

struct DeadlineFiring {
  std::string instance_id;
  std::string activity_id;
  LogicalTime at = 0;
  SessionOutcomeKind outcome = SessionOutcomeKind::Complete;
  std::vector<std::string> force_terminated;
};

struct TransitionRecord {
  std::uint64_t seq = 0;
  std::string instance_id;
  std::string activity_id;
  TaskKind kind = TaskKind::Human;
  ActivityState from = ActivityState::Inactive;
  ActivityState to = ActivityState::Inactive;
};

using TransitionObserver = std::function<void(const TransitionRecord&)>;

/// Folds one event into the state. Throws Error(CorruptLog) when the event is
/// out of sequence or describes a change the state machines do not allow; the
/// state is left untouched in that case.
void apply_event(SystemState& state, const Event& event,
                 const TransitionObserver* observer = nullptr);

/// Successors enabled and resulting process state if `completed_id` completed now.
struct RoutingEffect {
  std::vector<std::string> enabled;
  ProcessState instance_state = ProcessState::Running;
};
RoutingEffect routing_after_completion(const ProcessDefinition& def, const ProcessInstance& instance,
                                       const std::string& completed_id);

struct EngineOptions {
  /// How long external users' identification data is kept after registration.
  LogicalTime retention_span = 365 * 24 * 60;
};

class Engine {
 public:
  explicit Engine(EngineOptions options = {}, Directory directory = {});

  /// Rebuilds an engine from a log (state = replay of the log).
  static Engine from_events(const std::vector<Event>& events, EngineOptions options = {},
                            Directory directory = {});

  // --- definitions --------------------------------------------------------
  /// Registers a validated definition. Re-registering an identical definition
  /// is a no-op; a different definition under the same id is DuplicateDefinition.
  void register_definition(const ProcessDefinition& def);
  const ProcessDefinition& definition(const std::string& id) const;
  bool has_definition(const std::string& id) const { return registry_.count(id) != 0; }
  const std::map<std::string, ProcessDefinition>& definitions() const { return registry_; }

  // --- process instances --------------------------------------------------
  InstanceSnapshot start_instance(const std::string& definition_id, const Actor& initiator,
                                  LogicalTime now);
  ActivityInstance begin_activity(const std::string& instance_id, const std::string& activity_id,
                                  const Actor& actor, LogicalTime now);
  RoutingOutcome complete_activity(const std::string& instance_id, const std::string& activity_id,
                                   std::optional<Json> result, LogicalTime now,
                                   const Actor& actor = Actor::system());
  /// ACTIVE -> FAILED for a HUMAN activity; the instance fails with it.
  InstanceSnapshot fail_activity(const std::string& instance_id, const std::string& activity_id,
                                 const std::string& reason, LogicalTime now,
                                 const Actor& actor = Actor::system());
  InstanceSnapshot terminate_instance(const std::string& instance_id, const std::string& reason,
                                      LogicalTime now);
  InstanceSnapshot query_instance(const std::string& instance_id) const;

  // --- crowdsourcing sessions ---------------------------------------------
  ExecutionCopy claim(const std::string& instance_id, const std::string& activity_id,
                      const std::string& worker, LogicalTime now);
  Submission submit(const std::string& instance_id, const std::string& activity_id,
                    const std::string& execution_id, Json payload, LogicalTime now);
  ExecutionCopy abandon(const std::string& instance_id, const std::string& activity_id,
                        const std::string& execution_id, LogicalTime now);
  /// Owner-driven aggregation (required for OWNER_SELECT). For ALL/FIRST_N the
  /// engine aggregates at close; calling this afterwards returns that result.
  AggregatedResult aggregate(const std::string& instance_id, const std::string& activity_id,
                             const std::optional<std::vector<std::string>>& selection,
                             LogicalTime now, const Actor& actor = Actor::system());
  const CsActivitySession& session(const std::string& instance_id,
                                   const std::string& activity_id) const;

  // --- delegation (work done entirely off-system) --------------------------
  ActivityInstance delegate_start(const std::string& instance_id, const std::string& activity_id,
                                  const Actor& actor, const std::string& note, LogicalTime now);
  RoutingOutcome delegate_finish(const std::string& instance_id, const std::string& activity_id,
                                 const Actor& actor, Json result, LogicalTime now);

  // --- external users -----------------------------------------------------
  ExternalUser register_external(const std::string& display_name, const std::string& contact,
                                 LogicalTime now);
  std::size_t purge_expired_users(LogicalTime now);

  // --- time ---------------------------------------------------------------
  /// Moves logical time forward and fires every deadline that is due, in
  /// (deadline, instance_id, activity_id) order. Every other timed command
  /// calls this first. Throws Error(ClockRegression) if now < clock().
  std::vector<DeadlineFiring> advance_clock(LogicalTime now);
  LogicalTime clock() const { return clock_; }

  // --- introspection ------------------------------------------------------
  const SystemState& state() const { return state_; }
  const EventLog& log() const { return log_; }
  EventLog& log() { return log_; }
  Directory& directory() { return directory_; }
  const Directory& directory() const { return directory_; }
  const EngineOptions& options() const { return options_; }
  void set_transition_observer(TransitionObserver observer) { observer_ = std::move(observer); }

 private:
  void commit(Event event);
  void commit(LogicalTime at, const std::optional<std::string>& instance_id, const char* kind,
              Json payload);
  const ProcessInstance& running_instance(const std::string& instance_id) const;
  const ActivityInstance& activity_of(const ProcessInstance& instance,
                                      const std::string& activity_id) const;
  const CsActivitySession& session_of(const ProcessInstance& instance,
                                      const std::string& activity_id) const;
  RoutingOutcome emit_completion(const std::string& instance_id, const std::string& activity_id,
                                 std::optional<Json> result, LogicalTime at);
  std::vector<std::string> run_automatic(const std::string& instance_id, LogicalTime at);
  DeadlineFiring fire_deadline(const std::string& instance_id, const std::string& activity_id,
                               LogicalTime at);
  void finish_session(const std::string& instance_id, const std::string& activity_id,
                      LogicalTime at);
  void abort_sessions(const std::string& instance_id, LogicalTime at,
                      const std::string& except_activity = {});
  void emit_failure(const std::string& instance_id, const std::string& activity_id,
                    const std::string& reason, LogicalTime at);

  EngineOptions options_;
  Directory directory_;
  std::map<std::string, ProcessDefinition> registry_;
  SystemState state_;
  EventLog log_;
  LogicalTime clock_ = 0;
  bool poisoned_ = false;
  TransitionObserver observer_;
};

}  // namespace crowdflow
