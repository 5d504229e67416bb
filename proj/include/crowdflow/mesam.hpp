#pragma once

// Multiple Executions of a Single Activity Manager.
//
// One CsActivitySession exists per OPEN crowdsourcing activity instance. Each
// worker who undertakes the activity gets an ExecutionCopy: an independent
// state machine (ACTIVE -> COMPLETED | ABANDONED | FORCE_TERMINATED) that
// never refers to any other copy. When the deadline passes every copy still
// ACTIVE is force-terminated and the session closes (or is extended).
//
// These functions operate on plain values and check every precondition
// before mutating anything, so a thrown Error leaves the session untouched.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "crowdflow/error.hpp"
#include "crowdflow/process_model.hpp"

namespace crowdflow {

enum class ExecState { Active, Completed, Abandoned, ForceTerminated };
enum class SessionStatus { Open, Closing, Closed };
enum class SessionOutcomeKind { Complete, Failed, Extended, Aborted };

std::string_view to_string(ExecState state);
std::string_view to_string(SessionStatus status);
std::string_view to_string(SessionOutcomeKind kind);
std::optional<ExecState> parse_exec_state(std::string_view text);
std::optional<SessionStatus> parse_session_status(std::string_view text);
std::optional<SessionOutcomeKind> parse_session_outcome(std::string_view text);

struct Submission {
  std::string execution_id;
  Json payload;
  LogicalTime submitted_at = 0;
  std::optional<bool> accepted;

  friend bool operator==(const Submission&, const Submission&) = default;
};

struct ExecutionCopy {
  std::string execution_id;
  std::string worker;  // ExternalUser id
  ExecState state = ExecState::Active;
  LogicalTime claimed_at = 0;
  std::optional<LogicalTime> finished_at;
  std::optional<Submission> submission;

  friend bool operator==(const ExecutionCopy&, const ExecutionCopy&) = default;
};

struct CsActivitySession {
  std::string instance_id;
  std::string activity_id;
  CsConfig config;
  LogicalTime opened_at = 0;
  LogicalTime deadline = 0;
  SessionStatus status = SessionStatus::Open;
  std::vector<ExecutionCopy> executions;  // spawn order; only ever appended
  std::int64_t extensions_used = 0;
  std::optional<SessionOutcomeKind> outcome;  // set when CLOSED
  std::optional<LogicalTime> closed_at;
  bool aggregated = false;

  const ExecutionCopy* find(const std::string& execution_id) const;
  ExecutionCopy* find(const std::string& execution_id);
  std::size_t count(ExecState state) const;
  /// Completed submissions ordered by (submitted_at, execution_id).
  std::vector<const Submission*> submissions() const;

  friend bool operator==(const CsActivitySession&, const CsActivitySession&) = default;
};

using SessionTable = std::map<std::string, CsActivitySession>;  // by activity id

/// Latest deadline the session can reach through EXTEND.
LogicalTime max_effective_deadline(const CsActivitySession& session);

CsActivitySession& open_session(SessionTable& sessions, const std::string& instance_id,
                                const std::string& activity_id, const CsConfig& config,
                                LogicalTime now);

/// The complete admission predicate for claims: nullopt iff spawn succeeds.
std::optional<ErrorCode> spawn_rejection(const CsActivitySession& session,
                                         const std::string& worker, LogicalTime now);

ExecutionCopy& spawn_execution(CsActivitySession& session, const std::string& execution_id,
                               const std::string& worker, LogicalTime now);

Submission& submit_result(CsActivitySession& session, const std::string& execution_id,
                          Json payload, LogicalTime now);

ExecutionCopy& abandon_execution(CsActivitySession& session, const std::string& execution_id,
                                 LogicalTime now);

// --- deadline handling -----------------------------------------------------

struct DeadlinePlan {
  std::vector<std::string> force_terminate;  // ACTIVE copies, spawn order
  SessionOutcomeKind decision = SessionOutcomeKind::Complete;
  LogicalTime new_deadline = 0;  // meaningful for Extended
  std::vector<std::string> submissions;  // (submitted_at, execution_id) order
};

/// Decides what the deadline does without touching the session.
DeadlinePlan plan_deadline(const CsActivitySession& session, LogicalTime now);

void force_terminate(CsActivitySession& session, const std::string& execution_id, LogicalTime now);
void extend_deadline(CsActivitySession& session, LogicalTime new_deadline);
void close_session(CsActivitySession& session, SessionOutcomeKind outcome, LogicalTime now);

struct SessionOutcome {
  SessionOutcomeKind kind = SessionOutcomeKind::Complete;
  std::vector<Submission> submissions;  // for Complete
  std::vector<std::string> force_terminated;
  LogicalTime deadline = 0;
};

/// plan_deadline followed by every mutation it calls for.
SessionOutcome on_deadline(CsActivitySession& session, LogicalTime now);

// --- aggregation -----------------------------------------------------------

struct AggregatedResult {
  std::vector<std::string> accepted;  // (submitted_at, execution_id) order
  std::vector<std::string> rejected;
  friend bool operator==(const AggregatedResult&, const AggregatedResult&) = default;
};

AggregatedResult aggregate(const CsActivitySession& session, const AggregationPolicy& policy,
                           const std::optional<std::vector<std::string>>& selection = std::nullopt);

void apply_aggregation(CsActivitySession& session, const AggregatedResult& result);

/// Document stored in the instance's WF data under the activity id.
Json aggregated_payloads(const CsActivitySession& session, const AggregatedResult& result);

}  // namespace crowdflow
