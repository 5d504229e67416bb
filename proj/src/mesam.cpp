#include "crowdflow/mesam.hpp"

#include <algorithm>
#include <set>

namespace crowdflow {

std::string_view to_string(ExecState state) {
  switch (state) {
    case ExecState::Active: return "ACTIVE";
    case ExecState::Completed: return "COMPLETED";
    case ExecState::Abandoned: return "ABANDONED";
    case ExecState::ForceTerminated: return "FORCE_TERMINATED";
  }
  return "?";
}

std::string_view to_string(SessionStatus status) {
  switch (status) {
    case SessionStatus::Open: return "OPEN";
    case SessionStatus::Closing: return "CLOSING";
    case SessionStatus::Closed: return "CLOSED";
  }
  return "?";
}

std::string_view to_string(SessionOutcomeKind kind) {
  switch (kind) {
    case SessionOutcomeKind::Complete: return "COMPLETE";
    case SessionOutcomeKind::Failed: return "FAILED";
    case SessionOutcomeKind::Extended: return "EXTENDED";
    case SessionOutcomeKind::Aborted: return "ABORTED";
  }
  return "?";
}

std::optional<ExecState> parse_exec_state(std::string_view text) {
  for (auto s : {ExecState::Active, ExecState::Completed, ExecState::Abandoned,
                 ExecState::ForceTerminated})
    if (to_string(s) == text) return s;
  return std::nullopt;
}

std::optional<SessionStatus> parse_session_status(std::string_view text) {
  for (auto s : {SessionStatus::Open, SessionStatus::Closing, SessionStatus::Closed})
    if (to_string(s) == text) return s;
  return std::nullopt;
}

std::optional<SessionOutcomeKind> parse_session_outcome(std::string_view text) {
  for (auto s : {SessionOutcomeKind::Complete, SessionOutcomeKind::Failed,
                 SessionOutcomeKind::Extended, SessionOutcomeKind::Aborted})
    if (to_string(s) == text) return s;
  return std::nullopt;
}

const ExecutionCopy* CsActivitySession::find(const std::string& execution_id) const {
  for (const auto& e : executions)
    if (e.execution_id == execution_id) return &e;
  return nullptr;
}

ExecutionCopy* CsActivitySession::find(const std::string& execution_id) {
  for (auto& e : executions)
    if (e.execution_id == execution_id) return &e;
  return nullptr;
}

std::size_t CsActivitySession::count(ExecState state) const {
  return static_cast<std::size_t>(std::count_if(
      executions.begin(), executions.end(), [&](const ExecutionCopy& e) { return e.state == state; }));
}

std::vector<const Submission*> CsActivitySession::submissions() const {
  std::vector<const Submission*> out;
  for (const auto& e : executions)
    if (e.submission) out.push_back(&*e.submission);
  std::sort(out.begin(), out.end(), [](const Submission* a, const Submission* b) {
    if (a->submitted_at != b->submitted_at) return a->submitted_at < b->submitted_at;
    return a->execution_id < b->execution_id;
  });
  return out;
}

LogicalTime max_effective_deadline(const CsActivitySession& session) {
  LogicalTime base = session.opened_at + session.config.open_duration;
  if (auto* ext = std::get_if<ZeroExtend>(&session.config.on_zero_results))
    return base + ext->span * ext->max_extensions;
  return base;
}

CsActivitySession& open_session(SessionTable& sessions, const std::string& instance_id,
                                const std::string& activity_id, const CsConfig& config,
                                LogicalTime now) {
  if (sessions.count(activity_id))
    throw Error(ErrorCode::DuplicateSession,
                "session already exists for " + instance_id + "/" + activity_id);
  CsActivitySession session;
  session.instance_id = instance_id;
  session.activity_id = activity_id;
  session.config = config;
  session.opened_at = now;
  session.deadline = now + config.open_duration;
  return sessions.emplace(activity_id, std::move(session)).first->second;
}

std::optional<ErrorCode> spawn_rejection(const CsActivitySession& session,
                                         const std::string& worker, LogicalTime now) {
  if (session.status != SessionStatus::Open || now >= session.deadline)
    return ErrorCode::SessionClosed;
  if (session.config.max_executions &&
      static_cast<std::int64_t>(session.executions.size()) >= *session.config.max_executions)
    return ErrorCode::CapacityReached;
  for (const auto& e : session.executions)
    if (e.worker == worker && e.state == ExecState::Active) return ErrorCode::DuplicateActiveClaim;
  return std::nullopt;
}

ExecutionCopy& spawn_execution(CsActivitySession& session, const std::string& execution_id,
                               const std::string& worker, LogicalTime now) {
  if (auto code = spawn_rejection(session, worker, now)) {
    switch (*code) {
      case ErrorCode::SessionClosed:
        throw Error(*code, "session " + session.activity_id + " is not open at t=" + std::to_string(now));
      case ErrorCode::CapacityReached:
        throw Error(*code, "session " + session.activity_id + " reached max_executions");
      default:
        throw Error(*code, "worker " + worker + " already holds an active copy");
    }
  }
  if (session.find(execution_id))
    throw Error(ErrorCode::InvalidArgument, "execution id reused: " + execution_id);
  ExecutionCopy copy;
  copy.execution_id = execution_id;
  copy.worker = worker;
  copy.claimed_at = now;
  session.executions.push_back(std::move(copy));
  return session.executions.back();
}

namespace {

ExecutionCopy& require_execution(CsActivitySession& session, const std::string& execution_id) {
  auto* copy = session.find(execution_id);
  if (!copy) throw Error(ErrorCode::UnknownExecution, "unknown execution " + execution_id);
  return *copy;
}

void require_open(const CsActivitySession& session, LogicalTime now) {
  if (session.status != SessionStatus::Open || now >= session.deadline)
    throw Error(ErrorCode::SessionClosed,
                "session " + session.activity_id + " is not open at t=" + std::to_string(now));
}

}  // namespace

Submission& submit_result(CsActivitySession& session, const std::string& execution_id,
                          Json payload, LogicalTime now) {
  auto& copy = require_execution(session, execution_id);
  require_open(session, now);
  if (copy.state != ExecState::Active)
    throw Error(ErrorCode::IllegalExecState,
                "execution " + execution_id + " is " + std::string(to_string(copy.state)));
  copy.state = ExecState::Completed;
  copy.finished_at = now;
  copy.submission = Submission{execution_id, std::move(payload), now, std::nullopt};
  return *copy.submission;
}

ExecutionCopy& abandon_execution(CsActivitySession& session, const std::string& execution_id,
                                 LogicalTime now) {
  auto& copy = require_execution(session, execution_id);
  if (copy.state != ExecState::Active)
    throw Error(ErrorCode::IllegalExecState,
                "execution " + execution_id + " is " + std::string(to_string(copy.state)));
  require_open(session, now);
  copy.state = ExecState::Abandoned;
  copy.finished_at = now;
  return copy;
}

DeadlinePlan plan_deadline(const CsActivitySession& session, LogicalTime now) {
  if (session.status != SessionStatus::Open)
    throw Error(ErrorCode::IllegalState, "session " + session.activity_id + " is not open");
  if (now < session.deadline)
    throw Error(ErrorCode::IllegalState, "deadline " + std::to_string(session.deadline) +
                                             " not reached at t=" + std::to_string(now));
  DeadlinePlan plan;
  for (const auto& e : session.executions)
    if (e.state == ExecState::Active) plan.force_terminate.push_back(e.execution_id);
  for (const auto* s : session.submissions()) plan.submissions.push_back(s->execution_id);

  const auto count = static_cast<std::int64_t>(plan.submissions.size());
  if (count == 0) {
    if (std::holds_alternative<ZeroFail>(session.config.on_zero_results)) {
      plan.decision = SessionOutcomeKind::Failed;
    } else if (auto* ext = std::get_if<ZeroExtend>(&session.config.on_zero_results);
               ext && session.extensions_used < ext->max_extensions) {
      plan.decision = SessionOutcomeKind::Extended;
      plan.new_deadline = session.deadline + ext->span;
    } else {
      // COMPLETE_EMPTY, or EXTEND with its extensions used up.
      plan.decision = SessionOutcomeKind::Complete;
    }
  } else if (count >= session.config.min_results) {
    plan.decision = SessionOutcomeKind::Complete;
  } else {
    plan.decision = SessionOutcomeKind::Failed;
  }
  return plan;
}

void force_terminate(CsActivitySession& session, const std::string& execution_id, LogicalTime now) {
  auto& copy = require_execution(session, execution_id);
  if (copy.state != ExecState::Active)
    throw Error(ErrorCode::IllegalExecState, "execution " + execution_id + " is not ACTIVE");
  if (session.status == SessionStatus::Closed)
    throw Error(ErrorCode::IllegalState, "session " + session.activity_id + " already closed");
  copy.state = ExecState::ForceTerminated;
  copy.finished_at = now;
  session.status = SessionStatus::Closing;
}

void extend_deadline(CsActivitySession& session, LogicalTime new_deadline) {
  auto* ext = std::get_if<ZeroExtend>(&session.config.on_zero_results);
  if (!ext || session.extensions_used >= ext->max_extensions)
    throw Error(ErrorCode::IllegalState, "no extension available for " + session.activity_id);
  if (session.status == SessionStatus::Closed)
    throw Error(ErrorCode::IllegalState, "session " + session.activity_id + " already closed");
  if (new_deadline != session.deadline + ext->span)
    throw Error(ErrorCode::IllegalState, "extension does not match the configured span");
  session.deadline = new_deadline;
  ++session.extensions_used;
  session.status = SessionStatus::Open;
}

void close_session(CsActivitySession& session, SessionOutcomeKind outcome, LogicalTime now) {
  if (session.status == SessionStatus::Closed)
    throw Error(ErrorCode::IllegalState, "session " + session.activity_id + " already closed");
  if (session.count(ExecState::Active) != 0)
    throw Error(ErrorCode::IllegalState, "session " + session.activity_id + " still has active copies");
  session.status = SessionStatus::Closed;
  session.outcome = outcome;
  session.closed_at = now;
}

SessionOutcome on_deadline(CsActivitySession& session, LogicalTime now) {
  auto plan = plan_deadline(session, now);
  for (const auto& id : plan.force_terminate) force_terminate(session, id, now);
  SessionOutcome outcome;
  outcome.kind = plan.decision;
  outcome.force_terminated = plan.force_terminate;
  if (plan.decision == SessionOutcomeKind::Extended) {
    extend_deadline(session, plan.new_deadline);
  } else {
    close_session(session, plan.decision, now);
    if (plan.decision == SessionOutcomeKind::Complete)
      for (const auto* s : session.submissions()) outcome.submissions.push_back(*s);
  }
  outcome.deadline = session.deadline;
  return outcome;
}

AggregatedResult aggregate(const CsActivitySession& session, const AggregationPolicy& policy,
                           const std::optional<std::vector<std::string>>& selection) {
  if (session.status != SessionStatus::Closed || session.outcome != SessionOutcomeKind::Complete)
    throw Error(ErrorCode::SessionNotClosed,
                "session " + session.activity_id + " has not closed with outcome COMPLETE");
  const auto subs = session.submissions();
  AggregatedResult result;

  if (auto* owner = std::get_if<AggregateOwnerSelect>(&policy)) {
    if (!selection) throw Error(ErrorCode::InvalidSelection, "OWNER_SELECT requires a selection");
    if (static_cast<std::int64_t>(selection->size()) > owner->k)
      throw Error(ErrorCode::InvalidSelection,
                  "selected " + std::to_string(selection->size()) + " > k=" + std::to_string(owner->k),
                  Json(*selection));
    std::set<std::string> chosen;
    Json offending = Json::array();
    for (const auto& id : *selection) {
      const bool known = std::any_of(subs.begin(), subs.end(),
                                     [&](const Submission* s) { return s->execution_id == id; });
      if (!known || !chosen.insert(id).second) offending.push_back(id);
    }
    if (!offending.empty())
      throw Error(ErrorCode::InvalidSelection, "selection names unknown or repeated executions",
                  offending);
    for (const auto* s : subs)
      (chosen.count(s->execution_id) ? result.accepted : result.rejected).push_back(s->execution_id);
    return result;
  }

  if (selection) throw Error(ErrorCode::InvalidSelection, "policy does not take an owner selection");
  std::size_t limit = subs.size();
  if (auto* first = std::get_if<AggregateFirstN>(&policy))
    limit = std::min<std::size_t>(limit, static_cast<std::size_t>(first->n));
  for (std::size_t i = 0; i < subs.size(); ++i)
    (i < limit ? result.accepted : result.rejected).push_back(subs[i]->execution_id);
  return result;
}

void apply_aggregation(CsActivitySession& session, const AggregatedResult& result) {
  if (session.aggregated)
    throw Error(ErrorCode::IllegalState, "session " + session.activity_id + " already aggregated");
  for (const auto* ids : {&result.accepted, &result.rejected})
    for (const auto& id : *ids) {
      const auto* copy = session.find(id);
      if (!copy || !copy->submission) throw Error(ErrorCode::InvalidSelection, "no submission " + id);
    }
  for (const auto& id : result.accepted) session.find(id)->submission->accepted = true;
  for (const auto& id : result.rejected) session.find(id)->submission->accepted = false;
  session.aggregated = true;
}

Json aggregated_payloads(const CsActivitySession& session, const AggregatedResult& result) {
  Json out = Json::array();
  for (const auto& id : result.accepted) {
    const auto* copy = session.find(id);
    if (!copy || !copy->submission) continue;
    out.push_back({{"execution_id", id},
                   {"worker", copy->worker},
                   {"payload", copy->submission->payload},
                   {"submitted_at", copy->submission->submitted_at}});
  }
  return out;
}

}  // namespace crowdflow
