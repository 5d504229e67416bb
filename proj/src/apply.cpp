#include <algorithm>

#include "crowdflow/enactment.hpp"
#include "crowdflow/error.hpp"

namespace crowdflow {

namespace {

[[noreturn]] void corrupt(const Event& event, const std::string& what) {
  throw Error(ErrorCode::CorruptLog,
              "event " + std::to_string(event.seq) + " (" + event.kind + "): " + what);
}

std::vector<std::string> string_list(const Json& node) {
  std::vector<std::string> out;
  for (const auto& v : node) out.push_back(v.get<std::string>());
  return out;
}

class Folder {
 public:
  Folder(SystemState& state, const Event& event) : state_(state), event_(event) {}

  void run() {
    if (event_.seq != state_.last_seq + 1)
      corrupt(event_, "expected seq " + std::to_string(state_.last_seq + 1));
    if (!is_known_event_kind(event_.kind)) corrupt(event_, "unknown event kind");

    const auto& k = event_.kind;
    const auto& p = event_.payload;
    if (k == "UserRegistered") return user_registered(p);
    if (k == "UserPurged") return user_purged(p);
    if (k == "ProcessStarted") return process_started(p);

    if (!event_.instance_id) corrupt(event_, "missing instance_id");
    auto it = state_.instances.find(*event_.instance_id);
    if (it == state_.instances.end()) corrupt(event_, "unknown instance " + *event_.instance_id);
    if (it->second.state != ProcessState::Running)
      corrupt(event_, "instance " + it->first + " is not RUNNING");
    work_ = it->second;  // mutate a copy; commit only if everything checks
    def_ = &state_.definitions.at(work_.definition_id);

    if (k == "ActivityStarted") activity_started(p);
    else if (k == "DelegationStarted") delegation_started(p);
    else if (k == "DelegationFinished") delegation_finished(p);
    else if (k == "SessionOpened") session_opened(p);
    else if (k == "ExecutionSpawned") execution_spawned(p);
    else if (k == "ResultSubmitted") mesam_op(p, [&](auto& s) { submit_result(s, p.at("execution_id"), p.at("payload"), event_.at); });
    else if (k == "ExecutionAbandoned") mesam_op(p, [&](auto& s) { abandon_execution(s, p.at("execution_id"), event_.at); });
    else if (k == "ExecutionForceTerminated") mesam_op(p, [&](auto& s) { force_terminate(s, p.at("execution_id"), event_.at); });
    else if (k == "SessionExtended") session_extended(p);
    else if (k == "SessionClosed") session_closed(p);
    else if (k == "ResultsAggregated") results_aggregated(p);
    else if (k == "ActivityCompleted") activity_completed(p);
    else if (k == "ActivityFailed") activity_failed(p);
    else if (k == "InstanceTerminated") instance_terminated(p);
    else corrupt(event_, "unhandled kind");

    it->second = std::move(work_);
    finish();
  }

  std::vector<TransitionRecord> records;

 private:
  void finish() {
    state_.last_seq = event_.seq;
    state_.last_event_at = std::max(state_.last_event_at, event_.at);
  }

  ActivityInstance& activity(const Json& p) {
    const auto id = p.at("activity_id").get<std::string>();
    auto it = work_.activities.find(id);
    if (it == work_.activities.end()) corrupt(event_, "unknown activity " + id);
    return it->second;
  }

  CsActivitySession& session(const Json& p) {
    const auto id = p.at("activity_id").get<std::string>();
    auto it = work_.sessions.find(id);
    if (it == work_.sessions.end()) corrupt(event_, "no session for " + id);
    return it->second;
  }

  void move(ActivityInstance& a, ActivityState to) {
    if (!is_legal_transition(a.kind, a.state, to))
      corrupt(event_, "illegal transition " + std::string(to_string(a.state)) + " -> " +
                          std::string(to_string(to)) + " for " + a.activity_id);
    records.push_back({event_.seq, work_.id, a.activity_id, a.kind, a.state, to});
    a.state = to;
  }

  void require_kind(const ActivityInstance& a, std::initializer_list<TaskKind> kinds) {
    if (std::find(kinds.begin(), kinds.end(), a.kind) == kinds.end())
      corrupt(event_, "wrong kind for " + a.activity_id);
  }

  template <typename Op>
  void mesam_op(const Json& p, Op op) {
    try {
      op(session(p));
    } catch (const Error& e) {
      if (e.code() == ErrorCode::CorruptLog) throw;
      corrupt(event_, e.what());
    }
  }

  void process_started(const Json& p) {
    if (!event_.instance_id) corrupt(event_, "missing instance_id");
    const auto& id = *event_.instance_id;
    if (id != format_id("pi", state_.instance_counter + 1)) corrupt(event_, "unexpected instance id " + id);
    if (state_.instances.count(id)) corrupt(event_, "instance exists");
    ProcessDefinition def;
    try {
      def = parse_definition(p.at("definition"));
    } catch (const Error& e) {
      corrupt(event_, std::string("embedded definition: ") + e.what());
    }
    if (auto it = state_.definitions.find(def.id); it != state_.definitions.end() && !(it->second == def))
      corrupt(event_, "conflicting definition " + def.id);

    ProcessInstance inst;
    inst.id = id;
    inst.definition_id = def.id;
    inst.initiator = p.at("initiator").get<std::string>();
    inst.created_at = event_.at;
    for (const auto& a : def.activities) {
      ActivityInstance ai;
      ai.activity_id = a.id;
      ai.kind = a.kind;
      inst.activities.emplace(a.id, std::move(ai));
    }
    for (const auto& slot : def.wf_data) inst.data.emplace(slot.name, nullptr);
    work_ = std::move(inst);
    auto& start = work_.activities.at(topology(def).start);
    move(start, ActivityState::Available);
    start.available_at = event_.at;

    state_.definitions.emplace(def.id, std::move(def));
    state_.instances.emplace(id, std::move(work_));
    ++state_.instance_counter;
    finish();
  }

  void activity_started(const Json& p) {
    auto& a = activity(p);
    require_kind(a, {TaskKind::Human, TaskKind::Automatic, TaskKind::Crowdsourced});
    move(a, a.kind == TaskKind::Crowdsourced ? ActivityState::Open : ActivityState::Active);
    a.started_at = event_.at;
    if (a.kind == TaskKind::Human) {
      if (!p.at("assignee").is_string()) corrupt(event_, "HUMAN start without assignee");
      a.assignee = p.at("assignee").get<std::string>();
    } else if (!p.at("assignee").is_null()) {
      corrupt(event_, "assignee only allowed for HUMAN");
    }
  }

  void delegation_started(const Json& p) {
    auto& a = activity(p);
    require_kind(a, {TaskKind::Delegated});
    move(a, ActivityState::Active);
    a.started_at = event_.at;
  }

  void delegation_finished(const Json& p) {
    auto& a = activity(p);
    require_kind(a, {TaskKind::Delegated});
    if (a.state != ActivityState::Active) corrupt(event_, "delegated activity not ACTIVE");
  }

  void session_opened(const Json& p) {
    auto& a = activity(p);
    require_kind(a, {TaskKind::Crowdsourced});
    if (a.state != ActivityState::Open) corrupt(event_, "activity not OPEN");
    const auto* def = def_->find_activity(a.activity_id);
    try {
      auto& s = open_session(work_.sessions, work_.id, a.activity_id, *def->cs_config, event_.at);
      if (s.deadline != p.at("deadline").get<LogicalTime>()) corrupt(event_, "deadline mismatch");
    } catch (const Error& e) {
      if (e.code() == ErrorCode::CorruptLog) throw;
      corrupt(event_, e.what());
    }
  }

  void execution_spawned(const Json& p) {
    const auto exec = p.at("execution_id").get<std::string>();
    if (exec != format_id("ex", state_.execution_counter + 1)) corrupt(event_, "unexpected execution id");
    const auto worker = p.at("worker").get<std::string>();
    if (!state_.users.count(worker)) corrupt(event_, "unknown worker " + worker);
    mesam_op(p, [&](auto& s) { spawn_execution(s, exec, worker, event_.at); });
    ++state_.execution_counter;  // only reached when the fold commits below
  }

  void session_extended(const Json& p) {
    mesam_op(p, [&](auto& s) {
      extend_deadline(s, p.at("deadline").get<LogicalTime>());
      if (s.extensions_used != p.at("extensions_used").get<std::int64_t>())
        corrupt(event_, "extension count mismatch");
    });
  }

  void session_closed(const Json& p) {
    auto outcome = parse_session_outcome(p.at("outcome").get<std::string>());
    if (!outcome || *outcome == SessionOutcomeKind::Extended) corrupt(event_, "bad outcome");
    mesam_op(p, [&](auto& s) {
      close_session(s, *outcome, event_.at);
      std::vector<std::string> subs;
      for (const auto* sub : s.submissions()) subs.push_back(sub->execution_id);
      if (subs != string_list(p.at("submissions"))) corrupt(event_, "submission list mismatch");
    });
  }

  void results_aggregated(const Json& p) {
    AggregatedResult r{string_list(p.at("accepted")), string_list(p.at("rejected"))};
    mesam_op(p, [&](auto& s) {
      if (s.status != SessionStatus::Closed || s.outcome != SessionOutcomeKind::Complete)
        corrupt(event_, "aggregating a session that did not complete");
      if (r.accepted.size() + r.rejected.size() != s.submissions().size())
        corrupt(event_, "aggregation does not cover every submission");
      apply_aggregation(s, r);
    });
  }

  void activity_completed(const Json& p) {
    auto& a = activity(p);
    if (a.kind == TaskKind::Crowdsourced) {
      const auto& s = session(p);
      if (s.status != SessionStatus::Closed || !s.aggregated)
        corrupt(event_, "CS activity completes only after its session closed and aggregated");
    }
    const auto effect = routing_after_completion(*def_, work_, a.activity_id);
    move(a, ActivityState::Completed);
    a.finished_at = event_.at;
    if (p.contains("result")) {
      a.result = p.at("result");
      work_.data[a.activity_id] = p.at("result");
    }
    if (effect.enabled != string_list(p.at("enabled"))) corrupt(event_, "enabled set mismatch");
    for (const auto& id : effect.enabled) {
      auto& next = work_.activities.at(id);
      move(next, ActivityState::Available);
      next.available_at = event_.at;
    }
    const auto state = parse_process_state(p.at("instance_state").get<std::string>());
    if (state != effect.instance_state) corrupt(event_, "instance state mismatch");
    if (effect.instance_state == ProcessState::Completed) {
      work_.state = ProcessState::Completed;
      work_.finished_at = event_.at;
    }
  }

  void skip_rest(const Json& p, const std::string& except) {
    for (const auto& [id, s] : work_.sessions)
      if (s.status != SessionStatus::Closed && id != except)
        corrupt(event_, "session " + id + " still open");
    std::vector<std::string> skipped;
    for (const auto& id : topology(*def_).order) {
      auto& a = work_.activities.at(id);
      if (id == except || is_terminal(a.state)) continue;
      move(a, ActivityState::Skipped);
      a.finished_at = event_.at;
      skipped.push_back(id);
    }
    if (skipped != string_list(p.at("skipped"))) corrupt(event_, "skipped set mismatch");
  }

  void activity_failed(const Json& p) {
    auto& a = activity(p);
    if (a.kind == TaskKind::Crowdsourced && session(p).status != SessionStatus::Closed)
      corrupt(event_, "CS activity fails only after its session closed");
    move(a, ActivityState::Failed);
    a.finished_at = event_.at;
    skip_rest(p, a.activity_id);
    work_.state = ProcessState::Failed;
    work_.finished_at = event_.at;
  }

  void instance_terminated(const Json& p) {
    skip_rest(p, {});
    work_.state = ProcessState::Terminated;
    work_.finished_at = event_.at;
  }

  void user_registered(const Json& p) {
    ExternalUser u;
    u.user_id = p.at("user_id").get<std::string>();
    if (u.user_id != format_id("u", state_.user_counter + 1)) corrupt(event_, "unexpected user id");
    u.display_name = p.at("display_name").get<std::string>();
    u.contact = p.at("contact").get<std::string>();
    u.registered_at = event_.at;
    u.consent_expiry = p.at("consent_expiry").get<LogicalTime>();
    state_.users.emplace(u.user_id, std::move(u));
    ++state_.user_counter;
    finish();
  }

  void user_purged(const Json& p) {
    const auto id = p.at("user_id").get<std::string>();
    auto it = state_.users.find(id);
    if (it == state_.users.end() || it->second.purged) corrupt(event_, "cannot purge " + id);
    if (it->second.consent_expiry > event_.at) corrupt(event_, "purging before consent expiry");
    it->second.display_name.clear();
    it->second.contact.clear();
    it->second.purged = true;
    finish();
  }

  SystemState& state_;
  const Event& event_;
  ProcessInstance work_;
  const ProcessDefinition* def_ = nullptr;
};

}  // namespace

RoutingEffect routing_after_completion(const ProcessDefinition& def, const ProcessInstance& instance,
                                       const std::string& completed_id) {
  const auto plan = topology(def);
  auto done = [&](const std::string& id) {
    return id == completed_id || instance.activities.at(id).state == ActivityState::Completed;
  };
  RoutingEffect effect;
  for (const auto& id : plan.order) {
    if (!plan.successors.at(completed_id).count(id)) continue;
    if (instance.activities.at(id).state != ActivityState::Inactive) continue;
    const auto& preds = plan.predecessors.at(id);
    if (std::all_of(preds.begin(), preds.end(), done)) effect.enabled.push_back(id);
  }
  const bool all_terminal = std::all_of(plan.order.begin(), plan.order.end(), [&](const std::string& id) {
    return id == completed_id || is_terminal(instance.activities.at(id).state);
  });
  effect.instance_state = all_terminal && effect.enabled.empty() ? ProcessState::Completed
                                                                 : ProcessState::Running;
  return effect;
}

void apply_event(SystemState& state, const Event& event, const TransitionObserver* observer) {
  Folder folder(state, event);
  try {
    folder.run();
  } catch (const Json::exception& e) {
    corrupt(event, std::string("malformed payload: ") + e.what());
  }
  if (observer && *observer)
    for (const auto& r : folder.records) (*observer)(r);
}

}  // namespace crowdflow
