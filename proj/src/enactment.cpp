#include "crowdflow/enactment.hpp"

#include <algorithm>
#include <tuple>

#include "crowdflow/error.hpp"

namespace crowdflow {

void Directory::add(const std::string& user_id, std::set<std::string> roles) {
  if (user_id.empty() || user_id == kSystemActor)
    throw Error(ErrorCode::InvalidArgument, "reserved or empty internal user id");
  users_[user_id] = std::move(roles);
}

const std::set<std::string>* Directory::roles_of(const std::string& user_id) const {
  auto it = users_.find(user_id);
  return it == users_.end() ? nullptr : &it->second;
}

bool Directory::holds(const std::string& user_id, const std::string& role) const {
  const auto* roles = roles_of(user_id);
  return roles && roles->count(role);
}

Engine::Engine(EngineOptions options, Directory directory)
    : options_(options), directory_(std::move(directory)) {
  if (options_.retention_span <= 0)
    throw Error(ErrorCode::InvalidArgument, "retention span must be positive");
}

Engine Engine::from_events(const std::vector<Event>& events, EngineOptions options,
                           Directory directory) {
  Engine engine(options, std::move(directory));
  for (const auto& e : events) {
    apply_event(engine.state_, e);
    engine.log_.append(e);
  }
  engine.clock_ = engine.state_.last_event_at;
  for (const auto& [id, def] : engine.state_.definitions) engine.registry_.emplace(id, def);
  return engine;
}

// ---------------------------------------------------------------------------

void Engine::commit(Event event) {
  if (poisoned_) throw Error(ErrorCode::StorageFailure, "engine stopped after a storage failure");
  event.seq = log_.last_seq() + 1;
  const TransitionObserver* observer = observer_ ? &observer_ : nullptr;
  apply_event(state_, event, observer);
  try {
    log_.append(std::move(event));
  } catch (...) {
    poisoned_ = true;
    throw;
  }
}

void Engine::commit(LogicalTime at, const std::optional<std::string>& instance_id, const char* kind,
                    Json payload) {
  Event e;
  e.at = at;
  e.kind = kind;
  e.instance_id = instance_id;
  e.payload = std::move(payload);
  commit(std::move(e));
}

const ProcessInstance& Engine::running_instance(const std::string& instance_id) const {
  auto it = state_.instances.find(instance_id);
  if (it == state_.instances.end())
    throw Error(ErrorCode::UnknownInstance, "unknown instance " + instance_id);
  if (it->second.state != ProcessState::Running)
    throw Error(ErrorCode::IllegalState,
                "instance " + instance_id + " is " + std::string(to_string(it->second.state)));
  return it->second;
}

const ActivityInstance& Engine::activity_of(const ProcessInstance& instance,
                                            const std::string& activity_id) const {
  auto it = instance.activities.find(activity_id);
  if (it == instance.activities.end())
    throw Error(ErrorCode::UnknownActivity, "unknown activity " + activity_id + " in " + instance.id);
  return it->second;
}

const CsActivitySession& Engine::session_of(const ProcessInstance& instance,
                                            const std::string& activity_id) const {
  const auto& a = activity_of(instance, activity_id);
  if (a.kind != TaskKind::Crowdsourced)
    throw Error(ErrorCode::IllegalState, activity_id + " is not a CS activity");
  auto it = instance.sessions.find(activity_id);
  if (it == instance.sessions.end())
    throw Error(ErrorCode::SessionClosed, "activity " + activity_id + " has no open session");
  return it->second;
}

namespace {

[[noreturn]] void illegal(const ActivityInstance& a, const std::string& wanted) {
  throw Error(ErrorCode::IllegalState, "activity " + a.activity_id + " is " +
                                           std::string(to_string(a.state)) + ", expected " + wanted);
}

Json ids_json(const std::vector<std::string>& ids) { return Json(ids); }

}  // namespace

// ---------------------------------------------------------------------------
// definitions

void Engine::register_definition(const ProcessDefinition& def) {
  auto report = validate_definition(def);
  if (!report.ok())
    throw Error(ErrorCode::ValidationError, "definition '" + def.id + "' is invalid", to_json(report));
  auto it = registry_.find(def.id);
  if (it != registry_.end()) {
    if (it->second == def) return;
    throw Error(ErrorCode::DuplicateDefinition, "definition id '" + def.id + "' already registered");
  }
  if (auto used = state_.definitions.find(def.id); used != state_.definitions.end() && !(used->second == def))
    throw Error(ErrorCode::DuplicateDefinition, "definition id '" + def.id + "' already used");
  registry_.emplace(def.id, def);
}

const ProcessDefinition& Engine::definition(const std::string& id) const {
  auto it = registry_.find(id);
  if (it == registry_.end()) throw Error(ErrorCode::UnknownDefinition, "unknown definition " + id);
  return it->second;
}

// ---------------------------------------------------------------------------
// instances

InstanceSnapshot Engine::start_instance(const std::string& definition_id, const Actor& initiator,
                                        LogicalTime now) {
  advance_clock(now);
  const auto& def = definition(definition_id);
  const auto& roles = def.start_condition.initiator_roles;
  if (!roles.empty() && !initiator.is_system() &&
      std::none_of(roles.begin(), roles.end(),
                   [&](const std::string& r) { return directory_.holds(initiator.id, r); }))
    throw Error(ErrorCode::StartConditionUnmet,
                initiator.id + " holds none of the roles required to start " + definition_id);

  const auto id = format_id("pi", state_.instance_counter + 1);
  commit(now, id, "ProcessStarted", {{"definition", to_json(def)}, {"initiator", initiator.id}});
  run_automatic(id, now);
  return query_instance(id);
}

ActivityInstance Engine::begin_activity(const std::string& instance_id,
                                        const std::string& activity_id, const Actor& actor,
                                        LogicalTime now) {
  advance_clock(now);
  const auto& inst = running_instance(instance_id);
  const auto& a = activity_of(inst, activity_id);
  if (a.state != ActivityState::Available) illegal(a, "AVAILABLE");
  const auto& def = state_.definitions.at(inst.definition_id);
  const auto* adef = def.find_activity(activity_id);

  switch (a.kind) {
    case TaskKind::Human:
      if (actor.is_system() || !directory_.holds(actor.id, *adef->role))
        throw Error(ErrorCode::RoleDenied, actor.id + " lacks role " + *adef->role);
      commit(now, instance_id, "ActivityStarted",
             {{"activity_id", activity_id}, {"actor", actor.id}, {"assignee", actor.id}});
      break;
    case TaskKind::Crowdsourced:
      commit(now, instance_id, "ActivityStarted",
             {{"activity_id", activity_id}, {"actor", actor.id}, {"assignee", nullptr}});
      commit(now, instance_id, "SessionOpened",
             {{"activity_id", activity_id}, {"deadline", now + adef->cs_config->open_duration}});
      break;
    case TaskKind::Delegated:
      return delegate_start(instance_id, activity_id, actor, "", now);
    case TaskKind::Automatic:
      commit(now, instance_id, "ActivityStarted",
             {{"activity_id", activity_id}, {"actor", actor.id}, {"assignee", nullptr}});
      emit_completion(instance_id, activity_id, Json(nullptr), now);
      break;
  }
  return state_.instances.at(instance_id).activities.at(activity_id);
}

RoutingOutcome Engine::complete_activity(const std::string& instance_id,
                                         const std::string& activity_id, std::optional<Json> result,
                                         LogicalTime now, const Actor& actor) {
  advance_clock(now);
  const auto& inst = running_instance(instance_id);
  const auto& a = activity_of(inst, activity_id);
  if (a.kind == TaskKind::Crowdsourced)
    throw Error(ErrorCode::IllegalState, "CS activity " + activity_id + " completes through its session");
  if (a.kind == TaskKind::Delegated)
    return delegate_finish(instance_id, activity_id, actor, result.value_or(Json(nullptr)), now);
  if (a.state != ActivityState::Active) illegal(a, "ACTIVE");
  if (a.kind == TaskKind::Human && !actor.is_system() && a.assignee != actor.id)
    throw Error(ErrorCode::AuthorizationDenied, activity_id + " is assigned to " + a.assignee.value_or("?"));
  return emit_completion(instance_id, activity_id, std::move(result), now);
}

InstanceSnapshot Engine::fail_activity(const std::string& instance_id, const std::string& activity_id,
                                       const std::string& reason, LogicalTime now, const Actor& actor) {
  advance_clock(now);
  const auto& inst = running_instance(instance_id);
  const auto& a = activity_of(inst, activity_id);
  if (a.kind != TaskKind::Human)
    throw Error(ErrorCode::IllegalState, "only HUMAN activities can be failed explicitly");
  if (a.state != ActivityState::Active) illegal(a, "ACTIVE");
  if (!actor.is_system() && a.assignee != actor.id)
    throw Error(ErrorCode::AuthorizationDenied, activity_id + " is assigned to " + a.assignee.value_or("?"));
  abort_sessions(instance_id, now);
  emit_failure(instance_id, activity_id, reason, now);
  return query_instance(instance_id);
}

InstanceSnapshot Engine::terminate_instance(const std::string& instance_id, const std::string& reason,
                                            LogicalTime now) {
  advance_clock(now);
  const auto& inst = running_instance(instance_id);
  const auto plan = topology(state_.definitions.at(inst.definition_id));
  abort_sessions(instance_id, now);
  std::vector<std::string> skipped;
  for (const auto& id : plan.order)
    if (!is_terminal(state_.instances.at(instance_id).activities.at(id).state)) skipped.push_back(id);
  commit(now, instance_id, "InstanceTerminated", {{"reason", reason}, {"skipped", ids_json(skipped)}});
  return query_instance(instance_id);
}

InstanceSnapshot Engine::query_instance(const std::string& instance_id) const {
  auto it = state_.instances.find(instance_id);
  if (it == state_.instances.end())
    throw Error(ErrorCode::UnknownInstance, "unknown instance " + instance_id);
  return it->second;
}

RoutingOutcome Engine::emit_completion(const std::string& instance_id, const std::string& activity_id,
                                       std::optional<Json> result, LogicalTime at) {
  const auto& inst = state_.instances.at(instance_id);
  const auto effect = routing_after_completion(state_.definitions.at(inst.definition_id), inst, activity_id);
  Json payload{{"activity_id", activity_id},
               {"enabled", ids_json(effect.enabled)},
               {"instance_state", to_string(effect.instance_state)}};
  if (result) payload["result"] = std::move(*result);
  commit(at, instance_id, "ActivityCompleted", std::move(payload));

  RoutingOutcome outcome;
  outcome.activity_id = activity_id;
  outcome.enabled = effect.enabled;
  outcome.auto_completed = run_automatic(instance_id, at);
  outcome.instance_state = state_.instances.at(instance_id).state;
  return outcome;
}

std::vector<std::string> Engine::run_automatic(const std::string& instance_id, LogicalTime at) {
  std::vector<std::string> ran;
  for (;;) {
    const auto& inst = state_.instances.at(instance_id);
    if (inst.state != ProcessState::Running) break;
    std::optional<std::string> next;
    for (const auto& id : topology(state_.definitions.at(inst.definition_id)).order) {
      const auto& a = inst.activities.at(id);
      if (a.kind == TaskKind::Automatic && a.state == ActivityState::Available) {
        next = id;
        break;
      }
    }
    if (!next) break;
    commit(at, instance_id, "ActivityStarted",
           {{"activity_id", *next}, {"actor", kSystemActor}, {"assignee", nullptr}});
    const auto& now_inst = state_.instances.at(instance_id);
    const auto effect =
        routing_after_completion(state_.definitions.at(now_inst.definition_id), now_inst, *next);
    commit(at, instance_id, "ActivityCompleted",
           {{"activity_id", *next},
            {"result", nullptr},
            {"enabled", ids_json(effect.enabled)},
            {"instance_state", to_string(effect.instance_state)}});
    ran.push_back(*next);
  }
  return ran;
}

void Engine::emit_failure(const std::string& instance_id, const std::string& activity_id,
                          const std::string& reason, LogicalTime at) {
  const auto& inst = state_.instances.at(instance_id);
  std::vector<std::string> skipped;
  for (const auto& id : topology(state_.definitions.at(inst.definition_id)).order)
    if (id != activity_id && !is_terminal(inst.activities.at(id).state)) skipped.push_back(id);
  commit(at, instance_id, "ActivityFailed",
         {{"activity_id", activity_id}, {"reason", reason}, {"skipped", ids_json(skipped)}});
}

void Engine::abort_sessions(const std::string& instance_id, LogicalTime at,
                            const std::string& except_activity) {
  std::vector<std::string> open;
  for (const auto& [aid, s] : state_.instances.at(instance_id).sessions)
    if (s.status != SessionStatus::Closed && aid != except_activity) open.push_back(aid);
  for (const auto& aid : open) {
    std::vector<std::string> active;
    for (const auto& e : state_.instances.at(instance_id).sessions.at(aid).executions)
      if (e.state == ExecState::Active) active.push_back(e.execution_id);
    for (const auto& exec : active)
      commit(at, instance_id, "ExecutionForceTerminated", {{"activity_id", aid}, {"execution_id", exec}});
    std::vector<std::string> subs;
    for (const auto* s : state_.instances.at(instance_id).sessions.at(aid).submissions())
      subs.push_back(s->execution_id);
    commit(at, instance_id, "SessionClosed",
           {{"activity_id", aid}, {"outcome", "ABORTED"}, {"submissions", ids_json(subs)}});
  }
}

// ---------------------------------------------------------------------------
// sessions

ExecutionCopy Engine::claim(const std::string& instance_id, const std::string& activity_id,
                            const std::string& worker, LogicalTime now) {
  advance_clock(now);
  auto inst_it = state_.instances.find(instance_id);
  if (inst_it == state_.instances.end())
    throw Error(ErrorCode::UnknownInstance, "unknown instance " + instance_id);
  const auto& session = session_of(inst_it->second, activity_id);
  auto user = state_.users.find(worker);
  if (user == state_.users.end() || user->second.purged)
    throw Error(ErrorCode::UnknownUser, "unknown external user " + worker);

  const auto exec = format_id("ex", state_.execution_counter + 1);
  CsActivitySession probe = session;
  spawn_execution(probe, exec, worker, now);
  commit(now, instance_id, "ExecutionSpawned",
         {{"activity_id", activity_id}, {"execution_id", exec}, {"worker", worker}});
  return *state_.instances.at(instance_id).sessions.at(activity_id).find(exec);
}

Submission Engine::submit(const std::string& instance_id, const std::string& activity_id,
                          const std::string& execution_id, Json payload, LogicalTime now) {
  advance_clock(now);
  auto inst_it = state_.instances.find(instance_id);
  if (inst_it == state_.instances.end())
    throw Error(ErrorCode::UnknownInstance, "unknown instance " + instance_id);
  CsActivitySession probe = session_of(inst_it->second, activity_id);
  submit_result(probe, execution_id, payload, now);
  commit(now, instance_id, "ResultSubmitted",
         {{"activity_id", activity_id}, {"execution_id", execution_id}, {"payload", std::move(payload)}});
  return *state_.instances.at(instance_id).sessions.at(activity_id).find(execution_id)->submission;
}

ExecutionCopy Engine::abandon(const std::string& instance_id, const std::string& activity_id,
                              const std::string& execution_id, LogicalTime now) {
  advance_clock(now);
  auto inst_it = state_.instances.find(instance_id);
  if (inst_it == state_.instances.end())
    throw Error(ErrorCode::UnknownInstance, "unknown instance " + instance_id);
  CsActivitySession probe = session_of(inst_it->second, activity_id);
  abandon_execution(probe, execution_id, now);
  commit(now, instance_id, "ExecutionAbandoned",
         {{"activity_id", activity_id}, {"execution_id", execution_id}});
  return *state_.instances.at(instance_id).sessions.at(activity_id).find(execution_id);
}

const CsActivitySession& Engine::session(const std::string& instance_id,
                                         const std::string& activity_id) const {
  auto it = state_.instances.find(instance_id);
  if (it == state_.instances.end())
    throw Error(ErrorCode::UnknownInstance, "unknown instance " + instance_id);
  return session_of(it->second, activity_id);
}

AggregatedResult Engine::aggregate(const std::string& instance_id, const std::string& activity_id,
                                   const std::optional<std::vector<std::string>>& selection,
                                   LogicalTime now, const Actor& actor) {
  advance_clock(now);
  auto it = state_.instances.find(instance_id);
  if (it == state_.instances.end())
    throw Error(ErrorCode::UnknownInstance, "unknown instance " + instance_id);
  const auto& inst = it->second;
  if (!actor.is_system() && actor.id != inst.initiator)
    throw Error(ErrorCode::AuthorizationDenied, "only the process owner may aggregate");
  auto sit = inst.sessions.find(activity_id);
  if (sit == inst.sessions.end()) {
    activity_of(inst, activity_id);
    throw Error(ErrorCode::SessionNotClosed, "activity " + activity_id + " has no session");
  }
  const auto& s = sit->second;

  if (s.aggregated) {
    if (selection) throw Error(ErrorCode::IllegalState, "results of " + activity_id + " already aggregated");
    AggregatedResult stored;
    for (const auto* sub : s.submissions())
      (sub->accepted.value_or(false) ? stored.accepted : stored.rejected).push_back(sub->execution_id);
    return stored;
  }
  auto result = crowdflow::aggregate(s, s.config.aggregation, selection);
  if (inst.state != ProcessState::Running)
    throw Error(ErrorCode::IllegalState, "instance " + instance_id + " is not RUNNING");
  commit(now, instance_id, "ResultsAggregated",
         {{"activity_id", activity_id},
          {"accepted", ids_json(result.accepted)},
          {"rejected", ids_json(result.rejected)}});
  const auto& closed = state_.instances.at(instance_id).sessions.at(activity_id);
  emit_completion(instance_id, activity_id, aggregated_payloads(closed, result), now);
  return result;
}

// ---------------------------------------------------------------------------
// delegation

ActivityInstance Engine::delegate_start(const std::string& instance_id,
                                        const std::string& activity_id, const Actor& actor,
                                        const std::string& note, LogicalTime now) {
  advance_clock(now);
  const auto& inst = running_instance(instance_id);
  const auto& a = activity_of(inst, activity_id);
  if (a.kind != TaskKind::Delegated) throw Error(ErrorCode::IllegalState, activity_id + " is not DELEGATED");
  if (a.state != ActivityState::Available) illegal(a, "AVAILABLE");
  if (!actor.is_system() && !directory_.contains(actor.id))
    throw Error(ErrorCode::UnknownUser, "unknown internal user " + actor.id);
  commit(now, instance_id, "DelegationStarted",
         {{"activity_id", activity_id}, {"actor", actor.id}, {"note", note}});
  return state_.instances.at(instance_id).activities.at(activity_id);
}

RoutingOutcome Engine::delegate_finish(const std::string& instance_id,
                                       const std::string& activity_id, const Actor& actor,
                                       Json result, LogicalTime now) {
  advance_clock(now);
  const auto& inst = running_instance(instance_id);
  const auto& a = activity_of(inst, activity_id);
  if (a.kind != TaskKind::Delegated) throw Error(ErrorCode::IllegalState, activity_id + " is not DELEGATED");
  if (a.state != ActivityState::Active) illegal(a, "ACTIVE");
  if (!actor.is_system() && !directory_.contains(actor.id))
    throw Error(ErrorCode::UnknownUser, "unknown internal user " + actor.id);
  commit(now, instance_id, "DelegationFinished",
         {{"activity_id", activity_id}, {"actor", actor.id}, {"result", result}});
  return emit_completion(instance_id, activity_id, std::move(result), now);
}

// ---------------------------------------------------------------------------
// external users

namespace {
bool blank(const std::string& s) {
  return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
}
}  // namespace

ExternalUser Engine::register_external(const std::string& display_name, const std::string& contact,
                                       LogicalTime now) {
  advance_clock(now);
  if (blank(display_name) || blank(contact))
    throw Error(ErrorCode::InvalidRegistration, "display_name and contact must be non-empty");
  const auto id = format_id("u", state_.user_counter + 1);
  commit(now, std::nullopt, "UserRegistered",
         {{"user_id", id},
          {"display_name", display_name},
          {"contact", contact},
          {"consent_expiry", now + options_.retention_span}});
  return state_.users.at(id);
}

std::size_t Engine::purge_expired_users(LogicalTime now) {
  advance_clock(now);
  std::vector<std::string> expired;
  for (const auto& [id, u] : state_.users)
    if (!u.purged && u.consent_expiry <= now) expired.push_back(id);
  for (const auto& id : expired) commit(now, std::nullopt, "UserPurged", {{"user_id", id}});
  return expired.size();
}

// ---------------------------------------------------------------------------
// time

std::vector<DeadlineFiring> Engine::advance_clock(LogicalTime now) {
  if (now < clock_)
    throw Error(ErrorCode::ClockRegression,
                "t=" + std::to_string(now) + " is before engine time " + std::to_string(clock_));
  clock_ = now;
  std::vector<DeadlineFiring> fired;
  for (;;) {
    std::optional<std::tuple<LogicalTime, std::string, std::string>> due;
    for (const auto& [iid, inst] : state_.instances) {
      if (inst.state != ProcessState::Running) continue;
      for (const auto& [aid, s] : inst.sessions) {
        if (s.status != SessionStatus::Open || s.deadline > now) continue;
        auto key = std::make_tuple(s.deadline, iid, aid);
        if (!due || key < *due) due = key;
      }
    }
    if (!due) break;
    fired.push_back(fire_deadline(std::get<1>(*due), std::get<2>(*due), std::get<0>(*due)));
  }
  return fired;
}

DeadlineFiring Engine::fire_deadline(const std::string& instance_id, const std::string& activity_id,
                                     LogicalTime at) {
  const auto plan = plan_deadline(state_.instances.at(instance_id).sessions.at(activity_id), at);
  for (const auto& exec : plan.force_terminate)
    commit(at, instance_id, "ExecutionForceTerminated",
           {{"activity_id", activity_id}, {"execution_id", exec}});

  DeadlineFiring firing{instance_id, activity_id, at, plan.decision, plan.force_terminate};
  if (plan.decision == SessionOutcomeKind::Extended) {
    const auto& s = state_.instances.at(instance_id).sessions.at(activity_id);
    commit(at, instance_id, "SessionExtended",
           {{"activity_id", activity_id},
            {"deadline", plan.new_deadline},
            {"extensions_used", s.extensions_used + 1}});
    return firing;
  }
  commit(at, instance_id, "SessionClosed",
         {{"activity_id", activity_id},
          {"outcome", to_string(plan.decision)},
          {"submissions", ids_json(plan.submissions)}});
  if (plan.decision == SessionOutcomeKind::Failed) {
    abort_sessions(instance_id, at, activity_id);
    emit_failure(instance_id, activity_id, "session closed with too few results", at);
  } else {
    finish_session(instance_id, activity_id, at);
  }
  return firing;
}

void Engine::finish_session(const std::string& instance_id, const std::string& activity_id,
                            LogicalTime at) {
  const auto& s = state_.instances.at(instance_id).sessions.at(activity_id);
  const bool owner_choice = std::holds_alternative<AggregateOwnerSelect>(s.config.aggregation);
  const auto subs = s.submissions();
  if (owner_choice && !subs.empty()) return;  // waits for the owner's selection
  const auto result = owner_choice ? crowdflow::aggregate(s, s.config.aggregation, std::vector<std::string>{})
                                   : crowdflow::aggregate(s, s.config.aggregation);
  commit(at, instance_id, "ResultsAggregated",
         {{"activity_id", activity_id},
          {"accepted", ids_json(result.accepted)},
          {"rejected", ids_json(result.rejected)}});
  const auto& closed = state_.instances.at(instance_id).sessions.at(activity_id);
  emit_completion(instance_id, activity_id, aggregated_payloads(closed, result), at);
}

}  // namespace crowdflow
