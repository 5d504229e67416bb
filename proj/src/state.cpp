#include "crowdflow/state.hpp"

#include <cstdio>

#include "crowdflow/error.hpp"

namespace crowdflow {

std::string_view to_string(ProcessState state) {
  switch (state) {
    case ProcessState::Running: return "RUNNING";
    case ProcessState::Completed: return "COMPLETED";
    case ProcessState::Failed: return "FAILED";
    case ProcessState::Terminated: return "TERMINATED";
  }
  return "?";
}

std::string_view to_string(ActivityState state) {
  switch (state) {
    case ActivityState::Inactive: return "INACTIVE";
    case ActivityState::Available: return "AVAILABLE";
    case ActivityState::Active: return "ACTIVE";
    case ActivityState::Open: return "OPEN";
    case ActivityState::Completed: return "COMPLETED";
    case ActivityState::ForceTerminated: return "FORCE_TERMINATED";
    case ActivityState::Failed: return "FAILED";
    case ActivityState::Skipped: return "SKIPPED";
  }
  return "?";
}

std::optional<ProcessState> parse_process_state(std::string_view text) {
  for (auto s : {ProcessState::Running, ProcessState::Completed, ProcessState::Failed,
                 ProcessState::Terminated})
    if (to_string(s) == text) return s;
  return std::nullopt;
}

std::optional<ActivityState> parse_activity_state(std::string_view text) {
  for (auto s : {ActivityState::Inactive, ActivityState::Available, ActivityState::Active,
                 ActivityState::Open, ActivityState::Completed, ActivityState::ForceTerminated,
                 ActivityState::Failed, ActivityState::Skipped})
    if (to_string(s) == text) return s;
  return std::nullopt;
}

bool is_terminal(ActivityState state) {
  return state == ActivityState::Completed || state == ActivityState::ForceTerminated ||
         state == ActivityState::Failed || state == ActivityState::Skipped;
}

bool is_legal_transition(TaskKind kind, ActivityState from, ActivityState to) {
  using S = ActivityState;
  const bool cs = kind == TaskKind::Crowdsourced;
  if (to == S::Skipped) return !is_terminal(from);
  if (from == S::Inactive) return to == S::Available;
  if (from == S::Available) return cs ? to == S::Open : to == S::Active;
  if (from == S::Active) return !cs && (to == S::Completed || to == S::Failed);
  if (from == S::Open) return cs && (to == S::Completed || to == S::Failed);
  return false;
}

std::string format_id(std::string_view prefix, std::uint64_t number) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06llu", static_cast<unsigned long long>(number));
  return std::string(prefix) + "-" + buf;
}

namespace {

template <typename T>
Json opt(const std::optional<T>& v) {
  return v ? Json(*v) : Json(nullptr);
}

[[noreturn]] void corrupt(const std::string& what) {
  throw Error(ErrorCode::CorruptSnapshot, "corrupt state document: " + what);
}

template <typename Enum, typename Parser>
Enum enum_field(const Json& node, const char* key, Parser parse) {
  auto value = parse(node.at(key).get<std::string>());
  if (!value) corrupt(std::string("bad enum value for '") + key + "'");
  return *value;
}

std::optional<LogicalTime> opt_time(const Json& node, const char* key) {
  const auto& v = node.at(key);
  if (v.is_null()) return std::nullopt;
  return v.get<LogicalTime>();
}

ActivityInstance activity_from_json(const Json& j) {
  ActivityInstance a;
  a.activity_id = j.at("activity_id").get<std::string>();
  auto kind = parse_task_kind(j.at("kind").get<std::string>());
  if (!kind) corrupt("bad activity kind");
  a.kind = *kind;
  a.state = enum_field<ActivityState>(j, "state", parse_activity_state);
  a.available_at = opt_time(j, "available_at");
  a.started_at = opt_time(j, "started_at");
  a.finished_at = opt_time(j, "finished_at");
  if (!j.at("assignee").is_null()) a.assignee = j.at("assignee").get<std::string>();
  if (j.at("has_result").get<bool>()) a.result = j.at("result");
  return a;
}

ExecutionCopy execution_from_json(const Json& j) {
  ExecutionCopy e;
  e.execution_id = j.at("execution_id").get<std::string>();
  e.worker = j.at("worker").get<std::string>();
  e.state = enum_field<ExecState>(j, "state", parse_exec_state);
  e.claimed_at = j.at("claimed_at").get<LogicalTime>();
  e.finished_at = opt_time(j, "finished_at");
  if (!j.at("submission").is_null()) {
    const auto& s = j.at("submission");
    Submission sub;
    sub.execution_id = e.execution_id;
    sub.payload = s.at("payload");
    sub.submitted_at = s.at("submitted_at").get<LogicalTime>();
    if (!s.at("accepted").is_null()) sub.accepted = s.at("accepted").get<bool>();
    e.submission = std::move(sub);
  }
  return e;
}

CsActivitySession session_from_json(const Json& j) {
  CsActivitySession s;
  s.instance_id = j.at("instance_id").get<std::string>();
  s.activity_id = j.at("activity_id").get<std::string>();
  s.config = decode_cs_config(j.at("config"));
  s.opened_at = j.at("opened_at").get<LogicalTime>();
  s.deadline = j.at("deadline").get<LogicalTime>();
  s.status = enum_field<SessionStatus>(j, "status", parse_session_status);
  for (const auto& e : j.at("executions")) s.executions.push_back(execution_from_json(e));
  s.extensions_used = j.at("extensions_used").get<std::int64_t>();
  if (!j.at("outcome").is_null()) s.outcome = enum_field<SessionOutcomeKind>(j, "outcome", parse_session_outcome);
  s.closed_at = opt_time(j, "closed_at");
  s.aggregated = j.at("aggregated").get<bool>();
  return s;
}

}  // namespace

Json to_json(const ActivityInstance& a) {
  return {{"activity_id", a.activity_id},
          {"kind", to_string(a.kind)},
          {"state", to_string(a.state)},
          {"available_at", opt(a.available_at)},
          {"started_at", opt(a.started_at)},
          {"finished_at", opt(a.finished_at)},
          {"assignee", opt(a.assignee)},
          {"has_result", a.result.has_value()},
          {"result", a.result ? *a.result : Json(nullptr)}};
}

Json to_json(const ExecutionCopy& e) {
  Json sub = nullptr;
  if (e.submission)
    sub = {{"payload", e.submission->payload},
           {"submitted_at", e.submission->submitted_at},
           {"accepted", opt(e.submission->accepted)}};
  return {{"execution_id", e.execution_id},
          {"worker", e.worker},
          {"state", to_string(e.state)},
          {"claimed_at", e.claimed_at},
          {"finished_at", opt(e.finished_at)},
          {"submission", sub}};
}

Json to_json(const CsActivitySession& s) {
  Json execs = Json::array();
  for (const auto& e : s.executions) execs.push_back(to_json(e));
  return {{"instance_id", s.instance_id},
          {"activity_id", s.activity_id},
          {"config", to_json(s.config)},
          {"opened_at", s.opened_at},
          {"deadline", s.deadline},
          {"status", to_string(s.status)},
          {"executions", std::move(execs)},
          {"extensions_used", s.extensions_used},
          {"outcome", s.outcome ? Json(to_string(*s.outcome)) : Json(nullptr)},
          {"closed_at", opt(s.closed_at)},
          {"aggregated", s.aggregated}};
}

Json to_json(const ProcessInstance& p) {
  Json activities = Json::object();
  for (const auto& [id, a] : p.activities) activities[id] = to_json(a);
  Json sessions = Json::object();
  for (const auto& [id, s] : p.sessions) sessions[id] = to_json(s);
  Json data = Json::object();
  for (const auto& [k, v] : p.data) data[k] = v;
  return {{"id", p.id},
          {"definition_id", p.definition_id},
          {"initiator", p.initiator},
          {"state", to_string(p.state)},
          {"activities", std::move(activities)},
          {"sessions", std::move(sessions)},
          {"data", std::move(data)},
          {"created_at", p.created_at},
          {"finished_at", opt(p.finished_at)}};
}

Json to_json(const ExternalUser& u) {
  return {{"user_id", u.user_id},
          {"display_name", u.display_name},
          {"contact", u.contact},
          {"registered_at", u.registered_at},
          {"consent_expiry", u.consent_expiry},
          {"purged", u.purged}};
}

Json to_json(const SystemState& s) {
  Json defs = Json::object();
  for (const auto& [id, d] : s.definitions) defs[id] = to_json(d);
  Json instances = Json::object();
  for (const auto& [id, p] : s.instances) instances[id] = to_json(p);
  Json users = Json::object();
  for (const auto& [id, u] : s.users) users[id] = to_json(u);
  return {{"definitions", std::move(defs)},
          {"instances", std::move(instances)},
          {"users", std::move(users)},
          {"last_seq", s.last_seq},
          {"last_event_at", s.last_event_at},
          {"counters",
           {{"instance", s.instance_counter},
            {"execution", s.execution_counter},
            {"user", s.user_counter}}}};
}

SystemState system_state_from_json(const Json& j) {
  try {
    SystemState s;
    for (const auto& [id, d] : j.at("definitions").items()) s.definitions.emplace(id, decode_definition(d));
    for (const auto& [id, node] : j.at("instances").items()) {
      ProcessInstance p;
      p.id = node.at("id").get<std::string>();
      p.definition_id = node.at("definition_id").get<std::string>();
      p.initiator = node.at("initiator").get<std::string>();
      p.state = enum_field<ProcessState>(node, "state", parse_process_state);
      for (const auto& [aid, a] : node.at("activities").items()) p.activities.emplace(aid, activity_from_json(a));
      for (const auto& [aid, sn] : node.at("sessions").items()) p.sessions.emplace(aid, session_from_json(sn));
      for (const auto& [k, v] : node.at("data").items()) p.data.emplace(k, v);
      p.created_at = node.at("created_at").get<LogicalTime>();
      p.finished_at = opt_time(node, "finished_at");
      if (p.id != id) corrupt("instance key mismatch");
      s.instances.emplace(id, std::move(p));
    }
    for (const auto& [id, u] : j.at("users").items()) {
      ExternalUser user;
      user.user_id = u.at("user_id").get<std::string>();
      user.display_name = u.at("display_name").get<std::string>();
      user.contact = u.at("contact").get<std::string>();
      user.registered_at = u.at("registered_at").get<LogicalTime>();
      user.consent_expiry = u.at("consent_expiry").get<LogicalTime>();
      user.purged = u.at("purged").get<bool>();
      if (user.user_id != id) corrupt("user key mismatch");
      s.users.emplace(id, std::move(user));
    }
    s.last_seq = j.at("last_seq").get<std::uint64_t>();
    s.last_event_at = j.at("last_event_at").get<LogicalTime>();
    const auto& c = j.at("counters");
    s.instance_counter = c.at("instance").get<std::uint64_t>();
    s.execution_counter = c.at("execution").get<std::uint64_t>();
    s.user_counter = c.at("user").get<std::uint64_t>();
    return s;
  } catch (const Error& e) {
    if (e.code() == ErrorCode::CorruptSnapshot) throw;
    corrupt(e.what());
  } catch (const Json::exception& e) {
    corrupt(e.what());
  }
}

}  // namespace crowdflow
