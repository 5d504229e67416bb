#include "crowdflow/worklist.hpp"

#include <algorithm>

#include "crowdflow/error.hpp"

namespace crowdflow {

std::string make_item_id(const std::string& instance_id, const std::string& activity_id) {
  return instance_id + "." + activity_id;
}

std::optional<std::pair<std::string, std::string>> split_item_id(const std::string& item_id) {
  const auto dot = item_id.find('.');
  if (dot == std::string::npos || dot == 0 || dot + 1 == item_id.size()) return std::nullopt;
  return std::make_pair(item_id.substr(0, dot), item_id.substr(dot + 1));
}

Json to_json(const WorkItem& item) {
  return {{"item_id", item.item_id},
          {"instance_id", item.instance_id},
          {"activity_id", item.activity_id},
          {"kind", to_string(item.kind)},
          {"visibility", item.visibility == Visibility::Public ? "PUBLIC" : "INTERNAL"},
          {"role", item.role ? Json(*item.role) : Json(nullptr)},
          {"description", item.description},
          {"deadline", item.deadline ? Json(*item.deadline) : Json(nullptr)},
          {"status", item.status},
          {"created_at", item.created_at},
          {"executions", item.executions},
          {"instructions", item.instructions}};
}

namespace {

void sort_items(std::vector<WorkItem>& items) {
  std::sort(items.begin(), items.end(), [](const WorkItem& a, const WorkItem& b) {
    if (a.created_at != b.created_at) return a.created_at < b.created_at;
    return a.item_id < b.item_id;
  });
}

}  // namespace

std::vector<WorkItem> list_for_user(const SystemState& state, const Directory& directory,
                                    const std::string& user_id) {
  if (!directory.contains(user_id)) throw Error(ErrorCode::UnknownUser, "unknown internal user " + user_id);
  std::vector<WorkItem> items;
  for (const auto& [iid, inst] : state.instances) {
    if (inst.state != ProcessState::Running) continue;
    const auto& def = state.definitions.at(inst.definition_id);
    for (const auto& adef : def.activities) {
      const auto& a = inst.activities.at(adef.id);
      bool listed = false;
      if (a.kind == TaskKind::Human) {
        listed = (a.state == ActivityState::Available && directory.holds(user_id, *adef.role)) ||
                 (a.state == ActivityState::Active && a.assignee == user_id);
      } else if (a.kind == TaskKind::Delegated) {
        listed = a.state == ActivityState::Available || a.state == ActivityState::Active;
      }
      if (!listed) continue;
      WorkItem item;
      item.item_id = make_item_id(iid, a.activity_id);
      item.instance_id = iid;
      item.activity_id = a.activity_id;
      item.kind = a.kind;
      item.visibility = Visibility::Internal;
      item.role = adef.role;
      item.description = adef.description;
      item.status = std::string(to_string(a.state));
      item.created_at = a.available_at.value_or(inst.created_at);
      items.push_back(std::move(item));
    }
  }
  sort_items(items);
  return items;
}

std::vector<WorkItem> list_public(const SystemState& state) {
  std::vector<WorkItem> items;
  for (const auto& [iid, inst] : state.instances) {
    if (inst.state != ProcessState::Running) continue;
    const auto& def = state.definitions.at(inst.definition_id);
    for (const auto& [aid, s] : inst.sessions) {
      if (s.status != SessionStatus::Open) continue;
      const auto* adef = def.find_activity(aid);
      WorkItem item;
      item.item_id = make_item_id(iid, aid);
      item.instance_id = iid;
      item.activity_id = aid;
      item.kind = TaskKind::Crowdsourced;
      item.visibility = Visibility::Public;
      item.description = adef->description;
      item.deadline = s.deadline;
      item.status = std::string(to_string(s.status));
      item.created_at = s.opened_at;
      item.executions = s.executions.size();
      item.instructions = s.config.instructions;
      items.push_back(std::move(item));
    }
  }
  sort_items(items);
  return items;
}

// ---------------------------------------------------------------------------

std::vector<WorkItem> Worklist::list_for_user(const std::string& user_id) const {
  return crowdflow::list_for_user(engine_.state(), engine_.directory(), user_id);
}

std::vector<WorkItem> Worklist::list_public() const { return crowdflow::list_public(engine_.state()); }

ExternalUser Worklist::register_external(const std::string& display_name, const std::string& contact,
                                         LogicalTime now) {
  return engine_.register_external(display_name, contact, now);
}

std::pair<std::string, std::string> Worklist::public_item(const std::string& item_id) const {
  auto parts = split_item_id(item_id);
  if (!parts) throw Error(ErrorCode::UnknownItem, "unknown item " + item_id);
  const auto& instances = engine_.state().instances;
  auto it = instances.find(parts->first);
  if (it == instances.end()) throw Error(ErrorCode::UnknownItem, "unknown item " + item_id);
  auto a = it->second.activities.find(parts->second);
  if (a == it->second.activities.end() || a->second.kind != TaskKind::Crowdsourced)
    throw Error(ErrorCode::UnknownItem, "unknown item " + item_id);
  return *parts;
}

namespace {

void require_registered(const SystemState& state, const std::string& user) {
  auto it = state.users.find(user);
  if (it == state.users.end() || it->second.purged)
    throw Error(ErrorCode::UnknownUser, "unknown external user " + user);
}

}  // namespace

void Worklist::require_owner(const std::string& item_id, const std::string& execution_id,
                             const std::string& external_user) const {
  auto [iid, aid] = public_item(item_id);
  require_registered(engine_.state(), external_user);
  const auto& s = engine_.session(iid, aid);
  const auto* copy = s.find(execution_id);
  if (!copy) throw Error(ErrorCode::UnknownExecution, "unknown execution " + execution_id);
  if (copy->worker != external_user)
    throw Error(ErrorCode::AuthorizationDenied, "execution " + execution_id + " belongs to another worker");
}

ExecutionCopy Worklist::claim_public(const std::string& item_id, const std::string& external_user,
                                     LogicalTime now) {
  auto [iid, aid] = public_item(item_id);
  require_registered(engine_.state(), external_user);
  return engine_.claim(iid, aid, external_user, now);
}

Submission Worklist::submit_public(const std::string& item_id, const std::string& execution_id,
                                   const std::string& external_user, Json payload, LogicalTime now) {
  require_owner(item_id, execution_id, external_user);
  auto [iid, aid] = public_item(item_id);
  return engine_.submit(iid, aid, execution_id, std::move(payload), now);
}

ExecutionCopy Worklist::abandon_public(const std::string& item_id, const std::string& execution_id,
                                       const std::string& external_user, LogicalTime now) {
  require_owner(item_id, execution_id, external_user);
  auto [iid, aid] = public_item(item_id);
  return engine_.abandon(iid, aid, execution_id, now);
}

ActivityInstance Worklist::delegate_start(const std::string& instance_id,
                                          const std::string& activity_id, const Actor& actor,
                                          const std::string& note, LogicalTime now) {
  return engine_.delegate_start(instance_id, activity_id, actor, note, now);
}

RoutingOutcome Worklist::delegate_finish(const std::string& instance_id,
                                         const std::string& activity_id, const Actor& actor,
                                         Json result, LogicalTime now) {
  return engine_.delegate_finish(instance_id, activity_id, actor, std::move(result), now);
}

std::size_t Worklist::purge_expired_users(LogicalTime now) { return engine_.purge_expired_users(now); }

}  // namespace crowdflow
