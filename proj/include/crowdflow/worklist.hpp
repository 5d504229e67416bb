#pragma once

// Worklist handler: role-scoped work items for defined users, a public board
// of crowdsourcing tasks for undefined external users, on-demand
// registration of those users, and the manual delegation mode.

#include <optional>
#include <string>
#include <vector>

#include "crowdflow/enactment.hpp"

namespace crowdflow {

enum class Visibility { Internal, Public };

struct WorkItem {
  std::string item_id;  // "<instance_id>.<activity_id>"
  std::string instance_id;
  std::string activity_id;
  TaskKind kind = TaskKind::Human;
  Visibility visibility = Visibility::Internal;
  std::optional<std::string> role;  // INTERNAL(role); nullopt for DELEGATED
  std::string description;
  std::optional<LogicalTime> deadline;
  std::string status;  // activity state, or session status for PUBLIC items
  LogicalTime created_at = 0;
  std::size_t executions = 0;  // PUBLIC: copies spawned so far (informational)
  std::string instructions;     // PUBLIC only

  friend bool operator==(const WorkItem&, const WorkItem&) = default;
};

Json to_json(const WorkItem& item);

std::string make_item_id(const std::string& instance_id, const std::string& activity_id);
/// Splits an item id; nullopt when it is not of the form "<instance>.<activity>".
std::optional<std::pair<std::string, std::string>> split_item_id(const std::string& item_id);

// Listings are pure functions of a state snapshot.
std::vector<WorkItem> list_for_user(const SystemState& state, const Directory& directory,
                                    const std::string& user_id);
std::vector<WorkItem> list_public(const SystemState& state);

class Worklist {
 public:
  explicit Worklist(Engine& engine) : engine_(engine) {}

  std::vector<WorkItem> list_for_user(const std::string& user_id) const;
  std::vector<WorkItem> list_public() const;

  ExternalUser register_external(const std::string& display_name, const std::string& contact,
                                 LogicalTime now);
  ExecutionCopy claim_public(const std::string& item_id, const std::string& external_user,
                             LogicalTime now);
  Submission submit_public(const std::string& item_id, const std::string& execution_id,
                           const std::string& external_user, Json payload, LogicalTime now);
  ExecutionCopy abandon_public(const std::string& item_id, const std::string& execution_id,
                               const std::string& external_user, LogicalTime now);

  ActivityInstance delegate_start(const std::string& instance_id, const std::string& activity_id,
                                  const Actor& actor, const std::string& note, LogicalTime now);
  RoutingOutcome delegate_finish(const std::string& instance_id, const std::string& activity_id,
                                 const Actor& actor, Json result, LogicalTime now);

  std::size_t purge_expired_users(LogicalTime now);

 private:
  std::pair<std::string, std::string> public_item(const std::string& item_id) const;
  void require_owner(const std::string& item_id, const std::string& execution_id,
                     const std::string& external_user) const;

  Engine& engine_;
};

}  // namespace crowdflow
