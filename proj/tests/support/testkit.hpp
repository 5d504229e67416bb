#pragma once

// Fixtures and independent oracles shared by the unit tests and the
// acceptance runner. Nothing here calls into the engine's own legality or
// admission helpers: each oracle restates its rule from scratch.

#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "crowdflow/enactment.hpp"
#include "crowdflow/eventstore.hpp"
#include "crowdflow/worklist.hpp"

namespace testkit {

using namespace crowdflow;

std::string source_path(const std::string& relative);
std::string read_file(const std::string& path);
ProcessDefinition load_definition(const std::string& relative);

CsConfig cs_config(LogicalTime duration, AggregationPolicy aggregation = AggregateAll{},
                   ZeroPolicy zero = ZeroCompleteEmpty{}, std::optional<std::int64_t> max_executions = std::nullopt,
                   std::int64_t min_results = 0);

/// Linear chain a1 -> a2 -> ... with the given kinds. HUMAN uses role "clerk",
/// AUTOMATIC uses app "app", CS uses `cs`.
ProcessDefinition sequence_definition(const std::string& id, const std::vector<TaskKind>& kinds,
                                      const CsConfig& cs = cs_config(90));

/// a -> {b, c} -> d with PARALLEL split and join.
ProcessDefinition diamond_definition(const std::string& id, TaskKind b, TaskKind c,
                                     const CsConfig& cs = cs_config(90));

/// "alice" holds every role the fixtures use, "bob" only "clerk", "carol" none.
Directory staff();

// --- transition table monitor ----------------------------------------------

/// The legal activity transitions, restated independently of the engine.
bool oracle_legal(TaskKind kind, ActivityState from, ActivityState to);

struct TransitionMonitor {
  std::vector<std::string> violations;
  std::vector<TransitionRecord> records;
  TransitionObserver observer();
};

// --- mesam reference predicate ---------------------------------------------

/// spawn succeeds iff OPEN, now < deadline, capacity left, and no ACTIVE copy
/// of the same worker.
bool reference_spawn_ok(const CsActivitySession& session, const std::string& worker, LogicalTime now);

// --- log-only accounting ----------------------------------------------------

/// Tracks ACTIVE copies per session purely from event payloads and records a
/// violation whenever a SessionClosed event arrives while one is still active.
class ActiveCopyLedger {
 public:
  void feed(const Event& e);
  const std::vector<std::string>& violations() const { return violations_; }
  std::size_t sessions_closed() const { return closed_; }

 private:
  std::map<std::string, std::set<std::string>> active_;  // "<iid>.<aid>" -> exec ids
  std::vector<std::string> violations_;
  std::size_t closed_ = 0;
};

/// Projects the log onto each DELEGATED activity (events whose payload names
/// it) and reports any run whose projection is not a prefix of
/// DelegationStarted, DelegationFinished, ActivityCompleted, or where the
/// completion does not directly follow the finish marker in the global log.
std::vector<std::string> delegation_violations(const std::vector<Event>& log, const SystemState& state);

// --- randomized command driver ---------------------------------------------

struct DriverConfig {
  std::size_t commands = 80;
  std::size_t workers = 4;
  double terminate_prob = 0.01;
};

struct DriverStats {
  std::size_t accepted = 0;
  std::size_t rejected = 0;
};

/// Issues random (often invalid) commands against `engine`. The engine's
/// definitions must already be registered; its directory should be staff().
/// `after_command` runs after every command, accepted or not.
DriverStats drive_random(Engine& engine, std::mt19937_64& rng, const DriverConfig& config,
                         const std::function<void()>& after_command = {});

/// Definitions used by randomized runs: the shipped documents plus variants
/// covering every aggregation and zero policy.
std::vector<ProcessDefinition> random_run_definitions();

}  // namespace testkit
