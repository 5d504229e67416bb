#pragma once

// Deterministic simulated crowd. A seeded population (worker / employer /
// both, in platform proportions) drives the engine through public operations
// only: employers start instances and handle internal steps, workers claim
// OPEN crowdsourcing tasks, then submit, abandon or simply run out of time.

#include <cstdint>
#include <string>
#include <vector>

#include "crowdflow/enactment.hpp"

namespace crowdflow::sim {

enum class Role { WorkerOnly, EmployerOnly, Both };
std::string_view to_string(Role role);

struct RoleMix {
  double worker_only = 0.9052;
  double employer_only = 0.0359;
  double both = 0.0589;
};

struct SimConfig {
  std::uint64_t seed = 1;
  std::int64_t population_size = 1000;
  RoleMix role_mix;
  /// Probability per tick that an OPEN session receives a claim attempt
  /// (geometric inter-claim times with mean 1/claim_rate). 0 disables claims.
  double claim_rate = 0.05;
  double completion_prob = 0.7;  // claimant submits before the deadline
  double abandon_prob = 0.0;     // non-completing claimant walks away explicitly
  double work_time_p = 0.05;     // geometric time-to-submit, success prob per tick
  LogicalTime horizon = 2000;
  std::int64_t instances = 20;
  LogicalTime instance_interval = 10;
  std::vector<std::string> definition_files;  // used by the CLI only
};

/// Reads a config document. Throws Error(SyntaxError / InvalidArgument).
SimConfig parse_sim_config(const Json& document);
void validate(const SimConfig& config);

struct SimUser {
  std::int64_t index = 0;
  Role role = Role::WorkerOnly;
};

std::vector<SimUser> generate_population(const SimConfig& config);

struct SessionRow {
  std::string session_id;  // "<instance_id>.<activity_id>"
  LogicalTime opened_at = 0;
  LogicalTime deadline = 0;
  std::int64_t claims = 0;
  std::int64_t submissions = 0;
  std::int64_t force_terminated = 0;
  std::int64_t abandoned = 0;
  std::string outcome;  // COMPLETE | FAILED | ABORTED | OPEN
};

struct SimReport {
  std::uint64_t seed = 0;
  std::int64_t population = 0;
  std::int64_t worker_only = 0;
  std::int64_t employer_only = 0;
  std::int64_t both = 0;
  std::int64_t instances_started = 0;
  std::int64_t instances_completed = 0;
  std::int64_t instances_failed = 0;
  std::int64_t tasks_opened = 0;
  std::int64_t claims = 0;
  std::int64_t submissions = 0;
  std::int64_t force_terminated = 0;
  std::int64_t abandoned = 0;
  std::int64_t zero_claim_sessions = 0;
  std::vector<SessionRow> sessions;
};

struct SimResult {
  SimReport report;
  Engine engine;
};

/// Runs the full simulation and keeps the engine (state + event log).
SimResult simulate(const SimConfig& config, const std::vector<ProcessDefinition>& definitions);
SimReport run(const SimConfig& config, const std::vector<ProcessDefinition>& definitions);

/// Recomputes a report from the final engine state.
SimReport summarize(const SimConfig& config, const std::vector<SimUser>& population,
                    const SystemState& state);

struct RenderedReport {
  std::string text;
  std::string csv;
};

RenderedReport report_render(const SimReport& report);

inline constexpr std::string_view kCsvHeader =
    "session_id,opened_at,deadline,claims,submissions,force_terminated,abandoned,outcome";

}  // namespace crowdflow::sim
