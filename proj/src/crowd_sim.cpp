#include "crowdflow/crowd_sim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "crowdflow/error.hpp"
#include "crowdflow/worklist.hpp"

namespace crowdflow::sim {

std::string_view to_string(Role role) {
  switch (role) {
    case Role::WorkerOnly: return "worker_only";
    case Role::EmployerOnly: return "employer_only";
    case Role::Both: return "both";
  }
  return "?";
}

namespace {

void invalid(const std::string& message) { throw Error(ErrorCode::InvalidArgument, message); }

bool is_probability(double p) { return std::isfinite(p) && p >= 0.0 && p <= 1.0; }

}  // namespace

void validate(const SimConfig& c) {
  if (c.population_size <= 0) invalid("population_size must be positive");
  const auto& m = c.role_mix;
  if (!is_probability(m.worker_only) || !is_probability(m.employer_only) || !is_probability(m.both))
    invalid("role_mix entries must lie in [0, 1]");
  if (std::abs(m.worker_only + m.employer_only + m.both - 1.0) > 1e-9) invalid("role_mix must sum to 1");
  if (!is_probability(c.claim_rate)) invalid("claim_rate must lie in [0, 1]");
  if (!is_probability(c.completion_prob)) invalid("completion_prob must lie in [0, 1]");
  if (!is_probability(c.abandon_prob)) invalid("abandon_prob must lie in [0, 1]");
  if (!(c.work_time_p > 0.0 && c.work_time_p <= 1.0)) invalid("work_time.p must lie in (0, 1]");
  if (c.horizon <= 0) invalid("horizon must be positive");
  if (c.instances < 0) invalid("instances must not be negative");
  if (c.instance_interval <= 0) invalid("instance_interval must be positive");
}

SimConfig parse_sim_config(const Json& doc) {
  static const std::set<std::string> known = {"seed",           "population_size", "role_mix",
                                              "claim_rate",     "completion_prob", "abandon_prob",
                                              "work_time",      "horizon",         "instances",
                                              "instance_interval", "definitions"};
  if (!doc.is_object()) throw Error(ErrorCode::SyntaxError, "simulation config must be an object");
  for (const auto& [key, _] : doc.items())
    if (!known.count(key)) throw Error(ErrorCode::SyntaxError, "unknown config key '" + key + "'");
  SimConfig c;
  try {
    c.seed = doc.value("seed", c.seed);
    c.population_size = doc.value("population_size", c.population_size);
    if (doc.contains("role_mix")) {
      const auto& m = doc.at("role_mix");
      c.role_mix.worker_only = m.at("worker_only").get<double>();
      c.role_mix.employer_only = m.at("employer_only").get<double>();
      c.role_mix.both = m.at("both").get<double>();
    }
    c.claim_rate = doc.value("claim_rate", c.claim_rate);
    c.completion_prob = doc.value("completion_prob", c.completion_prob);
    c.abandon_prob = doc.value("abandon_prob", c.abandon_prob);
    if (doc.contains("work_time")) c.work_time_p = doc.at("work_time").at("p").get<double>();
    c.horizon = doc.value("horizon", c.horizon);
    c.instances = doc.value("instances", c.instances);
    c.instance_interval = doc.value("instance_interval", c.instance_interval);
    if (doc.contains("definitions")) c.definition_files = doc.at("definitions").get<std::vector<std::string>>();
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::SyntaxError, std::string("bad simulation config: ") + e.what());
  }
  validate(c);
  return c;
}

std::vector<SimUser> generate_population(const SimConfig& config) {
  validate(config);
  std::mt19937_64 rng(config.seed);
  std::discrete_distribution<int> pick(
      {config.role_mix.worker_only, config.role_mix.employer_only, config.role_mix.both});
  std::vector<SimUser> users;
  users.reserve(static_cast<std::size_t>(config.population_size));
  for (std::int64_t i = 0; i < config.population_size; ++i)
    users.push_back({i, static_cast<Role>(pick(rng))});
  return users;
}

// ---------------------------------------------------------------------------

namespace {

struct Pending {
  enum Kind { Submit, Abandon } kind;
  std::string item_id;
  std::string execution_id;
  std::string worker;
};

std::string employer_id(std::int64_t index) { return "employer-" + std::to_string(index); }

class Runner {
 public:
  Runner(const SimConfig& config, const std::vector<ProcessDefinition>& definitions)
      : config_(config),
        definitions_(definitions),
        population_(generate_population(config)),
        rng_(config.seed ^ 0x9e3779b97f4a7c15ULL) {
    std::set<std::string> roles;
    for (const auto& d : definitions_)
      for (const auto& r : d.roles) roles.insert(r.id);
    Directory directory;
    for (const auto& u : population_) {
      if (u.role != Role::WorkerOnly) {
        directory.add(employer_id(u.index), roles);
        employers_.push_back(employer_id(u.index));
      }
      if (u.role != Role::EmployerOnly) workers_.push_back(u.index);
    }
    // A population without employers still needs someone to run internal steps.
    if (employers_.empty()) {
      directory.add("sim-owner", roles);
      employers_.push_back("sim-owner");
    }
    // Registrations never expire inside a run.
    EngineOptions options;
    options.retention_span = config.horizon + 1;
    engine_ = Engine(options, std::move(directory));
    for (const auto& d : definitions_) engine_.register_definition(d);
  }

  SimResult run() {
    std::int64_t started = 0;
    for (LogicalTime t = 0; t <= config_.horizon; ++t) {
      engine_.advance_clock(t);
      run_pending(t);
      if (started < config_.instances && t >= started * config_.instance_interval) {
        start_instance(started, t);
        ++started;
      }
      drive_instances(t);
      claims(t);
      run_pending(t);
    }
    SimResult result{summarize(config_, population_, engine_.state()), std::move(engine_)};
    return result;
  }

 private:
  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(rng_); }

  std::size_t pick_index(std::size_t size) {
    return std::uniform_int_distribution<std::size_t>(0, size - 1)(rng_);
  }

  void start_instance(std::int64_t ordinal, LogicalTime t) {
    if (definitions_.empty()) return;
    const auto& def = definitions_[static_cast<std::size_t>(ordinal) % definitions_.size()];
    const Actor initiator = Actor::user(employers_[pick_index(employers_.size())]);
    engine_.start_instance(def.id, initiator, t);
  }

  void drive_instances(LogicalTime t) {
    std::vector<std::string> ids;
    for (const auto& [iid, inst] : engine_.state().instances)
      if (inst.state == ProcessState::Running) ids.push_back(iid);
    for (const auto& iid : ids) drive(iid, t);
  }

  // The owner handles every internal step one tick after it became possible.
  void drive(const std::string& iid, LogicalTime t) {
    const ProcessInstance inst = engine_.state().instances.at(iid);
    const Actor owner = Actor{inst.initiator};
    const auto& def = engine_.definition(inst.definition_id);
    for (const auto& adef : def.activities) {
      if (engine_.state().instances.at(iid).state != ProcessState::Running) return;
      const auto& a = engine_.state().instances.at(iid).activities.at(adef.id);
      switch (a.kind) {
        case TaskKind::Human:
          if (a.state == ActivityState::Available && a.available_at < t) {
            engine_.begin_activity(iid, adef.id, owner, t);
          } else if (a.state == ActivityState::Active && a.started_at < t) {
            engine_.complete_activity(iid, adef.id, Json{{"done_by", owner.id}}, t, owner);
          }
          break;
        case TaskKind::Delegated:
          if (a.state == ActivityState::Available && a.available_at < t) {
            engine_.delegate_start(iid, adef.id, owner, "handled outside the system", t);
          } else if (a.state == ActivityState::Active && a.started_at < t) {
            engine_.delegate_finish(iid, adef.id, owner, Json{{"done_by", owner.id}}, t);
          }
          break;
        case TaskKind::Crowdsourced:
          if (a.state == ActivityState::Available && a.available_at < t) {
            engine_.begin_activity(iid, adef.id, owner, t);
          } else if (a.state == ActivityState::Open) {
            select_results(iid, adef, owner, t);
          }
          break;
        case TaskKind::Automatic:
          break;
      }
    }
  }

  void select_results(const std::string& iid, const ActivityDef& adef, const Actor& owner, LogicalTime t) {
    const auto& s = engine_.session(iid, adef.id);
    if (s.status != SessionStatus::Closed || s.aggregated || s.outcome != SessionOutcomeKind::Complete) return;
    const auto* policy = std::get_if<AggregateOwnerSelect>(&s.config.aggregation);
    if (!policy) return;
    std::vector<std::string> ids;
    for (const auto* sub : s.submissions()) ids.push_back(sub->execution_id);
    std::shuffle(ids.begin(), ids.end(), rng_);
    if (ids.size() > static_cast<std::size_t>(policy->k)) ids.resize(static_cast<std::size_t>(policy->k));
    engine_.aggregate(iid, adef.id, ids, t, owner);
  }

  void claims(LogicalTime t) {
    if (config_.claim_rate <= 0.0 || workers_.empty()) return;
    Worklist worklist(engine_);
    for (const auto& item : worklist.list_public()) {
      if (uniform() >= config_.claim_rate) continue;
      const auto index = workers_[pick_index(workers_.size())];
      const auto& s = engine_.session(item.instance_id, item.activity_id);
      auto known = registered_.find(index);
      if (known != registered_.end() && spawn_rejection(s, known->second, t)) continue;
      if (s.config.max_executions && static_cast<std::int64_t>(s.executions.size()) >= *s.config.max_executions)
        continue;
      if (known == registered_.end()) {
        auto user = worklist.register_external("worker " + std::to_string(index),
                                               "w" + std::to_string(index) + "@crowd.test", t);
        known = registered_.emplace(index, user.user_id).first;
      }
      const auto copy = worklist.claim_public(item.item_id, known->second, t);
      schedule(item, copy, t);
    }
  }

  void schedule(const WorkItem& item, const ExecutionCopy& copy, LogicalTime t) {
    const double fate = uniform();
    const auto work = 1 + std::geometric_distribution<LogicalTime>(config_.work_time_p)(rng_);
    const LogicalTime latest = *item.deadline - 1;
    const LogicalTime at = std::max(t, std::min(t + work, latest));
    if (fate < config_.completion_prob) {
      pending_.emplace(at, Pending{Pending::Submit, item.item_id, copy.execution_id, copy.worker});
    } else if (uniform() < config_.abandon_prob) {
      pending_.emplace(at, Pending{Pending::Abandon, item.item_id, copy.execution_id, copy.worker});
    }
  }

  void run_pending(LogicalTime t) {
    Worklist worklist(engine_);
    while (!pending_.empty() && pending_.begin()->first <= t) {
      const auto p = pending_.begin()->second;
      pending_.erase(pending_.begin());
      try {
        if (p.kind == Pending::Submit) {
          worklist.submit_public(p.item_id, p.execution_id, p.worker,
                                 Json{{"answer", "from " + p.worker}}, t);
        } else {
          worklist.abandon_public(p.item_id, p.execution_id, p.worker, t);
        }
      } catch (const Error& e) {
        // The session may have been aborted by a failure elsewhere in the instance.
        if (e.code() != ErrorCode::SessionClosed && e.code() != ErrorCode::IllegalState &&
            e.code() != ErrorCode::IllegalExecState)
          throw;
      }
    }
  }

  const SimConfig& config_;
  const std::vector<ProcessDefinition>& definitions_;
  std::vector<SimUser> population_;
  std::mt19937_64 rng_;
  std::vector<std::string> employers_;
  std::vector<std::int64_t> workers_;
  std::map<std::int64_t, std::string> registered_;  // population index -> external user id
  std::multimap<LogicalTime, Pending> pending_;
  Engine engine_;
};

}  // namespace

SimResult simulate(const SimConfig& config, const std::vector<ProcessDefinition>& definitions) {
  validate(config);
  if (config.instances > 0 && definitions.empty()) invalid("simulation needs at least one definition");
  return Runner(config, definitions).run();
}

SimReport run(const SimConfig& config, const std::vector<ProcessDefinition>& definitions) {
  return simulate(config, definitions).report;
}

SimReport summarize(const SimConfig& config, const std::vector<SimUser>& population,
                    const SystemState& state) {
  SimReport r;
  r.seed = config.seed;
  r.population = static_cast<std::int64_t>(population.size());
  for (const auto& u : population) {
    if (u.role == Role::WorkerOnly) ++r.worker_only;
    else if (u.role == Role::EmployerOnly) ++r.employer_only;
    else ++r.both;
  }
  for (const auto& [iid, inst] : state.instances) {
    ++r.instances_started;
    if (inst.state == ProcessState::Completed) ++r.instances_completed;
    if (inst.state == ProcessState::Failed) ++r.instances_failed;
    for (const auto& [aid, s] : inst.sessions) {
      SessionRow row;
      row.session_id = iid + "." + aid;
      row.opened_at = s.opened_at;
      row.deadline = s.deadline;
      row.claims = static_cast<std::int64_t>(s.executions.size());
      row.submissions = static_cast<std::int64_t>(s.count(ExecState::Completed));
      row.force_terminated = static_cast<std::int64_t>(s.count(ExecState::ForceTerminated));
      row.abandoned = static_cast<std::int64_t>(s.count(ExecState::Abandoned));
      row.outcome = s.outcome ? std::string(to_string(*s.outcome)) : "OPEN";
      ++r.tasks_opened;
      r.claims += row.claims;
      r.submissions += row.submissions;
      r.force_terminated += row.force_terminated;
      r.abandoned += row.abandoned;
      if (row.claims == 0) ++r.zero_claim_sessions;
      r.sessions.push_back(std::move(row));
    }
  }
  return r;
}

namespace {

std::string fixed(double value) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", value);
  return buf;
}

double ratio(std::int64_t a, std::int64_t b) { return b == 0 ? 0.0 : static_cast<double>(a) / static_cast<double>(b); }

}  // namespace

RenderedReport report_render(const SimReport& r) {
  std::ostringstream text;
  std::int64_t max_claims = 0;
  for (const auto& s : r.sessions) max_claims = std::max(max_claims, s.claims);
  text << "crowd simulation report\n"
       << "seed: " << r.seed << "\n"
       << "population: " << r.population << " (worker_only=" << r.worker_only
       << " employer_only=" << r.employer_only << " both=" << r.both << ")\n"
       << "role mix: worker_only=" << fixed(ratio(r.worker_only, r.population))
       << " employer_only=" << fixed(ratio(r.employer_only, r.population))
       << " both=" << fixed(ratio(r.both, r.population)) << "\n"
       << "instances: started=" << r.instances_started << " completed=" << r.instances_completed
       << " failed=" << r.instances_failed << "\n"
       << "tasks opened: " << r.tasks_opened << "\n"
       << "claims: " << r.claims << "\n"
       << "submissions: " << r.submissions << "\n"
       << "force terminated: " << r.force_terminated << "\n"
       << "abandoned: " << r.abandoned << "\n"
       << "zero-claim sessions: " << r.zero_claim_sessions << "\n"
       << "fill: mean claims/session=" << fixed(ratio(r.claims, r.tasks_opened))
       << " mean submissions/session=" << fixed(ratio(r.submissions, r.tasks_opened))
       << " max claims=" << max_claims << "\n";

  std::ostringstream csv;
  csv << kCsvHeader << "\n";
  for (const auto& s : r.sessions)
    csv << s.session_id << ',' << s.opened_at << ',' << s.deadline << ',' << s.claims << ','
        << s.submissions << ',' << s.force_terminated << ',' << s.abandoned << ',' << s.outcome << "\n";
  return {text.str(), csv.str()};
}

}  // namespace crowdflow::sim
