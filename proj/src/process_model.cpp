#include "crowdflow/process_model.hpp"

#include <algorithm>
#include <deque>
#include <initializer_list>

#include "crowdflow/error.hpp"

namespace crowdflow {

namespace {

[[noreturn]] void syntax_error(const std::string& where, const std::string& what) {
  throw Error(ErrorCode::SyntaxError, where.empty() ? what : where + ": " + what);
}

void expect_object(const Json& node, const std::string& where,
                   std::initializer_list<std::string_view> allowed) {
  if (!node.is_object()) syntax_error(where, "expected an object");
  for (const auto& [key, _] : node.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
      syntax_error(where, "unknown key '" + key + "'");
  }
}

const Json* member(const Json& node, const char* key) {
  auto it = node.find(key);
  return it == node.end() ? nullptr : &*it;
}

std::string get_string(const Json& node, const char* key, const std::string& where,
                       std::optional<std::string> fallback = std::nullopt) {
  const Json* v = member(node, key);
  if (!v) {
    if (fallback) return *fallback;
    syntax_error(where, std::string("missing key '") + key + "'");
  }
  if (!v->is_string()) syntax_error(where, std::string("'") + key + "' must be a string");
  return v->get<std::string>();
}

std::int64_t get_int(const Json& node, const char* key, const std::string& where,
                     std::optional<std::int64_t> fallback = std::nullopt) {
  const Json* v = member(node, key);
  if (!v) {
    if (fallback) return *fallback;
    syntax_error(where, std::string("missing key '") + key + "'");
  }
  if (!v->is_number_integer()) syntax_error(where, std::string("'") + key + "' must be an integer");
  return v->get<std::int64_t>();
}

const Json& get_array(const Json& node, const char* key, const std::string& where) {
  static const Json empty = Json::array();
  const Json* v = member(node, key);
  if (!v) return empty;
  if (!v->is_array()) syntax_error(where, std::string("'") + key + "' must be an array");
  return *v;
}

std::string_view to_string(RoutingMode mode) {
  return mode == RoutingMode::Parallel ? "PARALLEL" : "SEQUENCE";
}

RoutingMode parse_routing(const std::string& text, const std::string& where) {
  if (text == "SEQUENCE") return RoutingMode::Sequence;
  if (text == "PARALLEL") return RoutingMode::Parallel;
  syntax_error(where, "routing mode must be SEQUENCE or PARALLEL, got '" + text + "'");
}

AggregationPolicy decode_aggregation(const Json& node, const std::string& where) {
  expect_object(node, where, {"policy", "n", "k"});
  const auto policy = get_string(node, "policy", where);
  if (policy == "ALL") {
    if (node.contains("n") || node.contains("k")) syntax_error(where, "ALL takes no parameter");
    return AggregateAll{};
  }
  if (policy == "FIRST_N") {
    if (node.contains("k")) syntax_error(where, "FIRST_N takes 'n'");
    return AggregateFirstN{get_int(node, "n", where)};
  }
  if (policy == "OWNER_SELECT") {
    if (node.contains("n")) syntax_error(where, "OWNER_SELECT takes 'k'");
    return AggregateOwnerSelect{get_int(node, "k", where)};
  }
  syntax_error(where, "unknown aggregation policy '" + policy + "'");
}

Json aggregation_json(const AggregationPolicy& policy) {
  return std::visit(
      [](const auto& p) -> Json {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, AggregateAll>) return {{"policy", "ALL"}};
        else if constexpr (std::is_same_v<T, AggregateFirstN>) return {{"policy", "FIRST_N"}, {"n", p.n}};
        else return {{"policy", "OWNER_SELECT"}, {"k", p.k}};
      },
      policy);
}

ZeroPolicy decode_zero(const Json& node, const std::string& where) {
  expect_object(node, where, {"policy", "span", "max_extensions"});
  const auto policy = get_string(node, "policy", where);
  if (policy == "COMPLETE_EMPTY" || policy == "FAIL") {
    if (node.contains("span") || node.contains("max_extensions"))
      syntax_error(where, policy + " takes no parameter");
    if (policy == "FAIL") return ZeroFail{};
    return ZeroCompleteEmpty{};
  }
  if (policy == "EXTEND")
    return ZeroExtend{get_int(node, "span", where), get_int(node, "max_extensions", where)};
  syntax_error(where, "unknown zero-result policy '" + policy + "'");
}

Json zero_json(const ZeroPolicy& policy) {
  return std::visit(
      [](const auto& p) -> Json {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, ZeroCompleteEmpty>) return {{"policy", "COMPLETE_EMPTY"}};
        else if constexpr (std::is_same_v<T, ZeroFail>) return {{"policy", "FAIL"}};
        else return {{"policy", "EXTEND"}, {"span", p.span}, {"max_extensions", p.max_extensions}};
      },
      policy);
}

}  // namespace

std::string_view to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::Human: return "HUMAN";
    case TaskKind::Automatic: return "AUTOMATIC";
    case TaskKind::Crowdsourced: return "CS";
    case TaskKind::Delegated: return "DELEGATED";
  }
  return "?";
}

std::optional<TaskKind> parse_task_kind(std::string_view text) {
  if (text == "HUMAN") return TaskKind::Human;
  if (text == "AUTOMATIC") return TaskKind::Automatic;
  if (text == "CS") return TaskKind::Crowdsourced;
  if (text == "DELEGATED") return TaskKind::Delegated;
  return std::nullopt;
}

const ActivityDef* ProcessDefinition::find_activity(std::string_view activity_id) const {
  for (const auto& a : activities)
    if (a.id == activity_id) return &a;
  return nullptr;
}

bool ValidationReport::has(std::string_view rule) const {
  return std::any_of(violations.begin(), violations.end(),
                     [&](const Violation& v) { return v.rule == rule; });
}

// ---------------------------------------------------------------------------
// Decoding

CsConfig decode_cs_config(const Json& node) {
  const std::string where = "cs_config";
  expect_object(node, where,
                {"open_duration", "max_executions", "min_results", "aggregation",
                 "on_zero_results", "instructions", "reward"});
  CsConfig config;
  config.open_duration = get_int(node, "open_duration", where);
  if (const Json* max = member(node, "max_executions")) {
    if (max->is_string()) {
      if (max->get<std::string>() != "UNBOUNDED")
        syntax_error(where, "max_executions must be an integer or \"UNBOUNDED\"");
    } else if (max->is_number_integer()) {
      config.max_executions = max->get<std::int64_t>();
    } else {
      syntax_error(where, "max_executions must be an integer or \"UNBOUNDED\"");
    }
  }
  config.min_results = get_int(node, "min_results", where, 0);
  if (const Json* agg = member(node, "aggregation"))
    config.aggregation = decode_aggregation(*agg, where + ".aggregation");
  if (const Json* zero = member(node, "on_zero_results"))
    config.on_zero_results = decode_zero(*zero, where + ".on_zero_results");
  config.instructions = get_string(node, "instructions", where, "");
  if (const Json* reward = member(node, "reward")) {
    if (!reward->is_number()) syntax_error(where, "'reward' must be a number");
    config.reward = reward->get<double>();
  }
  return config;
}

ProcessDefinition decode_definition(const Json& doc) {
  expect_object(doc, "definition",
                {"id", "name", "start_condition", "end_condition", "activities", "transitions",
                 "roles", "app_refs", "wf_data"});
  ProcessDefinition def;
  def.id = get_string(doc, "id", "definition");
  def.name = get_string(doc, "name", "definition", "");

  if (const Json* start = member(doc, "start_condition")) {
    expect_object(*start, "start_condition", {"initiator_roles"});
    for (const auto& r : get_array(*start, "initiator_roles", "start_condition")) {
      if (!r.is_string()) syntax_error("start_condition", "initiator_roles entries must be strings");
      def.start_condition.initiator_roles.push_back(r.get<std::string>());
    }
  }
  if (const Json* end = member(doc, "end_condition")) {
    expect_object(*end, "end_condition", {"mode"});
    def.end_condition.mode = get_string(*end, "mode", "end_condition");
  }

  for (const auto& node : get_array(doc, "activities", "definition")) {
    const std::string where = "activities[" + std::to_string(def.activities.size()) + "]";
    expect_object(node, where,
                  {"id", "kind", "role", "app_ref", "cs_config", "description", "split", "join"});
    ActivityDef a;
    a.id = get_string(node, "id", where);
    const auto kind_text = get_string(node, "kind", where);
    auto kind = parse_task_kind(kind_text);
    if (!kind) syntax_error(where, "unknown kind '" + kind_text + "'");
    a.kind = *kind;
    if (node.contains("role")) a.role = get_string(node, "role", where);
    if (node.contains("app_ref")) a.app_ref = get_string(node, "app_ref", where);
    if (const Json* cs = member(node, "cs_config")) a.cs_config = decode_cs_config(*cs);
    a.description = get_string(node, "description", where, "");
    a.split = parse_routing(get_string(node, "split", where, "SEQUENCE"), where);
    a.join = parse_routing(get_string(node, "join", where, "SEQUENCE"), where);
    def.activities.push_back(std::move(a));
  }

  for (const auto& node : get_array(doc, "transitions", "definition")) {
    const std::string where = "transitions[" + std::to_string(def.transitions.size()) + "]";
    expect_object(node, where, {"from", "to", "guard"});
    def.transitions.push_back(
        {get_string(node, "from", where), get_string(node, "to", where),
         get_string(node, "guard", where, "")});
  }
  for (const auto& node : get_array(doc, "roles", "definition")) {
    const std::string where = "roles[" + std::to_string(def.roles.size()) + "]";
    expect_object(node, where, {"id", "description"});
    def.roles.push_back({get_string(node, "id", where), get_string(node, "description", where, "")});
  }
  for (const auto& node : get_array(doc, "app_refs", "definition")) {
    const std::string where = "app_refs[" + std::to_string(def.app_refs.size()) + "]";
    expect_object(node, where, {"id", "uri"});
    def.app_refs.push_back({get_string(node, "id", where), get_string(node, "uri", where, "")});
  }
  for (const auto& node : get_array(doc, "wf_data", "definition")) {
    const std::string where = "wf_data[" + std::to_string(def.wf_data.size()) + "]";
    expect_object(node, where, {"name", "type"});
    def.wf_data.push_back({get_string(node, "name", where), get_string(node, "type", where)});
  }
  return def;
}

ProcessDefinition parse_definition(const Json& document) {
  auto def = decode_definition(document);
  auto report = validate_definition(def);
  if (!report.ok()) {
    std::string summary;
    for (const auto& v : report.violations) {
      if (!summary.empty()) summary += ", ";
      summary += v.rule;
    }
    throw Error(ErrorCode::ValidationError, "definition '" + def.id + "' is invalid: " + summary,
                to_json(report));
  }
  return def;
}

ProcessDefinition parse_definition(std::string_view source) {
  Json doc;
  try {
    doc = Json::parse(source.begin(), source.end());
  } catch (const Json::parse_error& e) {
    throw Error(ErrorCode::SyntaxError, e.what());
  }
  return parse_definition(doc);
}

// ---------------------------------------------------------------------------
// Encoding

Json to_json(const CsConfig& c) {
  Json j;
  j["open_duration"] = c.open_duration;
  if (c.max_executions) j["max_executions"] = *c.max_executions;
  else j["max_executions"] = "UNBOUNDED";
  j["min_results"] = c.min_results;
  j["aggregation"] = aggregation_json(c.aggregation);
  j["on_zero_results"] = zero_json(c.on_zero_results);
  j["instructions"] = c.instructions;
  j["reward"] = c.reward;
  return j;
}

Json to_json(const ProcessDefinition& def) {
  Json j;
  j["id"] = def.id;
  j["name"] = def.name;
  j["start_condition"] = {{"initiator_roles", def.start_condition.initiator_roles}};
  j["end_condition"] = {{"mode", def.end_condition.mode}};
  j["activities"] = Json::array();
  for (const auto& a : def.activities) {
    Json node{{"id", a.id},
              {"kind", to_string(a.kind)},
              {"description", a.description},
              {"split", to_string(a.split)},
              {"join", to_string(a.join)}};
    if (a.role) node["role"] = *a.role;
    if (a.app_ref) node["app_ref"] = *a.app_ref;
    if (a.cs_config) node["cs_config"] = to_json(*a.cs_config);
    j["activities"].push_back(std::move(node));
  }
  j["transitions"] = Json::array();
  for (const auto& t : def.transitions)
    j["transitions"].push_back({{"from", t.from}, {"to", t.to}, {"guard", t.guard}});
  j["roles"] = Json::array();
  for (const auto& r : def.roles) j["roles"].push_back({{"id", r.id}, {"description", r.description}});
  j["app_refs"] = Json::array();
  for (const auto& r : def.app_refs) j["app_refs"].push_back({{"id", r.id}, {"uri", r.uri}});
  j["wf_data"] = Json::array();
  for (const auto& d : def.wf_data) j["wf_data"].push_back({{"name", d.name}, {"type", d.type}});
  return j;
}

std::string serialize_definition(const ProcessDefinition& def) {
  return to_json(def).dump(2) + "\n";
}

Json to_json(const ValidationReport& report) {
  Json j = Json::array();
  for (const auto& v : report.violations)
    j.push_back({{"rule", v.rule}, {"subject", v.subject}, {"message", v.message}});
  return j;
}

// ---------------------------------------------------------------------------
// Validation

namespace {

void validate_cs_config(const ActivityDef& a, const CsConfig& c, std::vector<Violation>& out) {
  auto add = [&](const char* rule, const std::string& msg) { out.push_back({rule, a.id, msg}); };
  if (c.open_duration <= 0) add("DURATION_NONPOSITIVE", "open_duration must be > 0");
  if (c.max_executions && *c.max_executions <= 0)
    add("MAX_EXECUTIONS_NONPOSITIVE", "max_executions must be positive or UNBOUNDED");
  if (c.min_results < 0) add("MIN_RESULTS_NEGATIVE", "min_results must be >= 0");
  if (c.max_executions && c.min_results > *c.max_executions)
    add("MIN_RESULTS_EXCEEDS_MAX", "min_results must not exceed max_executions");
  if (auto* first = std::get_if<AggregateFirstN>(&c.aggregation); first && first->n < 1)
    add("FIRST_N_NONPOSITIVE", "FIRST_N requires n >= 1");
  if (auto* sel = std::get_if<AggregateOwnerSelect>(&c.aggregation); sel && sel->k < 1)
    add("OWNER_SELECT_NONPOSITIVE", "OWNER_SELECT requires k >= 1");
  if (auto* ext = std::get_if<ZeroExtend>(&c.on_zero_results)) {
    if (ext->span <= 0) add("EXTEND_SPAN_NONPOSITIVE", "EXTEND span must be > 0");
    if (ext->max_extensions < 1) add("EXTEND_COUNT_NONPOSITIVE", "EXTEND requires max_extensions >= 1");
  }
  if (c.reward < 0) add("REWARD_NEGATIVE", "reward must be non-negative");
}

}  // namespace

ValidationReport validate_definition(const ProcessDefinition& def) {
  std::vector<Violation> out;
  auto add = [&](const char* rule, std::string subject, std::string msg) {
    out.push_back({rule, std::move(subject), std::move(msg)});
  };

  if (def.id.empty()) add("EMPTY_ID", "", "definition id must not be empty");
  if (def.end_condition.mode != "ALL_END_ACTIVITIES")
    add("UNSUPPORTED_END_RULE", def.end_condition.mode, "only ALL_END_ACTIVITIES is supported");
  if (def.activities.empty()) add("NO_ACTIVITIES", "", "a definition needs at least one activity");

  std::set<std::string> roles;
  for (const auto& r : def.roles)
    if (!roles.insert(r.id).second) add("DUPLICATE_ROLE", r.id, "role declared twice");
  std::set<std::string> apps;
  for (const auto& r : def.app_refs)
    if (!apps.insert(r.id).second) add("DUPLICATE_APP_REF", r.id, "application reference declared twice");
  std::set<std::string> slots;
  for (const auto& d : def.wf_data) {
    if (!slots.insert(d.name).second) add("DUPLICATE_DATA_SLOT", d.name, "data slot declared twice");
    if (d.type != "string" && d.type != "number" && d.type != "boolean" && d.type != "json")
      add("UNKNOWN_DATA_TYPE", d.name, "type must be string, number, boolean or json");
  }
  for (const auto& r : def.start_condition.initiator_roles)
    if (!roles.count(r)) add("UNKNOWN_ROLE", r, "start_condition references undeclared role");

  std::set<std::string> ids;
  for (const auto& a : def.activities) {
    if (a.id.empty()) add("EMPTY_ID", "", "activity id must not be empty");
    if (!ids.insert(a.id).second) add("DUPLICATE_ACTIVITY_ID", a.id, "activity id used twice");

    const bool human = a.kind == TaskKind::Human;
    const bool automatic = a.kind == TaskKind::Automatic;
    const bool cs = a.kind == TaskKind::Crowdsourced;
    if (human && !a.role) add("ROLE_MISSING", a.id, "HUMAN activity requires a role");
    if (!human && a.role) add("ROLE_NOT_ALLOWED", a.id, "only HUMAN activities carry a role");
    if (automatic && !a.app_ref) add("APP_REF_MISSING", a.id, "AUTOMATIC activity requires app_ref");
    if (!automatic && a.app_ref) add("APP_REF_NOT_ALLOWED", a.id, "only AUTOMATIC activities carry app_ref");
    if (cs && !a.cs_config) add("CS_CONFIG_MISSING", a.id, "CS activity requires cs_config");
    if (!cs && a.cs_config) add("CS_CONFIG_UNEXPECTED", a.id, "only CS activities carry cs_config");
    if (a.role && !roles.count(*a.role)) add("UNKNOWN_ROLE", a.id, "role '" + *a.role + "' is not declared");
    if (a.app_ref && !apps.count(*a.app_ref))
      add("UNKNOWN_APP_REF", a.id, "app_ref '" + *a.app_ref + "' is not declared");
    if (a.cs_config) validate_cs_config(a, *a.cs_config, out);
  }

  // Graph checks run over edges whose endpoints exist.
  std::map<std::string, std::set<std::string>> succ, pred;
  for (const auto& a : def.activities) {
    succ[a.id];
    pred[a.id];
  }
  std::set<std::pair<std::string, std::string>> seen_edges;
  for (const auto& t : def.transitions) {
    const std::string label = t.from + "->" + t.to;
    if (!t.guard.empty()) add("GUARD_UNSUPPORTED", label, "conditional guards are not supported");
    if (!ids.count(t.from) || !ids.count(t.to)) {
      add("UNKNOWN_TRANSITION_ENDPOINT", label, "transition references an unknown activity");
      continue;
    }
    if (!seen_edges.insert({t.from, t.to}).second) {
      add("DUPLICATE_TRANSITION", label, "transition listed twice");
      continue;
    }
    succ[t.from].insert(t.to);
    pred[t.to].insert(t.from);
  }

  if (!def.activities.empty()) {
    std::vector<std::string> starts;
    for (const auto& a : def.activities)
      if (pred[a.id].empty() && std::count(starts.begin(), starts.end(), a.id) == 0)
        starts.push_back(a.id);

    // Kahn's algorithm: anything left unvisited sits on a cycle.
    std::map<std::string, std::size_t> indegree;
    for (const auto& [id, p] : pred) indegree[id] = p.size();
    std::deque<std::string> queue(starts.begin(), starts.end());
    std::set<std::string> visited;
    while (!queue.empty()) {
      auto id = queue.front();
      queue.pop_front();
      visited.insert(id);
      for (const auto& s : succ[id])
        if (--indegree[s] == 0) queue.push_back(s);
    }
    if (visited.size() != succ.size()) {
      std::string members;
      std::set<std::string> listed;
      for (const auto& a : def.activities)
        if (!visited.count(a.id) && listed.insert(a.id).second)
          members += (members.empty() ? "" : ",") + a.id;
      add("CYCLE", members, "transition graph contains a cycle");
    }
    if (starts.empty()) add("NO_START", "", "no activity without incoming transitions");
    if (starts.size() > 1) {
      std::string s;
      for (const auto& id : starts) s += (s.empty() ? "" : ",") + id;
      add("MULTIPLE_START", s, "exactly one start activity is required");
    }

    // Weak connectivity.
    std::set<std::string> reach;
    std::deque<std::string> q{def.activities.front().id};
    while (!q.empty()) {
      auto id = q.front();
      q.pop_front();
      if (!reach.insert(id).second) continue;
      for (const auto& s : succ[id]) q.push_back(s);
      for (const auto& p : pred[id]) q.push_back(p);
    }
    if (reach.size() != succ.size()) add("DISCONNECTED", "", "transition graph is not connected");

    for (const auto& a : def.activities) {
      if (succ[a.id].size() > 1 && a.split != RoutingMode::Parallel)
        add("SPLIT_REQUIRED", a.id, "multiple successors require split PARALLEL");
      if (pred[a.id].size() > 1 && a.join != RoutingMode::Parallel)
        add("JOIN_REQUIRED", a.id, "multiple predecessors require join PARALLEL");
    }
  }

  return ValidationReport{std::move(out)};
}

ExecutionPlan topology(const ProcessDefinition& def) {
  ExecutionPlan plan;
  for (const auto& a : def.activities) {
    plan.order.push_back(a.id);
    plan.successors[a.id];
    plan.predecessors[a.id];
  }
  for (const auto& t : def.transitions) {
    plan.successors[t.from].insert(t.to);
    plan.predecessors[t.to].insert(t.from);
  }
  for (const auto& id : plan.order) {
    if (plan.predecessors[id].empty() && plan.start.empty()) plan.start = id;
    if (plan.successors[id].empty()) plan.end_activities.insert(id);
  }
  return plan;
}

}  // namespace crowdflow
