#include <gtest/gtest.h>

#include <filesystem>

#include "crowdflow/error.hpp"
#include "crowdflow/process_model.hpp"
#include "testkit.hpp"

using namespace crowdflow;
using testkit::cs_config;
using testkit::sequence_definition;

namespace {

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an Error";
  return ErrorCode::EngineUnavailable;
}

std::set<std::string> rules_of(const ProcessDefinition& def) {
  std::set<std::string> rules;
  for (const auto& v : validate_definition(def).violations) rules.insert(v.rule);
  return rules;
}

ProcessDefinition fig3() { return testkit::load_definition("definitions/fig3-sequence.json"); }

}  // namespace

TEST(ParseDefinition, FourActivitySequenceWithCrowdStep) {
  const auto def = fig3();
  ASSERT_EQ(def.activities.size(), 4u);
  EXPECT_EQ(def.transitions.size(), 3u);
  const auto* c = def.find_activity("C");
  ASSERT_NE(c, nullptr);
  EXPECT_EQ(c->kind, TaskKind::Crowdsourced);
  ASSERT_TRUE(c->cs_config.has_value());
  EXPECT_EQ(c->cs_config->open_duration, 90);
  EXPECT_FALSE(c->cs_config->max_executions.has_value());
  for (const char* id : {"A", "B", "D"}) EXPECT_FALSE(def.find_activity(id)->cs_config.has_value());
}

TEST(ParseDefinition, SingleActivityIsStartAndEnd) {
  const auto def = sequence_definition("one", {TaskKind::Human});
  const auto parsed = parse_definition(serialize_definition(def));
  const auto plan = topology(parsed);
  EXPECT_EQ(plan.start, "a1");
  EXPECT_EQ(plan.end_activities, std::set<std::string>{"a1"});
  EXPECT_TRUE(plan.successors.at("a1").empty());
}

TEST(ParseDefinition, CycleIsRejectedWithRuleCode) {
  auto def = sequence_definition("loop", {TaskKind::Human, TaskKind::Human});
  def.transitions.push_back({"a2", "a1", ""});
  try {
    parse_definition(to_json(def));
    FAIL() << "cycle accepted";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ValidationError);
    bool found = false;
    for (const auto& v : e.details()) found |= v.at("rule") == "CYCLE";
    EXPECT_TRUE(found) << e.details().dump();
  }
}

TEST(ParseDefinition, MalformedDocumentIsSyntaxError) {
  EXPECT_EQ(code_of([] { parse_definition("{\"id\": "); }), ErrorCode::SyntaxError);
  EXPECT_EQ(code_of([] { parse_definition("[1, 2]"); }), ErrorCode::SyntaxError);
  auto doc = to_json(fig3());
  doc["colour"] = "blue";
  EXPECT_EQ(code_of([&] { parse_definition(doc); }), ErrorCode::SyntaxError);
  doc = to_json(fig3());
  doc["activities"][0]["kind"] = "ROBOT";
  EXPECT_EQ(code_of([&] { parse_definition(doc); }), ErrorCode::SyntaxError);
  doc = to_json(fig3());
  doc["activities"][2]["cs_config"]["open_duration"] = "ninety";
  EXPECT_EQ(code_of([&] { parse_definition(doc); }), ErrorCode::SyntaxError);
}

TEST(ParseDefinition, TypeRulesAreValidationErrors) {
  auto def = fig3();
  def.activities[2].cs_config.reset();
  EXPECT_TRUE(rules_of(def).count("CS_CONFIG_MISSING"));
  def = fig3();
  def.activities[0].cs_config = cs_config(5);
  EXPECT_TRUE(rules_of(def).count("CS_CONFIG_UNEXPECTED"));
  def = fig3();
  def.activities[0].role.reset();
  EXPECT_TRUE(rules_of(def).count("ROLE_MISSING"));
  def = fig3();
  def.transitions.erase(def.transitions.begin());
  const auto rules = rules_of(def);
  EXPECT_TRUE(rules.count("MULTIPLE_START") || rules.count("DISCONNECTED"));
}

TEST(ValidateDefinition, ValidSequenceHasEmptyReport) {
  EXPECT_TRUE(validate_definition(fig3()).ok());
  for (const auto& entry : std::filesystem::directory_iterator(testkit::source_path("definitions"))) {
    if (entry.path().extension() != ".json") continue;
    const auto def = parse_definition(testkit::read_file(entry.path().string()));
    EXPECT_TRUE(validate_definition(def).ok()) << entry.path();
  }
}

TEST(ValidateDefinition, ZeroDurationIsReported) {
  auto def = fig3();
  def.activities[2].cs_config->open_duration = 0;
  EXPECT_TRUE(validate_definition(def).has("DURATION_NONPOSITIVE"));
}

TEST(ValidateDefinition, UnknownRoleIsReported) {
  auto def = fig3();
  def.activities[0].role = "designer";
  EXPECT_TRUE(validate_definition(def).has("UNKNOWN_ROLE"));
}

TEST(ValidateDefinition, CsConfigBounds) {
  auto check = [](CsConfig c, const char* rule) {
    auto def = sequence_definition("x", {TaskKind::Crowdsourced}, c);
    EXPECT_TRUE(validate_definition(def).has(rule)) << rule;
  };
  check(cs_config(10, AggregateFirstN{0}), "FIRST_N_NONPOSITIVE");
  check(cs_config(10, AggregateOwnerSelect{0}), "OWNER_SELECT_NONPOSITIVE");
  check(cs_config(10, AggregateAll{}, ZeroCompleteEmpty{}, 2, 3), "MIN_RESULTS_EXCEEDS_MAX");
  check(cs_config(10, AggregateAll{}, ZeroCompleteEmpty{}, 0), "MAX_EXECUTIONS_NONPOSITIVE");
  check(cs_config(10, AggregateAll{}, ZeroExtend{0, 1}), "EXTEND_SPAN_NONPOSITIVE");
  check(cs_config(10, AggregateAll{}, ZeroExtend{5, 0}), "EXTEND_COUNT_NONPOSITIVE");
  auto c = cs_config(10);
  c.reward = -1;
  check(c, "REWARD_NEGATIVE");
  check(cs_config(10, AggregateAll{}, ZeroCompleteEmpty{}, std::nullopt, -1), "MIN_RESULTS_NEGATIVE");
  // min_results may be anything non-negative when unbounded.
  EXPECT_TRUE(validate_definition(sequence_definition("y", {TaskKind::Crowdsourced},
                                                      cs_config(10, AggregateAll{}, ZeroCompleteEmpty{},
                                                                std::nullopt, 50)))
                  .ok());
}

TEST(ValidateDefinition, GuardsAreUnsupported) {
  auto def = fig3();
  def.transitions[0].guard = "x > 1";
  EXPECT_TRUE(validate_definition(def).has("GUARD_UNSUPPORTED"));
}

TEST(ValidateDefinition, ParallelRoutingNeedsMarkers) {
  auto def = testkit::diamond_definition("d", TaskKind::Human, TaskKind::Human);
  EXPECT_TRUE(validate_definition(def).ok());
  def.activities[0].split = RoutingMode::Sequence;
  EXPECT_TRUE(validate_definition(def).has("SPLIT_REQUIRED"));
  def = testkit::diamond_definition("d", TaskKind::Human, TaskKind::Human);
  def.activities[3].join = RoutingMode::Sequence;
  EXPECT_TRUE(validate_definition(def).has("JOIN_REQUIRED"));
}

TEST(Topology, SequenceSuccessors) {
  const auto plan = topology(fig3());
  EXPECT_EQ(plan.start, "A");
  EXPECT_EQ(plan.successors.at("A"), std::set<std::string>{"B"});
  EXPECT_EQ(plan.successors.at("B"), std::set<std::string>{"C"});
  EXPECT_EQ(plan.successors.at("C"), std::set<std::string>{"D"});
  EXPECT_TRUE(plan.successors.at("D").empty());
  for (const auto& [id, succ] : plan.successors) EXPECT_LE(succ.size(), 1u) << id;
}

TEST(Topology, DiamondSplitAndJoin) {
  const auto plan = topology(testkit::diamond_definition("d", TaskKind::Human, TaskKind::Crowdsourced));
  EXPECT_EQ(plan.start, "a");
  EXPECT_EQ(plan.successors.at("a"), (std::set<std::string>{"b", "c"}));
  EXPECT_EQ(plan.successors.at("b"), std::set<std::string>{"d"});
  EXPECT_EQ(plan.successors.at("c"), std::set<std::string>{"d"});
  EXPECT_EQ(plan.predecessors.at("d"), (std::set<std::string>{"b", "c"}));
  EXPECT_TRUE(plan.joins("d"));
  EXPECT_FALSE(plan.joins("b"));
}

TEST(RoundTrip, SerializeThenParseIsIdentity) {
  std::vector<ProcessDefinition> defs = testkit::random_run_definitions();
  defs.push_back(sequence_definition("one", {TaskKind::Delegated}));
  for (const auto& def : defs) {
    const auto text = serialize_definition(def);
    const auto back = parse_definition(text);
    EXPECT_EQ(back, def) << def.id;
    EXPECT_EQ(serialize_definition(back), text) << def.id;
  }
}

TEST(RoundTrip, ShippedDocumentsAreCanonical) {
  for (const auto& entry : std::filesystem::directory_iterator(testkit::source_path("definitions"))) {
    if (entry.path().extension() != ".json") continue;
    const auto text = testkit::read_file(entry.path().string());
    EXPECT_EQ(serialize_definition(parse_definition(text)), text) << entry.path();
  }
}

TEST(Invariants, AcceptedDefinitionsHaveOneStart) {
  for (const auto& def : testkit::random_run_definitions()) {
    std::map<std::string, int> indegree;
    for (const auto& a : def.activities) indegree[a.id] = 0;
    for (const auto& t : def.transitions) ++indegree[t.to];
    int starts = 0;
    for (const auto& [_, d] : indegree) starts += d == 0;
    EXPECT_EQ(starts, 1) << def.id;
  }
}

TEST(ShippedInvalid, EachDocumentFailsWithItsRule) {
  const std::map<std::string, std::string> expected = {
      {"cycle.json", "CYCLE"}, {"guarded.json", "GUARD_UNSUPPORTED"}, {"unknown-role.json", "UNKNOWN_ROLE"}};
  for (const auto& [file, rule] : expected) {
    try {
      parse_definition(testkit::read_file(testkit::source_path("definitions/invalid/" + file)));
      ADD_FAILURE() << file << " accepted";
    } catch (const Error& e) {
      ASSERT_EQ(e.code(), ErrorCode::ValidationError) << file;
      bool found = false;
      for (const auto& v : e.details()) found |= v.at("rule") == rule;
      EXPECT_TRUE(found) << file << ": " << e.details().dump();
    }
  }
  EXPECT_EQ(code_of([] { parse_definition(testkit::read_file(testkit::source_path("definitions/invalid/not-json.json"))); }),
            ErrorCode::SyntaxError);
}
