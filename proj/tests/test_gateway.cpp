#include <gtest/gtest.h>
#include <httplib.h>
#include <unistd.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <regex>
#include <thread>

#include "crowdflow/error.hpp"
#include "crowdflow/gateway.hpp"
#include "crowdflow/worklist.hpp"
#include "testkit.hpp"

using namespace crowdflow;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& tag) {
  static int counter = 0;
  auto dir = fs::temp_directory_path() /
             ("crowdflow-gw-" + std::to_string(::getpid()) + "-" + tag + "-" + std::to_string(counter++));
  fs::remove_all(dir);
  return dir;
}

ApiConfig config_for(const fs::path& dir, ClockMode mode = ClockMode::Logical) {
  ApiConfig c;
  c.port = 0;
  c.data_dir = dir.string();
  c.retention_span = 1000;
  c.clock_mode = mode;
  c.internal_users = {{"alice", {"clerk", "employee", "lawyer"}}, {"bob", {"clerk"}}, {"carol", {}}};
  return c;
}

struct Reply {
  int status = 0;
  Json body;
  std::string code() const { return body.is_object() && body.contains("error") ? body["error"]["code"].get<std::string>() : ""; }
};

class Http {
 public:
  explicit Http(int port) : client_("127.0.0.1", port) { client_.set_read_timeout(10, 0); }

  Reply get(const std::string& path, const std::string& token = "") {
    return wrap(client_.Get(path, headers(token)));
  }
  Reply post(const std::string& path, const Json& body = Json::object(), const std::string& token = "") {
    return wrap(client_.Post(path, headers(token), body.is_null() ? "" : body.dump(), "application/json"));
  }
  Reply post_raw(const std::string& path, const std::string& body, const std::string& token = "") {
    return wrap(client_.Post(path, headers(token), body, "application/json"));
  }

 private:
  static httplib::Headers headers(const std::string& token) {
    if (token.empty()) return {};
    return {{"Authorization", "Bearer " + token}};
  }
  static Reply wrap(const httplib::Result& r) {
    if (!r) return {-1, nullptr};
    Reply out{r->status, nullptr};
    if (!r->body.empty()) out.body = Json::parse(r->body, nullptr, false);
    return out;
  }
  httplib::Client client_;
};

struct Server {
  fs::path dir;
  std::unique_ptr<Gateway> gateway;
  std::unique_ptr<Http> http;

  explicit Server(fs::path d, ClockMode mode = ClockMode::Logical) : dir(std::move(d)) {
    gateway = std::make_unique<Gateway>(config_for(dir, mode));
    http = std::make_unique<Http>(gateway->start());
  }
  void restart() {
    http.reset();
    gateway->stop();
    gateway.reset();
    gateway = std::make_unique<Gateway>(config_for(dir));
    http = std::make_unique<Http>(gateway->start());
  }
  ~Server() {
    http.reset();
    if (gateway) gateway->stop();
  }
};

Json definition_doc(const std::string& file) {
  return Json::parse(testkit::read_file(testkit::source_path("definitions/" + file)));
}

}  // namespace

TEST(ApiConfig, ParsesBindAndUsers) {
  const auto c = parse_api_config(Json::parse(R"({"bind": "0.0.0.0:9090", "clock_mode": "WALL",
      "retention_span": 60, "data_dir": "/tmp/x", "internal_users": [{"id": "alice", "roles": ["clerk"]}]})"));
  EXPECT_EQ(c.host, "0.0.0.0");
  EXPECT_EQ(c.port, 9090);
  EXPECT_EQ(c.clock_mode, ClockMode::Wall);
  EXPECT_EQ(c.retention_span, 60);
  ASSERT_EQ(c.internal_users.size(), 1u);
  EXPECT_EQ(c.internal_users[0].roles, std::set<std::string>{"clerk"});
  for (const char* bad : {R"({"bind": "nohost"})", R"({"clock_mode": "LUNAR"})", R"({"colour": 1})"}) {
    try {
      parse_api_config(Json::parse(bad));
      ADD_FAILURE() << bad;
    } catch (const Error& e) {
      EXPECT_TRUE(e.code() == ErrorCode::SyntaxError || e.code() == ErrorCode::InvalidArgument) << bad;
    }
  }
}

TEST(ApiConfig, ShippedConfigResolvesDataDir) {
  const auto c = load_api_config(testkit::source_path("config/serve.json"));
  EXPECT_EQ(fs::weakly_canonical(c.data_dir), fs::weakly_canonical(testkit::source_path("data")));
  EXPECT_EQ(c.clock_mode, ClockMode::Logical);
}

TEST(ApiConfig, StatusMapping) {
  EXPECT_EQ(http_status(ErrorCode::ValidationError), 400);
  EXPECT_EQ(http_status(ErrorCode::Unauthenticated), 401);
  EXPECT_EQ(http_status(ErrorCode::RoleDenied), 403);
  EXPECT_EQ(http_status(ErrorCode::UnknownInstance), 404);
  EXPECT_EQ(http_status(ErrorCode::SessionClosed), 409);
  EXPECT_EQ(http_status(ErrorCode::EngineUnavailable), 503);
  EXPECT_EQ(http_status(ErrorCode::CorruptLog), 500);
}

TEST(Gateway, HealthIsAnonymous) {
  Server s(fresh_dir("health"));
  const auto r = s.http->get("/health");
  EXPECT_EQ(r.status, 200);
  EXPECT_EQ(r.body["status"], "ok");
  EXPECT_EQ(r.body["clock_mode"], "LOGICAL");
  EXPECT_EQ(r.body["clock"], 0);
  EXPECT_EQ(r.body["last_seq"], 0);
  fs::remove_all(s.dir);
}

TEST(Gateway, UnwritableDataDirIsStorageFailure) {
  const auto dir = fresh_dir("blocked");
  fs::create_directories(dir);
  std::ofstream(dir / "file") << "x";
  try {
    Gateway g(config_for(dir / "file" / "data"));
    ADD_FAILURE() << "opened a data dir under a regular file";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::StorageFailure);
  }
  fs::remove_all(dir);
}

TEST(Gateway, CorruptLogRefusesToStart) {
  const auto dir = fresh_dir("corrupt");
  fs::create_directories(dir);
  std::ofstream(dir / "events.log") << "{not an event}\n";
  try {
    Gateway g(config_for(dir));
    ADD_FAILURE() << "started on a corrupt log";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::CorruptLog);
  }
  fs::remove_all(dir);
}

TEST(Gateway, AuthenticationIsRequired) {
  Server s(fresh_dir("auth"));
  EXPECT_EQ(s.http->get("/worklist").status, 401);
  EXPECT_EQ(s.http->get("/worklist", "mallory").status, 401);
  EXPECT_EQ(s.http->get("/worklist", "mallory").code(), "Unauthenticated");
  EXPECT_EQ(s.http->get("/events").status, 401);
  EXPECT_EQ(s.http->post("/instances", {{"definition_id", "x"}}).status, 401);
  EXPECT_EQ(s.http->post("/clock/advance", {{"by", 5}}).status, 401);
  EXPECT_EQ(s.http->post("/public/tasks/pi-000001.C/claim").status, 401);
  EXPECT_EQ(s.http->post("/public/tasks/pi-000001.C/claim", {}, "u-000042").status, 401);
  // An internal user is not an external worker.
  EXPECT_EQ(s.http->post("/public/tasks/pi-000001.C/claim", {}, "alice").status, 401);
  EXPECT_EQ(s.http->get("/public/tasks").status, 200);
  EXPECT_EQ(s.http->get("/worklist", "alice").status, 200);
  fs::remove_all(s.dir);
}

TEST(Gateway, ErrorsAreJson) {
  Server s(fresh_dir("errors"));
  auto r = s.http->get("/nowhere");
  EXPECT_EQ(r.status, 404);
  EXPECT_EQ(r.code(), "NotFound");
  r = s.http->get("/instances/pi-000009", "alice");
  EXPECT_EQ(r.status, 404);
  EXPECT_EQ(r.code(), "UnknownInstance");
  r = s.http->post_raw("/definitions", "{broken", "alice");
  EXPECT_EQ(r.status, 400);
  EXPECT_EQ(r.code(), "SyntaxError");
  r = s.http->post_raw("/definitions", testkit::read_file(testkit::source_path("definitions/invalid/cycle.json")), "alice");
  EXPECT_EQ(r.status, 400);
  EXPECT_EQ(r.code(), "ValidationError");
  EXPECT_TRUE(r.body["error"]["details"].is_array());
  auto doc = definition_doc("fig3-sequence.json");
  doc["id"] = "../escape";
  EXPECT_EQ(s.http->post("/definitions", doc, "alice").status, 400);
  r = s.http->post("/clock/advance", Json::object(), "alice");
  EXPECT_EQ(r.code(), "InvalidArgument");
  r = s.http->get("/events?from=abc", "alice");
  EXPECT_EQ(r.status, 400);
  fs::remove_all(s.dir);
}

TEST(Gateway, CrowdStepOverHttp) {
  Server s(fresh_dir("flow"));
  auto& h = *s.http;
  auto r = h.post("/definitions", definition_doc("fig3-sequence.json"), "alice");
  EXPECT_EQ(r.status, 201);
  EXPECT_EQ(h.post("/definitions", definition_doc("fig3-sequence.json"), "alice").status, 200);
  EXPECT_EQ(h.get("/definitions/fig3-sequence", "bob").body, definition_doc("fig3-sequence.json"));
  EXPECT_TRUE(fs::exists(s.dir / "definitions" / "fig3-sequence.json"));

  EXPECT_EQ(h.post("/instances", {{"definition_id", "fig3-sequence"}}, "carol").code(), "StartConditionUnmet");
  r = h.post("/instances", {{"definition_id", "fig3-sequence"}}, "alice");
  ASSERT_EQ(r.status, 201);
  const std::string iid = r.body["id"];
  const std::string base = "/instances/" + iid + "/activities/";
  for (const char* a : {"A", "B"}) {
    EXPECT_EQ(h.post(base + a + "/begin", {}, "bob").status, 200);
    EXPECT_EQ(h.post(base + a + "/complete", {{"result", a}}, "bob").status, 200);
  }
  EXPECT_EQ(h.post("/clock/advance", {{"to", 10}}, "alice").body["clock"], 10);
  r = h.post(base + "C/begin", {}, "alice");
  EXPECT_EQ(r.body["state"], "OPEN");
  r = h.get("/public/tasks");
  ASSERT_EQ(r.body["items"].size(), 1u);
  const std::string item = r.body["items"][0]["item_id"];
  EXPECT_EQ(r.body["items"][0]["deadline"], 100);

  std::vector<std::string> tokens, execs;
  for (int i = 0; i < 3; ++i) {
    r = h.post("/users/register", {{"display_name", "W" + std::to_string(i)}, {"contact", "w@x.test"}});
    ASSERT_EQ(r.status, 201);
    tokens.push_back(r.body["token"]);
    h.post("/clock/advance", {{"to", 20 + 20 * i}}, "alice");
    r = h.post("/public/tasks/" + item + "/claim", {}, tokens.back());
    ASSERT_EQ(r.status, 201) << r.body.dump();
    execs.push_back(r.body["execution_id"]);
  }
  EXPECT_EQ(h.post("/public/tasks/" + item + "/claim", {}, tokens[0]).code(), "DuplicateActiveClaim");
  EXPECT_EQ(h.post("/public/tasks/" + item + "/submissions/" + execs[0], {{"payload", 1}}, tokens[1]).status, 403);
  EXPECT_EQ(h.post("/public/tasks/" + item + "/submissions/" + execs[0], {{"payload", "one"}}, tokens[0]).status, 201);
  EXPECT_EQ(h.post("/public/tasks/" + item + "/submissions/" + execs[2], {{"payload", "three"}}, tokens[2]).status, 201);
  r = h.post("/clock/advance", {{"by", 50}}, "alice");
  ASSERT_EQ(r.body["fired"].size(), 1u);
  EXPECT_EQ(r.body["fired"][0]["at"], 100);
  EXPECT_EQ(r.body["fired"][0]["force_terminated"], Json::array({execs[1]}));
  EXPECT_EQ(h.post("/public/tasks/" + item + "/claim", {}, tokens[1]).code(), "SessionClosed");
  EXPECT_EQ(h.post(base + "D/begin", {}, "alice").status, 200);
  r = h.post(base + "D/complete", {}, "alice");
  EXPECT_EQ(r.body["instance_state"], "COMPLETED");
  r = h.get("/instances/" + iid, "bob");
  EXPECT_EQ(r.body["state"], "COMPLETED");
  EXPECT_EQ(r.body["data"]["C"].size(), 2u);

  r = h.get("/events?from=3", "alice");
  EXPECT_EQ(r.body["events"][0]["seq"], 3);
  EXPECT_EQ(r.body["next"], h.get("/health").body["last_seq"].get<int>() + 1);
  EXPECT_TRUE(h.get("/events?from=100000", "alice").body["events"].empty());
  fs::remove_all(s.dir);
}

TEST(Gateway, RestartReplaysIdenticalState) {
  Server s(fresh_dir("restart"));
  auto& h = *s.http;
  h.post("/definitions", definition_doc("business-cards-cs.json"), "alice");
  const std::string iid = h.post("/instances", {{"definition_id", "business-cards-cs"}}, "alice").body["id"];
  h.post("/instances/" + iid + "/activities/order/begin", {}, "alice");
  h.post("/instances/" + iid + "/activities/order/complete", {}, "alice");
  h.post("/instances/" + iid + "/activities/design/begin", {}, "alice");
  const std::string token = h.post("/users/register", {{"display_name", "Ann"}, {"contact", "a@x"}}).body["token"];
  h.post("/public/tasks/" + iid + ".design/claim", {}, token);
  h.post("/clock/advance", {{"by", 7}}, "alice");
  const auto before = s.gateway->canonical_snapshot();
  const auto last_seq = h.get("/health").body["last_seq"];
  s.restart();
  EXPECT_EQ(s.gateway->canonical_snapshot(), before);
  EXPECT_EQ(s.http->get("/health").body["last_seq"], last_seq);
  EXPECT_EQ(s.http->get("/definitions/business-cards-cs", "bob").status, 200);
  EXPECT_EQ(s.http->get("/public/tasks").body["items"].size(), 1u);
  // The clock resumes from the last event, so new commands keep working.
  EXPECT_EQ(s.http->post("/public/tasks/" + iid + ".design/claim", {}, token).code(), "DuplicateActiveClaim");
  fs::remove_all(s.dir);
}

TEST(Gateway, WallModeRejectsManualClock) {
  Server s(fresh_dir("wall"), ClockMode::Wall);
  EXPECT_EQ(s.http->get("/health").body["clock_mode"], "WALL");
  EXPECT_EQ(s.http->post("/clock/advance", {{"by", 1}}, "alice").code(), "IllegalState");
  fs::remove_all(s.dir);
}

TEST(Gateway, EndpointsMatchModuleOperations) {
  // A sampled random run issued both over HTTP and directly against an
  // in-process engine gives the same accept/reject sequence, the same error
  // codes and byte-identical logs.
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    Server s(fresh_dir("equiv"));
    auto& h = *s.http;
    Directory staff;
    for (const auto& u : config_for(s.dir).internal_users) staff.add(u.id, u.roles);
    Engine engine{EngineOptions{1000}, staff};
    Worklist worklist(engine);
    std::mt19937_64 rng(seed);
    auto pick = [&](std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng); };
    const std::vector<std::string> files = {"fig3-sequence.json", "diamond.json", "business-cards.json",
                                            "business-cards-cs.json"};
    const std::vector<std::string> staff_ids = {"alice", "bob", "carol"};
    for (const auto& f : files) {
      ASSERT_EQ(h.post("/definitions", definition_doc(f), "alice").status, 201);
      engine.register_definition(parse_definition(definition_doc(f)));
    }
    std::vector<std::string> tokens;
    std::size_t accepted = 0;
    for (int step = 0; step < 150; ++step) {
      std::vector<std::pair<std::string, std::string>> acts, cs;
      std::vector<std::tuple<std::string, std::string, std::string>> execs;
      for (const auto& [iid, inst] : engine.state().instances)
        for (const auto& [aid, a] : inst.activities) {
          acts.push_back({iid, aid});
          if (a.kind == TaskKind::Crowdsourced) cs.push_back({iid, aid});
        }
      for (const auto& [iid, inst] : engine.state().instances)
        for (const auto& [aid, ss] : inst.sessions)
          for (const auto& e : ss.executions) execs.push_back({iid, aid, e.execution_id});
      const auto user = staff_ids[pick(3)];
      const auto now = engine.clock();
      Reply reply;
      std::string module_code = "";
      auto module = [&](const std::function<void()>& f) {
        try {
          f();
        } catch (const Error& e) {
          module_code = std::string(to_string(e.code()));
        }
      };
      const int op = static_cast<int>(pick(10));
      if (op == 0 || acts.empty()) {
        const auto id = parse_definition(definition_doc(files[pick(files.size())])).id;
        reply = h.post("/instances", {{"definition_id", id}}, user);
        module([&] { engine.start_instance(id, Actor::user(user), now); });
      } else if (op == 1 || op == 2) {
        const auto [iid, aid] = acts[pick(acts.size())];
        reply = h.post("/instances/" + iid + "/activities/" + aid + "/begin", {}, user);
        module([&] { engine.begin_activity(iid, aid, Actor::user(user), now); });
      } else if (op == 3) {
        const auto [iid, aid] = acts[pick(acts.size())];
        const auto& a = engine.state().instances.at(iid).activities.at(aid);
        const auto who = a.assignee && pick(4) ? *a.assignee : user;
        reply = h.post("/instances/" + iid + "/activities/" + aid + "/complete", {{"result", step}}, who);
        module([&] { engine.complete_activity(iid, aid, Json(step), now, Actor::user(who)); });
      } else if (op == 4) {
        reply = h.post("/users/register", {{"display_name", "W"}, {"contact", "w@x"}});
        module([&] { tokens.push_back(worklist.register_external("W", "w@x", now).user_id); });
      } else if (op == 5 && !cs.empty() && !tokens.empty()) {
        const auto [iid, aid] = cs[pick(cs.size())];
        const auto token = tokens[pick(tokens.size())];
        reply = h.post("/public/tasks/" + iid + "." + aid + "/claim", {}, token);
        module([&] { worklist.claim_public(iid + "." + aid, token, now); });
      } else if (op == 6 && !execs.empty()) {
        const auto [iid, aid, ex] = execs[pick(execs.size())];
        const auto owner = engine.session(iid, aid).find(ex)->worker;
        reply = h.post("/public/tasks/" + iid + "." + aid + "/submissions/" + ex, {{"payload", step}}, owner);
        module([&] { worklist.submit_public(iid + "." + aid, ex, owner, Json(step), now); });
      } else if (op == 7 && !execs.empty()) {
        const auto [iid, aid, ex] = execs[pick(execs.size())];
        const auto owner = engine.session(iid, aid).find(ex)->worker;
        reply = h.post("/public/tasks/" + iid + "." + aid + "/abandon/" + ex, {}, owner);
        module([&] { worklist.abandon_public(iid + "." + aid, ex, owner, now); });
      } else if (op == 8 && !cs.empty()) {
        const auto [iid, aid] = cs[pick(cs.size())];
        std::vector<std::string> selection;
        for (const auto& [i2, a2, ex] : execs)
          if (i2 == iid && a2 == aid && pick(2)) selection.push_back(ex);
        reply = h.post("/instances/" + iid + "/activities/" + aid + "/aggregate", {{"selection", selection}}, "alice");
        module([&] { engine.aggregate(iid, aid, selection, now, Actor::user("alice")); });
      } else {
        const LogicalTime by = static_cast<LogicalTime>(pick(80));
        reply = h.post("/clock/advance", {{"by", by}}, "alice");
        module([&] { engine.advance_clock(now + by); });
      }
      ASSERT_EQ(reply.code(), module_code) << "step " << step << ": " << reply.body.dump();
      ASSERT_EQ(reply.status / 100 == 2, module_code.empty()) << "step " << step;
      accepted += module_code.empty();
    }
    EXPECT_GT(accepted, 60u);
    EXPECT_EQ(s.gateway->canonical_snapshot(), canonical_state(engine.state()));
    s.gateway->stop();
    EXPECT_EQ(testkit::read_file((s.dir / "events.log").string()), engine.log().to_text());
    fs::remove_all(s.dir);
  }
}

TEST(Gateway, LogicalModeLogHasNoWallClockTimes) {
  Server s(fresh_dir("logical"));
  auto& h = *s.http;
  h.post("/definitions", definition_doc("fig3-sequence.json"), "alice");
  h.post("/instances", {{"definition_id", "fig3-sequence"}}, "alice");
  h.post("/users/register", {{"display_name", "Ann"}, {"contact", "a@x"}});
  h.post("/clock/advance", {{"by", 3}}, "alice");
  h.post("/instances", {{"definition_id", "fig3-sequence"}}, "bob");
  s.gateway->stop();
  const auto events = read_log_file((s.dir / "events.log").string());
  ASSERT_EQ(events.size(), 3u);
  for (const auto& e : events) EXPECT_LE(e.at, 3) << encode_event_line(e);
  // Nothing in the stored bytes looks like an epoch timestamp.
  const auto text = testkit::read_file((s.dir / "events.log").string());
  const std::regex number("[0-9]+");
  for (auto it = std::sregex_iterator(text.begin(), text.end(), number); it != std::sregex_iterator(); ++it)
    EXPECT_LT(it->str().size(), 9u) << it->str();
  fs::remove_all(s.dir);
}

TEST(Gateway, ConcurrentReadersSeeConsistentViews) {
  Server s(fresh_dir("concurrent"));
  auto& h = *s.http;
  h.post("/definitions", definition_doc("fig3-sequence.json"), "alice");
  const std::string iid = h.post("/instances", {{"definition_id", "fig3-sequence"}}, "alice").body["id"];
  const std::string base = "/instances/" + iid + "/activities/";
  for (const char* a : {"A", "B"}) {
    h.post(base + a + "/begin", {}, "alice");
    h.post(base + a + "/complete", {}, "alice");
  }
  h.post(base + "C/begin", {}, "alice");
  std::atomic<bool> done{false};
  std::atomic<int> bad{0}, reads{0};
  std::vector<std::thread> readers;
  for (int i = 0; i < 3; ++i) {
    readers.emplace_back([&, port = s.gateway->port()] {
      Http mine(port);
      std::size_t last = 0;
      while (!done) {
        const auto r = mine.get("/public/tasks");
        if (r.status != 200 || r.body["items"].size() != 1) ++bad;
        const std::size_t n = r.body["items"][0]["executions"];
        if (n < last) ++bad;  // views never go backwards
        last = n;
        ++reads;
      }
    });
  }
  for (int i = 0; i < 25; ++i) {
    const std::string token = h.post("/users/register", {{"display_name", "W"}, {"contact", "w@x"}}).body["token"];
    EXPECT_EQ(h.post("/public/tasks/" + iid + ".C/claim", {}, token).status, 201);
  }
  done = true;
  for (auto& t : readers) t.join();
  EXPECT_EQ(bad, 0);
  EXPECT_GT(reads, 0);
  EXPECT_EQ(h.get("/public/tasks").body["items"][0]["executions"], 25);
  fs::remove_all(s.dir);
}
