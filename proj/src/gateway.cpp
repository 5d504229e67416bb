#include "crowdflow/gateway.hpp"

#include <httplib.h>

#include <chrono>
#include <condition_variable>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <regex>
#include <shared_mutex>
#include <sstream>
#include <thread>

#include "crowdflow/error.hpp"
#include "crowdflow/worklist.hpp"

namespace crowdflow {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// configuration

ApiConfig parse_api_config(const Json& doc) {
  static const std::set<std::string> known = {"bind", "retention_span", "clock_mode", "data_dir",
                                              "internal_users"};
  if (!doc.is_object()) throw Error(ErrorCode::SyntaxError, "service config must be an object");
  for (const auto& [key, _] : doc.items())
    if (!known.count(key)) throw Error(ErrorCode::SyntaxError, "unknown config key '" + key + "'");
  ApiConfig c;
  try {
    if (doc.contains("bind")) {
      const auto bind = doc.at("bind").get<std::string>();
      const auto colon = bind.rfind(':');
      if (colon == std::string::npos || colon == 0)
        throw Error(ErrorCode::InvalidArgument, "bind must be host:port");
      c.host = bind.substr(0, colon);
      std::size_t used = 0;
      const auto port_text = bind.substr(colon + 1);
      c.port = std::stoi(port_text, &used);
      if (used != port_text.size() || c.port < 0 || c.port > 65535)
        throw Error(ErrorCode::InvalidArgument, "bad port in bind address");
    }
    c.retention_span = doc.value("retention_span", c.retention_span);
    const auto mode = doc.value("clock_mode", std::string("LOGICAL"));
    if (mode == "LOGICAL") c.clock_mode = ClockMode::Logical;
    else if (mode == "WALL") c.clock_mode = ClockMode::Wall;
    else throw Error(ErrorCode::InvalidArgument, "clock_mode must be LOGICAL or WALL");
    c.data_dir = doc.value("data_dir", c.data_dir);
    if (doc.contains("internal_users")) {
      for (const auto& u : doc.at("internal_users"))
        c.internal_users.push_back({u.at("id").get<std::string>(), u.value("roles", std::set<std::string>{})});
    }
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::SyntaxError, std::string("bad service config: ") + e.what());
  } catch (const std::logic_error&) {
    throw Error(ErrorCode::InvalidArgument, "bad port in bind address");
  }
  if (c.retention_span <= 0) throw Error(ErrorCode::InvalidArgument, "retention_span must be positive");
  if (c.data_dir.empty()) throw Error(ErrorCode::InvalidArgument, "data_dir must be set");
  for (const auto& u : c.internal_users)
    if (u.id.empty() || u.id == kSystemActor) throw Error(ErrorCode::InvalidArgument, "bad internal user id");
  return c;
}

ApiConfig load_api_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::StorageFailure, "cannot read config " + path);
  Json doc;
  try {
    doc = Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw Error(ErrorCode::SyntaxError, std::string("config is not JSON: ") + e.what());
  }
  auto config = parse_api_config(doc);
  const fs::path dir = fs::path(config.data_dir);
  if (dir.is_relative()) config.data_dir = (fs::path(path).parent_path() / dir).lexically_normal().string();
  return config;
}

int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::SyntaxError:
    case ErrorCode::ValidationError:
    case ErrorCode::InvalidSelection:
    case ErrorCode::InvalidRegistration:
    case ErrorCode::InvalidArgument:
    case ErrorCode::ClockRegression:
      return 400;
    case ErrorCode::Unauthenticated:
      return 401;
    case ErrorCode::StartConditionUnmet:
    case ErrorCode::RoleDenied:
    case ErrorCode::AuthorizationDenied:
      return 403;
    case ErrorCode::UnknownDefinition:
    case ErrorCode::UnknownInstance:
    case ErrorCode::UnknownActivity:
    case ErrorCode::UnknownExecution:
    case ErrorCode::UnknownUser:
    case ErrorCode::UnknownItem:
    case ErrorCode::NotFound:
      return 404;
    case ErrorCode::DuplicateDefinition:
    case ErrorCode::IllegalState:
    case ErrorCode::IllegalExecState:
    case ErrorCode::DuplicateSession:
    case ErrorCode::SessionClosed:
    case ErrorCode::SessionNotClosed:
    case ErrorCode::CapacityReached:
    case ErrorCode::DuplicateActiveClaim:
      return 409;
    case ErrorCode::EngineUnavailable:
      return 503;
    case ErrorCode::StorageFailure:
    case ErrorCode::CorruptLog:
    case ErrorCode::CorruptSnapshot:
    case ErrorCode::BindFailure:
      return 500;
  }
  return 500;
}

// ---------------------------------------------------------------------------

namespace {

Json error_body(std::string_view code, const std::string& message, const Json& details) {
  return {{"error", {{"code", code}, {"message", message}, {"details", details}}}};
}

void reply(httplib::Response& res, int status, const Json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

Json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return Json::object();
  Json body;
  try {
    body = Json::parse(req.body);
  } catch (const Json::parse_error& e) {
    throw Error(ErrorCode::SyntaxError, std::string("request body is not JSON: ") + e.what());
  }
  if (!body.is_object()) throw Error(ErrorCode::SyntaxError, "request body must be an object");
  return body;
}

template <class T>
T field(const Json& body, const char* name, T fallback) {
  if (!body.contains(name)) return fallback;
  try {
    return body.at(name).get<T>();
  } catch (const Json::exception&) {
    throw Error(ErrorCode::SyntaxError, std::string("field '") + name + "' has the wrong type");
  }
}

std::optional<std::string> bearer(const httplib::Request& req) {
  const auto header = req.get_header_value("Authorization");
  constexpr std::string_view prefix = "Bearer ";
  if (header.size() <= prefix.size() || header.compare(0, prefix.size(), prefix) != 0) return std::nullopt;
  return header.substr(prefix.size());
}

bool safe_file_id(const std::string& id) {
  if (id.empty() || id.front() == '.') return false;
  return std::all_of(id.begin(), id.end(), [](unsigned char c) {
    return std::isalnum(c) || c == '-' || c == '_' || c == '.';
  });
}

Json submission_json(const Submission& s) {
  return {{"execution_id", s.execution_id},
          {"payload", s.payload},
          {"submitted_at", s.submitted_at},
          {"accepted", s.accepted ? Json(*s.accepted) : Json(nullptr)}};
}

Json routing_json(const RoutingOutcome& r) {
  return {{"activity_id", r.activity_id},
          {"state", to_string(r.state)},
          {"enabled", r.enabled},
          {"auto_completed", r.auto_completed},
          {"instance_state", to_string(r.instance_state)}};
}

Json firing_json(const DeadlineFiring& f) {
  return {{"instance_id", f.instance_id},
          {"activity_id", f.activity_id},
          {"at", f.at},
          {"outcome", to_string(f.outcome)},
          {"force_terminated", f.force_terminated}};
}

Json items_json(const std::vector<WorkItem>& items) {
  Json out = Json::array();
  for (const auto& item : items) out.push_back(to_json(item));
  return out;
}

void write_file_atomically(const fs::path& target, const std::string& content) {
  const fs::path temp = target.string() + ".tmp";
  {
    std::ofstream out(temp, std::ios::binary | std::ios::trunc);
    out << content;
    out.flush();
    if (!out) throw Error(ErrorCode::StorageFailure, "cannot write " + temp.string());
  }
  std::error_code ec;
  fs::rename(temp, target, ec);
  if (ec) throw Error(ErrorCode::StorageFailure, "cannot write " + target.string() + ": " + ec.message());
}

}  // namespace

// ---------------------------------------------------------------------------

struct Gateway::Impl {
  struct View {
    SystemState state;
    LogicalTime clock = 0;
  };
  using Registry = std::map<std::string, ProcessDefinition>;

  ApiConfig config;
  fs::path data_dir;
  httplib::Server server;

  std::mutex write_mutex;  // guards engine
  Engine engine;

  mutable std::mutex publish_mutex;  // guards the two pointers below
  std::shared_ptr<const View> view;
  std::shared_ptr<const Registry> registry;

  mutable std::shared_mutex feed_mutex;
  std::vector<Event> feed;

  std::thread server_thread;
  std::thread ticker;
  std::mutex ticker_mutex;
  std::condition_variable ticker_cv;
  bool stopping = false;
  int bound_port = -1;

  explicit Impl(ApiConfig c) : config(std::move(c)), data_dir(config.data_dir) {
    open_storage();
    install_routes();
  }

  void open_storage() {
    std::error_code ec;
    fs::create_directories(data_dir / "definitions", ec);
    if (ec) throw Error(ErrorCode::StorageFailure, "cannot create data directory " + data_dir.string() + ": " + ec.message());
    {
      const auto probe = data_dir / ".write-probe";
      std::ofstream out(probe, std::ios::trunc);
      out << "ok";
      out.flush();
      if (!out) throw Error(ErrorCode::StorageFailure, "data directory " + data_dir.string() + " is not writable");
      out.close();
      fs::remove(probe, ec);
    }
    Directory directory;
    for (const auto& u : config.internal_users) directory.add(u.id, u.roles);
    EngineOptions options;
    options.retention_span = config.retention_span;

    const auto log_path = data_dir / "events.log";
    std::vector<Event> events;
    if (fs::exists(log_path)) events = read_log_file(log_path.string());
    engine = Engine::from_events(events, options, std::move(directory));

    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(data_dir / "definitions"))
      if (entry.is_regular_file() && entry.path().extension() == ".json") files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    for (const auto& file : files) {
      std::ifstream in(file);
      std::stringstream text;
      text << in.rdbuf();
      engine.register_definition(parse_definition(text.str()));
    }
    engine.log().attach_file(log_path.string());
    feed = engine.log().events();
    publish();
  }

  void publish() {
    auto next = std::make_shared<View>(View{engine.state(), engine.clock()});
    std::shared_ptr<const Registry> defs;
    {
      std::lock_guard lock(publish_mutex);
      if (!registry || registry->size() != engine.definitions().size())
        defs = std::make_shared<Registry>(engine.definitions());
    }
    {
      std::unique_lock lock(feed_mutex);
      const auto& events = engine.log().events();
      for (std::size_t i = feed.size(); i < events.size(); ++i) feed.push_back(events[i]);
    }
    std::lock_guard lock(publish_mutex);
    view = std::move(next);
    if (defs) registry = std::move(defs);
  }

  std::shared_ptr<const View> current() const {
    std::lock_guard lock(publish_mutex);
    return view;
  }

  std::shared_ptr<const Registry> definitions() const {
    std::lock_guard lock(publish_mutex);
    return registry;
  }

  LogicalTime now() const {
    if (config.clock_mode == ClockMode::Logical) return engine.clock();
    const auto wall = std::chrono::duration_cast<std::chrono::seconds>(
                          std::chrono::system_clock::now().time_since_epoch())
                          .count();
    return std::max<LogicalTime>(engine.clock(), wall);
  }

  // Runs a command under the writer lock; whatever it committed (including
  // deadline firings before a rejection) is published either way.
  template <class F>
  Json command(F&& f) {
    std::lock_guard lock(write_mutex);
    try {
      Json out = f(now());
      publish();
      return out;
    } catch (...) {
      publish();
      throw;
    }
  }

  std::string internal_user(const httplib::Request& req) const {
    auto token = bearer(req);
    if (!token || !engine_directory_contains(*token))
      throw Error(ErrorCode::Unauthenticated, "an internal user token is required");
    return *token;
  }

  bool engine_directory_contains(const std::string& id) const {
    // Directory is configuration: fixed after construction, safe to read.
    return engine.directory().contains(id);
  }

  std::string external_user(const httplib::Request& req) const {
    auto token = bearer(req);
    if (!token) throw Error(ErrorCode::Unauthenticated, "a registered user token is required");
    const auto v = current();
    auto it = v->state.users.find(*token);
    if (it == v->state.users.end() || it->second.purged)
      throw Error(ErrorCode::Unauthenticated, "unknown or expired user token");
    return *token;
  }

  using Handler = std::function<void(const httplib::Request&, httplib::Response&)>;

  static Handler guarded(std::function<void(const httplib::Request&, httplib::Response&)> body) {
    return [body = std::move(body)](const httplib::Request& req, httplib::Response& res) {
      try {
        body(req, res);
      } catch (const Error& e) {
        reply(res, http_status(e.code()), error_body(to_string(e.code()), e.what(), e.details()));
      } catch (const std::exception& e) {
        reply(res, 500, error_body("InternalError", e.what(), nullptr));
      }
    };
  }

  void install_routes() {
    auto& s = server;

    s.Get("/health", guarded([this](const auto&, auto& res) {
      const auto v = current();
      reply(res, 200,
            {{"status", "ok"},
             {"clock_mode", config.clock_mode == ClockMode::Logical ? "LOGICAL" : "WALL"},
             {"clock", v->clock},
             {"last_seq", v->state.last_seq}});
    }));

    s.Post("/clock/advance", guarded([this](const auto& req, auto& res) {
      internal_user(req);
      if (config.clock_mode != ClockMode::Logical)
        throw Error(ErrorCode::IllegalState, "the clock follows wall time in WALL mode");
      const auto body = parse_body(req);
      auto out = command([&](LogicalTime now) {
        LogicalTime target = now;
        if (body.contains("to")) target = field<LogicalTime>(body, "to", now);
        else if (body.contains("by")) target = now + field<LogicalTime>(body, "by", 0);
        else throw Error(ErrorCode::InvalidArgument, "clock advance needs 'to' or 'by'");
        Json fired = Json::array();
        for (const auto& f : engine.advance_clock(target)) fired.push_back(firing_json(f));
        return Json{{"clock", engine.clock()}, {"fired", fired}};
      });
      reply(res, 200, out);
    }));

    // --- definitions ------------------------------------------------------
    s.Post("/definitions", guarded([this](const auto& req, auto& res) {
      internal_user(req);
      auto def = parse_definition(req.body);
      if (!safe_file_id(def.id))
        throw Error(ErrorCode::InvalidArgument, "definition id must use [A-Za-z0-9._-] characters");
      auto out = command([&](LogicalTime) {
        const bool existed = engine.has_definition(def.id);
        engine.register_definition(def);
        if (!existed) write_file_atomically(data_dir / "definitions" / (def.id + ".json"), serialize_definition(def));
        return Json{{"id", def.id}, {"created", !existed}};
      });
      reply(res, out.at("created").template get<bool>() ? 201 : 200, out);
    }));

    s.Get(R"(/definitions/([^/]+))", guarded([this](const auto& req, auto& res) {
      internal_user(req);
      const auto defs = definitions();
      auto it = defs->find(req.matches[1]);
      if (it == defs->end()) throw Error(ErrorCode::UnknownDefinition, "unknown definition " + std::string(req.matches[1]));
      reply(res, 200, to_json(it->second));
    }));

    // --- instances --------------------------------------------------------
    s.Post("/instances", guarded([this](const auto& req, auto& res) {
      const auto user = internal_user(req);
      const auto body = parse_body(req);
      const auto def_id = field<std::string>(body, "definition_id", "");
      if (def_id.empty()) throw Error(ErrorCode::InvalidArgument, "definition_id is required");
      auto out = command([&](LogicalTime now) { return to_json(engine.start_instance(def_id, Actor::user(user), now)); });
      reply(res, 201, out);
    }));

    s.Get(R"(/instances/([^/]+))", guarded([this](const auto& req, auto& res) {
      internal_user(req);
      const auto v = current();
      auto it = v->state.instances.find(req.matches[1]);
      if (it == v->state.instances.end())
        throw Error(ErrorCode::UnknownInstance, "unknown instance " + std::string(req.matches[1]));
      reply(res, 200, to_json(it->second));
    }));

    s.Post(R"(/instances/([^/]+)/terminate)", guarded([this](const auto& req, auto& res) {
      internal_user(req);
      const auto body = parse_body(req);
      const std::string iid = req.matches[1];
      const auto reason = field<std::string>(body, "reason", "terminated by owner");
      auto out = command([&](LogicalTime now) { return to_json(engine.terminate_instance(iid, reason, now)); });
      reply(res, 200, out);
    }));

    s.Post(R"(/instances/([^/]+)/activities/([^/]+)/(begin|complete|aggregate))",
           guarded([this](const auto& req, auto& res) {
             const auto user = internal_user(req);
             const auto body = parse_body(req);
             const std::string iid = req.matches[1];
             const std::string aid = req.matches[2];
             const std::string op = req.matches[3];
             auto out = command([&](LogicalTime now) -> Json {
               if (op == "begin") return to_json(engine.begin_activity(iid, aid, Actor::user(user), now));
               if (op == "complete") {
                 std::optional<Json> result;
                 if (body.contains("result")) result = body.at("result");
                 return routing_json(engine.complete_activity(iid, aid, result, now, Actor::user(user)));
               }
               std::optional<std::vector<std::string>> selection;
               if (body.contains("selection") && !body.at("selection").is_null())
                 selection = field<std::vector<std::string>>(body, "selection", {});
               const auto result = engine.aggregate(iid, aid, selection, now, Actor::user(user));
               return Json{{"accepted", result.accepted}, {"rejected", result.rejected}};
             });
             reply(res, 200, out);
           }));

    s.Post(R"(/instances/([^/]+)/activities/([^/]+)/delegate/(start|finish))",
           guarded([this](const auto& req, auto& res) {
             const auto user = internal_user(req);
             const auto body = parse_body(req);
             const std::string iid = req.matches[1];
             const std::string aid = req.matches[2];
             const bool start = req.matches[3] == "start";
             auto out = command([&](LogicalTime now) -> Json {
               if (start)
                 return to_json(engine.delegate_start(iid, aid, Actor::user(user), field<std::string>(body, "note", ""), now));
               return routing_json(engine.delegate_finish(iid, aid, Actor::user(user),
                                                          body.value("result", Json(nullptr)), now));
             });
             reply(res, 200, out);
           }));

    // --- worklists --------------------------------------------------------
    s.Get("/worklist", guarded([this](const auto& req, auto& res) {
      const auto user = internal_user(req);
      const auto v = current();
      reply(res, 200, {{"items", items_json(list_for_user(v->state, engine.directory(), user))}});
    }));

    s.Get("/public/tasks", guarded([this](const auto&, auto& res) {
      const auto v = current();
      reply(res, 200, {{"items", items_json(list_public(v->state))}});
    }));

    s.Post("/users/register", guarded([this](const auto& req, auto& res) {
      const auto body = parse_body(req);
      const auto name = field<std::string>(body, "display_name", "");
      const auto contact = field<std::string>(body, "contact", "");
      auto out = command([&](LogicalTime now) {
        const auto user = engine.register_external(name, contact, now);
        Json j = to_json(user);
        j["token"] = user.user_id;
        return j;
      });
      reply(res, 201, out);
    }));

    s.Post(R"(/public/tasks/([^/]+)/claim)", guarded([this](const auto& req, auto& res) {
      const auto user = external_user(req);
      const std::string item = req.matches[1];
      auto out = command([&](LogicalTime now) {
        Worklist worklist(engine);
        Json j = to_json(worklist.claim_public(item, user, now));
        j["item_id"] = item;
        return j;
      });
      reply(res, 201, out);
    }));

    s.Post(R"(/public/tasks/([^/]+)/submissions/([^/]+))", guarded([this](const auto& req, auto& res) {
      const auto user = external_user(req);
      const auto body = parse_body(req);
      const std::string item = req.matches[1];
      const std::string exec = req.matches[2];
      if (!body.contains("payload")) throw Error(ErrorCode::InvalidArgument, "payload is required");
      auto out = command([&](LogicalTime now) {
        Worklist worklist(engine);
        return submission_json(worklist.submit_public(item, exec, user, body.at("payload"), now));
      });
      reply(res, 201, out);
    }));

    s.Post(R"(/public/tasks/([^/]+)/abandon/([^/]+))", guarded([this](const auto& req, auto& res) {
      const auto user = external_user(req);
      const std::string item = req.matches[1];
      const std::string exec = req.matches[2];
      auto out = command([&](LogicalTime now) {
        Worklist worklist(engine);
        return to_json(worklist.abandon_public(item, exec, user, now));
      });
      reply(res, 200, out);
    }));

    // --- event feed -------------------------------------------------------
    s.Get("/events", guarded([this](const auto& req, auto& res) {
      internal_user(req);
      std::uint64_t from = 1;
      if (req.has_param("from")) {
        const auto text = req.get_param_value("from");
        try {
          std::size_t used = 0;
          from = std::stoull(text, &used);
          if (used != text.size()) throw std::invalid_argument(text);
        } catch (const std::logic_error&) {
          throw Error(ErrorCode::InvalidArgument, "from must be a sequence number");
        }
      }
      if (from == 0) from = 1;
      Json events = Json::array();
      std::uint64_t last = 0;
      {
        std::shared_lock lock(feed_mutex);
        for (std::size_t i = from - 1; i < feed.size(); ++i) events.push_back(to_json(feed[i]));
        last = feed.size();
      }
      reply(res, 200, {{"events", events}, {"next", std::max<std::uint64_t>(from, last + 1)}});
    }));

    s.set_error_handler([](const httplib::Request& req, httplib::Response& res) {
      if (res.status == 404 && res.body.empty())
        reply(res, 404, error_body("NotFound", "no route for " + req.method + " " + req.path, nullptr));
    });
  }

  void start_ticker() {
    if (config.clock_mode != ClockMode::Wall) return;
    ticker = std::thread([this] {
      std::unique_lock lock(ticker_mutex);
      while (!ticker_cv.wait_for(lock, std::chrono::seconds(1), [this] { return stopping; })) {
        try {
          command([&](LogicalTime now) {
            engine.advance_clock(now);
            return Json();
          });
        } catch (const Error&) {
          // A storage failure poisons the engine; requests report it.
        }
      }
    });
  }
};

Gateway::Gateway(ApiConfig config) : impl_(std::make_unique<Impl>(std::move(config))) {}

Gateway::~Gateway() { stop(); }

int Gateway::bind() {
  auto& i = *impl_;
  if (i.bound_port >= 0) return i.bound_port;
  int port = i.config.port;
  if (port == 0) {
    port = i.server.bind_to_any_port(i.config.host);
  } else if (!i.server.bind_to_port(i.config.host, port)) {
    port = -1;
  }
  if (port < 0)
    throw Error(ErrorCode::BindFailure, "cannot bind " + i.config.host + ":" + std::to_string(i.config.port));
  i.bound_port = port;
  return port;
}

void Gateway::run() {
  bind();
  impl_->start_ticker();
  impl_->server.listen_after_bind();
}

int Gateway::start() {
  const int port = bind();
  impl_->start_ticker();
  impl_->server_thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return port;
}

void Gateway::stop() {
  if (!impl_) return;
  auto& i = *impl_;
  {
    std::lock_guard lock(i.ticker_mutex);
    i.stopping = true;
  }
  i.ticker_cv.notify_all();
  if (i.ticker.joinable()) i.ticker.join();
  i.server.stop();
  if (i.server_thread.joinable()) i.server_thread.join();
  std::lock_guard lock(i.write_mutex);
  i.engine.log().flush();
}

int Gateway::port() const { return impl_->bound_port; }

std::string Gateway::canonical_snapshot() const { return canonical_state(impl_->current()->state); }

const ApiConfig& Gateway::config() const { return impl_->config; }

}  // namespace crowdflow
