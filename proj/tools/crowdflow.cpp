// crowdflow command line: validate, serve, replay, simulate.
// Exit codes: 0 success, 1 domain error, 2 usage error.

#include <CLI11.hpp>

#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "crowdflow/crowd_sim.hpp"
#include "crowdflow/error.hpp"
#include "crowdflow/eventstore.hpp"
#include "crowdflow/gateway.hpp"
#include "crowdflow/process_model.hpp"

namespace fs = std::filesystem;
using namespace crowdflow;

namespace {

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::StorageFailure, "cannot read " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

// "definitions/business-cards" also finds "definitions/business-cards.json".
std::string resolve_definition_path(const std::string& path) {
  if (fs::is_regular_file(path)) return path;
  if (fs::is_regular_file(path + ".json")) return path + ".json";
  return path;
}

int report_error(const Error& e) {
  std::cerr << "error " << to_string(e.code()) << ": " << e.what() << "\n";
  return 1;
}

int cmd_validate(const std::string& file, bool canonical) {
  const auto text = read_text(resolve_definition_path(file));
  try {
    const auto def = parse_definition(text);
    if (canonical) {
      std::cout << serialize_definition(def);
    } else {
      std::cout << "ok " << def.id << ": " << def.activities.size() << " activities, "
                << def.transitions.size() << " transitions\n";
    }
    return 0;
  } catch (const Error& e) {
    if (e.code() != ErrorCode::ValidationError) throw;
    std::cout << "invalid definition\n";
    for (const auto& v : e.details()) {
      std::cout << v.at("rule").get<std::string>() << " " << v.at("subject").get<std::string>() << ": "
                << v.at("message").get<std::string>() << "\n";
    }
    return 1;
  }
}

Gateway* g_running = nullptr;

void on_signal(int) {
  if (g_running) std::thread([] { g_running->stop(); }).detach();
}

int cmd_serve(const std::string& config_path) {
  Gateway gateway(load_api_config(config_path));
  const int port = gateway.bind();
  std::cout << "listening on " << gateway.config().host << ":" << port << std::endl;
  g_running = &gateway;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  gateway.run();
  g_running = nullptr;
  gateway.stop();
  return 0;
}

int cmd_replay(const std::string& log_path, std::optional<std::uint64_t> upto) {
  const auto events = read_log_file(log_path);
  std::cout << snapshot(replay(events, upto));
  return 0;
}

int cmd_simulate(const std::string& config_path, std::optional<std::uint64_t> seed,
                 const std::string& csv_path) {
  Json doc;
  try {
    doc = Json::parse(read_text(config_path));
  } catch (const Json::parse_error& e) {
    throw Error(ErrorCode::SyntaxError, std::string("config is not JSON: ") + e.what());
  }
  auto config = sim::parse_sim_config(doc);
  if (seed) config.seed = *seed;
  std::vector<ProcessDefinition> definitions;
  const auto base = fs::path(config_path).parent_path();
  for (const auto& file : config.definition_files) {
    const auto path = fs::path(file).is_relative() ? base / file : fs::path(file);
    definitions.push_back(parse_definition(read_text(resolve_definition_path(path.string()))));
  }
  const auto rendered = sim::report_render(sim::run(config, definitions));
  std::cout << rendered.text;
  if (csv_path.empty()) {
    std::cout << "\n" << rendered.csv;
  } else {
    std::ofstream out(csv_path, std::ios::binary | std::ios::trunc);
    out << rendered.csv;
    if (!out) throw Error(ErrorCode::StorageFailure, "cannot write " + csv_path);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"crowdflow workflow engine"};
  app.require_subcommand(1);

  std::string file;
  bool canonical = false;
  auto* validate = app.add_subcommand("validate", "check a process definition document");
  validate->add_option("file", file, "definition file")->required();
  validate->add_flag("--canonical", canonical, "print the canonical form instead of a summary");

  std::string config_path;
  auto* serve = app.add_subcommand("serve", "run the HTTP gateway");
  serve->add_option("--config", config_path, "service config file")->required();

  std::string log_path;
  std::uint64_t upto = 0;
  auto* replay_cmd = app.add_subcommand("replay", "rebuild state from an event log and print its snapshot");
  replay_cmd->add_option("--log", log_path, "event log file")->required();
  auto* upto_opt = replay_cmd->add_option("--upto", upto, "last sequence number to apply");

  std::string sim_config;
  std::uint64_t seed = 0;
  std::string csv_path;
  auto* simulate = app.add_subcommand("simulate", "run the simulated crowd");
  simulate->add_option("--config", sim_config, "simulation config file")->required();
  auto* seed_opt = simulate->add_option("--seed", seed, "override the configured seed");
  simulate->add_option("--csv", csv_path, "write the per-session CSV here instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*validate) return cmd_validate(file, canonical);
    if (*serve) return cmd_serve(config_path);
    if (*replay_cmd) return cmd_replay(log_path, *upto_opt ? std::optional<std::uint64_t>(upto) : std::nullopt);
    if (*simulate)
      return cmd_simulate(sim_config, *seed_opt ? std::optional<std::uint64_t>(seed) : std::nullopt, csv_path);
  } catch (const Error& e) {
    return report_error(e);
  }
  return 2;
}
