#include <gtest/gtest.h>
#include <sys/wait.h>
#include <unistd.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "crowdflow/crowd_sim.hpp"
#include "crowdflow/eventstore.hpp"
#include "testkit.hpp"

namespace fs = std::filesystem;

namespace {

struct Run {
  int exit_code = -1;
  std::string out;
};

// Runs the CLI with stdout captured; stderr goes to a file next to it.
Run cli(const std::string& args, std::string* err = nullptr) {
  const auto err_path = fs::temp_directory_path() / ("crowdflow-cli-" + std::to_string(::getpid()) + ".err");
  const std::string command = std::string(CROWDFLOW_CLI) + " " + args + " 2>" + err_path.string();
  Run r;
  FILE* pipe = ::popen(command.c_str(), "r");
  if (!pipe) return r;
  std::array<char, 4096> buffer;
  std::size_t n;
  while ((n = std::fread(buffer.data(), 1, buffer.size(), pipe)) > 0) r.out.append(buffer.data(), n);
  const int status = ::pclose(pipe);
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  if (err) *err = testkit::read_file(err_path.string());
  fs::remove(err_path);
  return r;
}

std::string src(const std::string& relative) { return testkit::source_path(relative); }

}  // namespace

TEST(Cli, ValidateAcceptsShippedDefinitions) {
  auto r = cli("validate " + src("definitions/fig3-sequence.json"));
  EXPECT_EQ(r.exit_code, 0);
  EXPECT_EQ(r.out, "ok fig3-sequence: 4 activities, 3 transitions\n");
  // The extension may be left off.
  EXPECT_EQ(cli("validate " + src("definitions/diamond")).exit_code, 0);
}

TEST(Cli, ValidateCanonicalEchoesDocument) {
  const auto path = src("definitions/business-cards-cs.json");
  const auto r = cli("validate --canonical " + path);
  EXPECT_EQ(r.exit_code, 0);
  EXPECT_EQ(r.out, testkit::read_file(path));
}

TEST(Cli, ValidateReportsRules) {
  auto r = cli("validate " + src("definitions/invalid/cycle.json"));
  EXPECT_EQ(r.exit_code, 1);
  EXPECT_NE(r.out.find("CYCLE"), std::string::npos) << r.out;
  std::string err;
  r = cli("validate " + src("definitions/invalid/not-json.json"), &err);
  EXPECT_EQ(r.exit_code, 1);
  EXPECT_NE(err.find("SyntaxError"), std::string::npos) << err;
  r = cli("validate /no/such/file.json", &err);
  EXPECT_EQ(r.exit_code, 1);
}

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(cli("").exit_code, 2);
  EXPECT_EQ(cli("frobnicate").exit_code, 2);
  EXPECT_EQ(cli("validate").exit_code, 2);
  EXPECT_EQ(cli("simulate --seed 3").exit_code, 2);
  EXPECT_EQ(cli("--help").exit_code, 0);
}

TEST(Cli, SimulateIsDeterministic) {
  const auto args = "simulate --config " + src("config/sim.json") + " --seed 7";
  const auto a = cli(args), b = cli(args);
  EXPECT_EQ(a.exit_code, 0);
  EXPECT_EQ(a.out, b.out);
  EXPECT_NE(a.out.find("seed: 7\n"), std::string::npos);
  EXPECT_NE(a.out.find(std::string(crowdflow::sim::kCsvHeader)), std::string::npos);
  const auto c = cli("simulate --config " + src("config/sim.json") + " --seed 8");
  EXPECT_NE(a.out, c.out);
}

TEST(Cli, SimulateWritesCsvFile) {
  const auto csv = fs::temp_directory_path() / ("crowdflow-cli-" + std::to_string(::getpid()) + ".csv");
  const auto r = cli("simulate --config " + src("config/sim.json") + " --seed 7 --csv " + csv.string());
  EXPECT_EQ(r.exit_code, 0);
  const auto text = testkit::read_file(csv.string());
  EXPECT_EQ(text.rfind(std::string(crowdflow::sim::kCsvHeader) + "\n", 0), 0u);
  // Without --csv the same table follows the text report after a blank line.
  EXPECT_EQ(cli("simulate --config " + src("config/sim.json") + " --seed 7").out, r.out + "\n" + text);
  fs::remove(csv);
}

TEST(Cli, ReplayPrintsSnapshot) {
  using namespace crowdflow;
  Engine engine{EngineOptions{}, testkit::staff()};
  engine.register_definition(testkit::load_definition("definitions/fig3-sequence.json"));
  const auto iid = engine.start_instance("fig3-sequence", Actor::user("alice"), 0).id;
  engine.begin_activity(iid, "A", Actor::user("alice"), 1);
  engine.complete_activity(iid, "A", Json("x"), 2, Actor::user("alice"));
  const auto log = fs::temp_directory_path() / ("crowdflow-cli-" + std::to_string(::getpid()) + ".log");
  std::ofstream(log) << engine.log().to_text();
  auto r = cli("replay --log " + log.string());
  EXPECT_EQ(r.exit_code, 0);
  EXPECT_EQ(r.out, snapshot(engine.state()));
  r = cli("replay --log " + log.string() + " --upto 1");
  EXPECT_EQ(r.out, snapshot(replay(engine.log().events(), 1)));
  std::ofstream(log, std::ios::app) << "garbage\n";
  std::string err;
  r = cli("replay --log " + log.string(), &err);
  EXPECT_EQ(r.exit_code, 1);
  EXPECT_NE(err.find("CorruptLog"), std::string::npos);
  fs::remove(log);
}
