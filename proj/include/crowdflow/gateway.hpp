#pragma once

// HTTP surface over the engine. One writer at a time mutates the engine;
// reads are served from an immutable published view so listings never wait
// for a command in progress.

#include <memory>
#include <set>
#include <string>
#include <vector>

#include "crowdflow/enactment.hpp"

namespace crowdflow {

enum class ClockMode { Logical, Wall };

struct InternalUser {
  std::string id;
  std::set<std::string> roles;
};

struct ApiConfig {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks an ephemeral port
  LogicalTime retention_span = 365 * 24 * 60;
  ClockMode clock_mode = ClockMode::Logical;
  std::string data_dir = "data";
  std::vector<InternalUser> internal_users;
};

/// Reads {"bind": "host:port", "retention_span", "clock_mode", "data_dir",
/// "internal_users": [{"id", "roles"}]}. Throws Error(SyntaxError / InvalidArgument).
ApiConfig parse_api_config(const Json& document);
ApiConfig load_api_config(const std::string& path);

/// HTTP status for an error code.
int http_status(ErrorCode code);

class Gateway {
 public:
  /// Opens the data directory, replays events.log and reloads stored
  /// definitions. Throws Error(StorageFailure / CorruptLog).
  explicit Gateway(ApiConfig config);
  ~Gateway();
  Gateway(const Gateway&) = delete;
  Gateway& operator=(const Gateway&) = delete;

  /// Binds the listening socket and returns the port. Throws Error(BindFailure).
  int bind();
  /// Serves until stop() is called (blocking).
  void run();
  /// bind() + run() on a background thread.
  int start();
  /// Stops serving and flushes the event log. Safe to call more than once.
  void stop();

  int port() const;
  /// Canonical serialization of the last published state.
  std::string canonical_snapshot() const;
  const ApiConfig& config() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace crowdflow
