#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "crowdflow/state.hpp"

namespace crowdflow {

/// Closed event vocabulary.
inline constexpr std::string_view kEventKinds[] = {
    "ProcessStarted",   "ActivityStarted",   "ActivityCompleted",        "ActivityFailed",
    "SessionOpened",    "ExecutionSpawned",  "ResultSubmitted",          "ExecutionAbandoned",
    "ExecutionForceTerminated", "SessionExtended", "SessionClosed",      "ResultsAggregated",
    "DelegationStarted", "DelegationFinished", "UserRegistered",         "InstanceTerminated",
    "UserPurged",
};

bool is_known_event_kind(std::string_view kind);

struct Event {
  std::uint64_t seq = 0;  // assigned by append
  LogicalTime at = 0;
  std::string kind;
  std::optional<std::string> instance_id;
  Json payload = Json::object();

  friend bool operator==(const Event&, const Event&) = default;
};

Json to_json(const Event& event);
Event event_from_json(const Json& node);

/// One canonical record: compact JSON, keys sorted, no trailing newline.
std::string encode_event_line(const Event& event);
/// Throws Error(CorruptLog) on undecodable input or unknown kind.
Event decode_event_line(std::string_view line);

/// Append-only, in-memory event log with an optional file sink. Sequence
/// numbers are dense from 1. Copyable (the sink is not copied).
class EventLog {
 public:
  EventLog() = default;
  EventLog(const EventLog& other) : events_(other.events_) {}
  EventLog& operator=(const EventLog& other) {
    events_ = other.events_;
    sink_.reset();
    return *this;
  }
  EventLog(EventLog&&) = default;
  EventLog& operator=(EventLog&&) = default;

  /// Validates the kind, assigns the next seq and writes through to the sink
  /// when one is attached. Throws Error(InvalidArgument) for an unknown kind
  /// and Error(StorageFailure) when the sink write fails.
  std::uint64_t append(Event event);

  const std::vector<Event>& events() const { return events_; }
  std::size_t size() const { return events_.size(); }
  std::uint64_t last_seq() const { return events_.empty() ? 0 : events_.back().seq; }

  /// Events with seq >= from, in order.
  std::vector<Event> since(std::uint64_t from) const;

  /// Attaches an append-mode file. Existing content is not read.
  void attach_file(const std::string& path);
  void flush();

  /// Text of the whole log, one record per line.
  std::string to_text() const;

 private:
  std::vector<Event> events_;
  std::optional<std::ofstream> sink_;
};

/// Reads a log file or text. Throws Error(CorruptLog) on gaps or bad lines.
std::vector<Event> read_log_text(std::string_view text);
std::vector<Event> read_log_file(const std::string& path);

/// Folds events 1..upto_seq (all when absent) into a fresh state.
SystemState replay(const std::vector<Event>& events,
                   std::optional<std::uint64_t> upto_seq = std::nullopt);

/// Canonical, byte-stable snapshot document with an integrity digest.
std::string snapshot(const SystemState& state);
/// Throws Error(CorruptSnapshot) if the digest or structure does not check.
SystemState restore(std::string_view document);

/// Canonical serialization of the state alone (no digest), used for equality.
std::string canonical_state(const SystemState& state);

std::string sha256_hex(std::string_view data);

}  // namespace crowdflow
