#include "crowdflow/eventstore.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cstdio>
#include <sstream>

#include "crowdflow/enactment.hpp"
#include "crowdflow/error.hpp"

namespace crowdflow {

bool is_known_event_kind(std::string_view kind) {
  return std::find(std::begin(kEventKinds), std::end(kEventKinds), kind) != std::end(kEventKinds);
}

Json to_json(const Event& e) {
  return {{"seq", e.seq},
          {"at", e.at},
          {"kind", e.kind},
          {"instance_id", e.instance_id ? Json(*e.instance_id) : Json(nullptr)},
          {"payload", e.payload}};
}

Event event_from_json(const Json& node) {
  try {
    if (!node.is_object() || node.size() != 5) throw Error(ErrorCode::CorruptLog, "record must have 5 fields");
    Event e;
    e.seq = node.at("seq").get<std::uint64_t>();
    e.at = node.at("at").get<LogicalTime>();
    e.kind = node.at("kind").get<std::string>();
    if (!node.at("instance_id").is_null()) e.instance_id = node.at("instance_id").get<std::string>();
    e.payload = node.at("payload");
    if (!is_known_event_kind(e.kind)) throw Error(ErrorCode::CorruptLog, "unknown event kind " + e.kind);
    return e;
  } catch (const Json::exception& ex) {
    throw Error(ErrorCode::CorruptLog, std::string("undecodable event: ") + ex.what());
  }
}

std::string encode_event_line(const Event& event) { return to_json(event).dump(); }

Event decode_event_line(std::string_view line) {
  Json node;
  try {
    node = Json::parse(line.begin(), line.end());
  } catch (const Json::parse_error& e) {
    throw Error(ErrorCode::CorruptLog, std::string("undecodable event line: ") + e.what());
  }
  return event_from_json(node);
}

// ---------------------------------------------------------------------------

std::uint64_t EventLog::append(Event event) {
  if (!is_known_event_kind(event.kind))
    throw Error(ErrorCode::InvalidArgument, "unknown event kind '" + event.kind + "'");
  event.seq = last_seq() + 1;
  if (sink_) {
    *sink_ << encode_event_line(event) << '\n';
    sink_->flush();
    if (!*sink_) throw Error(ErrorCode::StorageFailure, "failed to write event log");
  }
  events_.push_back(std::move(event));
  return events_.back().seq;
}

std::vector<Event> EventLog::since(std::uint64_t from) const {
  std::vector<Event> out;
  for (const auto& e : events_)
    if (e.seq >= from) out.push_back(e);
  return out;
}

void EventLog::attach_file(const std::string& path) {
  std::ofstream out(path, std::ios::app | std::ios::binary);
  if (!out) throw Error(ErrorCode::StorageFailure, "cannot open event log " + path);
  sink_ = std::move(out);
}

void EventLog::flush() {
  if (sink_) sink_->flush();
}

std::string EventLog::to_text() const {
  std::string out;
  for (const auto& e : events_) {
    out += encode_event_line(e);
    out += '\n';
  }
  return out;
}

std::vector<Event> read_log_text(std::string_view text) {
  std::vector<Event> events;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(pos, end - pos);
    pos = end + 1;
    if (line.empty()) continue;
    auto e = decode_event_line(line);
    if (e.seq != events.size() + 1)
      throw Error(ErrorCode::CorruptLog, "sequence gap: expected " + std::to_string(events.size() + 1) +
                                             ", found " + std::to_string(e.seq));
    events.push_back(std::move(e));
  }
  return events;
}

std::vector<Event> read_log_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::StorageFailure, "cannot read event log " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  return read_log_text(buffer.str());
}

SystemState replay(const std::vector<Event>& events, std::optional<std::uint64_t> upto_seq) {
  SystemState state;
  for (const auto& e : events) {
    if (upto_seq && e.seq > *upto_seq) break;
    apply_event(state, e);
  }
  return state;
}

// ---------------------------------------------------------------------------

std::string sha256_hex(std::string_view data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &length, EVP_sha256(), nullptr) != 1)
    throw Error(ErrorCode::StorageFailure, "sha256 failed");
  std::string hex;
  hex.reserve(length * 2);
  char buf[3];
  for (unsigned int i = 0; i < length; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", digest[i]);
    hex += buf;
  }
  return hex;
}

namespace {
constexpr const char* kSnapshotFormat = "crowdflow-snapshot/1";
}

std::string canonical_state(const SystemState& state) { return to_json(state).dump(); }

std::string snapshot(const SystemState& state) {
  const auto body = canonical_state(state);
  Json doc{{"format", kSnapshotFormat}, {"sha256", sha256_hex(body)}, {"state", to_json(state)}};
  return doc.dump() + "\n";
}

SystemState restore(std::string_view document) {
  Json doc;
  try {
    doc = Json::parse(document.begin(), document.end());
  } catch (const Json::parse_error& e) {
    throw Error(ErrorCode::CorruptSnapshot, std::string("unparseable snapshot: ") + e.what());
  }
  if (!doc.is_object() || doc.value("format", "") != kSnapshotFormat || !doc.contains("state") ||
      !doc.contains("sha256") || !doc.at("sha256").is_string())
    throw Error(ErrorCode::CorruptSnapshot, "not a snapshot document");
  const auto body = doc.at("state").dump();
  if (sha256_hex(body) != doc.at("sha256").get<std::string>())
    throw Error(ErrorCode::CorruptSnapshot, "snapshot digest mismatch");
  auto state = system_state_from_json(doc.at("state"));
  if (canonical_state(state) != body) throw Error(ErrorCode::CorruptSnapshot, "snapshot is not canonical");
  return state;
}

}  // namespace crowdflow
