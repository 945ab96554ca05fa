#pragma once

// Session logs (JSONL), offline analysis, WAV export and the material
// parameter file.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "tapstroop/error.hpp"
#include "tapstroop/events.hpp"
#include "tapstroop/protocol.hpp"
#include "tapstroop/signal.hpp"

namespace tapstroop {

// ---------------------------------------------------------------------------
// Event log

inline std::string to_jsonl(const EventRecord& r) {
  nlohmann::json j{{"seq", r.seq}, {"t_us", r.t_us}, {"kind", event_kind_name(r.kind)}, {"payload", r.payload}};
  return j.dump();
}

inline void write_log(std::span<const EventRecord> events, std::ostream& out) {
  for (const auto& r : events) out << to_jsonl(r) << '\n';
}

inline void write_log(std::span<const EventRecord> events, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::Io, "cannot open '" + path.string() + "' for writing");
  write_log(events, out);
  out.flush();
  if (!out) throw Error(Errc::Io, "write failed for '" + path.string() + "'");
}

inline std::string write_log_string(std::span<const EventRecord> events) {
  std::ostringstream out;
  write_log(events, out);
  return out.str();
}

inline EventRecord parse_record(const std::string& line, std::size_t line_no) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw LogError(Errc::ParseError, line_no, e.what());
  }
  if (!j.is_object()) throw LogError(Errc::ParseError, line_no, "record is not a JSON object");
  for (const char* key : {"seq", "t_us", "kind", "payload"})
    if (!j.contains(key)) throw LogError(Errc::ParseError, line_no, std::string("missing key '") + key + "'");
  if (!j["seq"].is_number_unsigned()) throw LogError(Errc::ParseError, line_no, "seq must be a non-negative integer");
  if (!j["t_us"].is_number_integer()) throw LogError(Errc::ParseError, line_no, "t_us must be an integer");
  if (!j["kind"].is_string()) throw LogError(Errc::ParseError, line_no, "kind must be a string");
  if (!j["payload"].is_object()) throw LogError(Errc::ParseError, line_no, "payload must be an object");
  const auto kind = parse_event_kind(j["kind"].get<std::string>());
  if (!kind) throw LogError(Errc::ParseError, line_no, "unknown kind '" + j["kind"].get<std::string>() + "'");
  return {j["seq"].get<std::uint64_t>(), j["t_us"].get<std::int64_t>(), *kind, std::move(j["payload"])};
}

/// Inverse of write_log. Records must be numbered 1, 2, 3, ... with
/// non-decreasing timestamps; a gap or reordering is CorruptLog.
inline std::vector<EventRecord> read_log(std::istream& in) {
  std::vector<EventRecord> events;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto r = parse_record(line, line_no);
    if (r.seq != events.size() + 1)
      throw LogError(Errc::CorruptLog, line_no,
                     "expected seq " + std::to_string(events.size() + 1) + ", found " + std::to_string(r.seq));
    if (!events.empty() && r.t_us < events.back().t_us)
      throw LogError(Errc::CorruptLog, line_no, "timestamp decreases");
    events.push_back(std::move(r));
  }
  return events;
}

inline std::vector<EventRecord> read_log(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::Io, "cannot open '" + path.string() + "'");
  return read_log(in);
}

inline std::vector<EventRecord> read_log_string(const std::string& text) {
  std::istringstream in(text);
  return read_log(in);
}

// ---------------------------------------------------------------------------
// Analysis

/// Session header stored in the first TrialStart record.
inline const nlohmann::json* session_header(std::span<const EventRecord> events) {
  for (const auto& r : events)
    if (r.kind == EventKind::TrialStart && r.payload.contains("session")) return &r.payload["session"];
  return nullptr;
}

inline SessionConfig session_config(std::span<const EventRecord> events) {
  const auto* header = session_header(events);
  if (!header) throw Error(Errc::ParseError, "log has no session header");
  return session_config_from_json(*header);
}

inline std::vector<Trial> reconstruct_trials(std::span<const EventRecord> events) {
  std::vector<Trial> trials;
  for (const auto& r : events) {
    if (r.kind != EventKind::TrialResult) continue;
    try {
      trials.push_back(trial_from_json(r.payload));
    } catch (const nlohmann::json::exception& e) {
      throw LogError(Errc::ParseError, r.seq, e.what());
    }
  }
  return trials;
}

/// A log without a SessionEnd record is summarized as partial.
inline SessionSummary analyze(std::span<const EventRecord> events) {
  const bool complete = std::any_of(events.begin(), events.end(),
                                    [](const EventRecord& r) { return r.kind == EventKind::SessionEnd; });
  const auto policy = session_header(events) ? session_config(events).rt_policy : RtPolicy::CorrectOnly;
  const auto trials = reconstruct_trials(events);
  return summarize(trials, policy, !complete);
}

inline SessionSummary analyze(const std::filesystem::path& path) { return analyze(read_log(path)); }

/// Re-runs the recorded contacts and responses through a fresh Session.
inline Session replay(std::span<const EventRecord> events, const MaterialTable& materials = placeholder_materials()) {
  const auto* header = session_header(events);
  if (!header) throw Error(Errc::ParseError, "log has no session header");
  Session session(session_config_from_json(*header), materials, events.front().t_us,
                  header->contains("meta") ? (*header)["meta"] : nlohmann::json(nullptr));
  for (const auto& r : events) {
    if (r.kind == EventKind::Contact) {
      session.on_contact({r.t_us, r.payload.at("velocity").get<double>(), r.payload.at("tick").get<std::int64_t>()});
    } else if (r.kind == EventKind::Response) {
      session.on_response(material_from_json(r.payload.at("key")), r.t_us, r.payload.at("onset_us").get<std::int64_t>(),
                          r.payload.at("trial").get<std::size_t>());
    }
  }
  return session;
}

// ---------------------------------------------------------------------------
// WAV export: RIFF/WAVE, mono, 16-bit signed little-endian PCM.

inline std::int16_t pcm16(double x) {
  return static_cast<std::int16_t>(std::lround(std::clamp(x, -1.0, 1.0) * 32767.0));
}

inline std::vector<std::uint8_t> encode_wav(const WaveformBuffer& buffer) {
  require(!buffer.empty(), "encode_wav: buffer is empty");
  require(buffer.sample_rate >= 1.0 && buffer.sample_rate <= 4294967295.0 &&
              buffer.sample_rate == std::floor(buffer.sample_rate),
          "encode_wav: sample rate must be a positive integer");
  const auto rate = static_cast<std::uint32_t>(buffer.sample_rate);
  constexpr std::uint16_t kChannels = 1;
  constexpr std::uint16_t kBits = 16;
  constexpr std::uint16_t kBlockAlign = kChannels * kBits / 8;
  const auto data_bytes = static_cast<std::uint32_t>(buffer.size() * kBlockAlign);

  std::vector<std::uint8_t> out;
  out.reserve(44 + data_bytes);
  auto tag = [&](const char* s) { out.insert(out.end(), s, s + 4); };
  auto u16 = [&](std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xFF));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
  };
  auto u32 = [&](std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
  };

  tag("RIFF");
  u32(36 + data_bytes);
  tag("WAVE");
  tag("fmt ");
  u32(16);
  u16(1);  // PCM
  u16(kChannels);
  u32(rate);
  u32(rate * kBlockAlign);
  u16(kBlockAlign);
  u16(kBits);
  tag("data");
  u32(data_bytes);
  for (double x : buffer.samples) u16(static_cast<std::uint16_t>(pcm16(x)));
  return out;
}

inline void write_wav(const WaveformBuffer& buffer, const std::filesystem::path& path) {
  const auto bytes = encode_wav(buffer);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::Io, "cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(Errc::Io, "write failed for '" + path.string() + "'");
}

// ---------------------------------------------------------------------------
// materials.json: {"schema": 1, "rubber": {"A":…, "B":…, "f":…}, "aluminum": {…}}

inline constexpr int kMaterialsSchema = 1;

inline MaterialTable materials_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw Error(Errc::ParseError, "materials: top level must be an object");
  if (j.value("schema", -1) != kMaterialsSchema)
    throw Error(Errc::ParseError, "materials: unsupported or missing schema (expected " +
                                      std::to_string(kMaterialsSchema) + ")");
  MaterialTable table;
  for (Material m : kMaterials) {
    const std::string name(material_name(m));
    if (!j.contains(name)) throw Error(Errc::ParseError, "materials: missing '" + name + "'");
    const auto& e = j[name];
    try {
      table[m] = MaterialParams{m, e.at("A").get<double>(), e.at("B").get<double>(), e.at("f").get<double>()};
    } catch (const nlohmann::json::exception& ex) {
      throw Error(Errc::ParseError, "materials: '" + name + "': " + ex.what());
    }
    if (!table[m].valid()) throw Error(Errc::ParseError, "materials: '" + name + "' needs A >= 0, B >= 0, f > 0");
  }
  return table;
}

inline nlohmann::json materials_to_json(const MaterialTable& t) {
  nlohmann::json j{{"schema", kMaterialsSchema}};
  for (Material m : kMaterials)
    j[std::string(material_name(m))] = {{"A", t[m].amplitude}, {"B", t[m].decay_rate}, {"f", t[m].frequency}};
  return j;
}

inline MaterialTable load_materials(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::Io, "cannot open '" + path.string() + "'");
  try {
    return materials_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(Errc::ParseError, path.string() + ": " + e.what());
  }
}

}  // namespace tapstroop
