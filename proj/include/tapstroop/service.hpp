#pragma once

// Transport-independent session host for the browser frontend.
//
// Each connection owns one SessionHost. Inbound frames are JSON WireMessages
// processed strictly in arrival order; every call to handle() returns the
// frames to send back. Message flow:
//
//   client hello
//   server ping / client pong            (ping_count exchanges, clock offset)
//   server config, trial_start
//   repeat per trial:
//     client tap        {trial, velocity, t_us}
//     server stimulus   {trial, texture, tactile | null}
//     client response   {trial, key, t_us, displayed_us}
//     server trial_result [, block_end] [, trial_start | session_summary]
//
// Reaction times are computed from client timestamps only (response minus
// stimulus display), so link latency never enters an RT. Any message out of
// order is answered with protocol_error and the host closes.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "tapstroop/error.hpp"
#include "tapstroop/events.hpp"
#include "tapstroop/protocol.hpp"
#include "tapstroop/rng.hpp"
#include "tapstroop/signal.hpp"
#include "tapstroop/storage.hpp"

namespace tapstroop {

struct WireMessage {
  std::string type;
  std::string session_id;
  std::uint64_t seq = 0;
  std::optional<std::uint64_t> ack;
  nlohmann::json body = nlohmann::json::object();
};

inline std::string to_text(const WireMessage& m) {
  nlohmann::json j{{"type", m.type}, {"session_id", m.session_id}, {"seq", m.seq}, {"body", m.body}};
  if (m.ack) j["ack"] = *m.ack;
  return j.dump();
}

inline WireMessage parse_wire(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(Errc::ParseError, e.what());
  }
  if (!j.is_object() || !j.contains("type") || !j["type"].is_string() || !j.contains("seq") ||
      !j["seq"].is_number_unsigned())
    throw Error(Errc::ParseError, "message needs string 'type' and unsigned 'seq'");
  WireMessage m;
  m.type = j["type"].get<std::string>();
  m.seq = j["seq"].get<std::uint64_t>();
  if (j.contains("session_id") && j["session_id"].is_string()) m.session_id = j["session_id"].get<std::string>();
  if (j.contains("ack") && j["ack"].is_number_unsigned()) m.ack = j["ack"].get<std::uint64_t>();
  if (j.contains("body")) {
    if (!j["body"].is_object()) throw Error(Errc::ParseError, "body must be an object");
    m.body = std::move(j["body"]);
  }
  return m;
}

// ---------------------------------------------------------------------------
// Clock offset

struct PingSample {
  std::int64_t server_sent_us;
  std::int64_t server_received_us;
  std::int64_t client_stamp_us;
};

/// Median over exchanges of (server midpoint - client stamp), in µs. Positive
/// means the server clock reads ahead of the client's.
inline double estimate_clock_offset(std::span<const PingSample> samples) {
  if (samples.empty()) throw Error(Errc::CalibrationFailed, "no ping exchanges completed");
  std::vector<double> d;
  d.reserve(samples.size());
  for (const auto& s : samples)
    d.push_back(0.5 * static_cast<double>(s.server_sent_us + s.server_received_us) -
                static_cast<double>(s.client_stamp_us));
  std::sort(d.begin(), d.end());
  const auto n = d.size();
  return n % 2 ? d[n / 2] : 0.5 * (d[n / 2 - 1] + d[n / 2]);
}

// ---------------------------------------------------------------------------

struct ServiceConfig {
  SessionConfig session;  // seed is the base; each issued session derives its own
  MaterialTable materials = placeholder_materials();
  SynthesisConfig synthesis;
  int ping_count = 5;
  double tap_velocity_min = 0.3;  // range the client draws synthetic velocities from
  double tap_velocity_max = 0.9;

  void validate() const {
    session.validate();
    require(ping_count >= 3, "ServiceConfig: ping_count must be >= 3", Errc::InvalidConfig);
    require(tap_velocity_min >= 0.0 && tap_velocity_max >= tap_velocity_min, "ServiceConfig: bad tap velocity range",
            Errc::InvalidConfig);
  }
};

/// Stimulus rendered for one trial; kept so the transient can be fetched.
struct RenderedStimulus {
  std::size_t trial;
  MaterialParams params;
  double velocity;
};

class SessionHost {
 public:
  using Clock = std::function<std::int64_t()>;
  using StimulusSink = std::function<void(const RenderedStimulus&)>;

  enum class State { AwaitHello, Calibrating, Running, Done, Closed };

  SessionHost(std::string session_id, ServiceConfig config, Clock server_clock, StimulusSink on_stimulus = {})
      : id_(std::move(session_id)),
        config_(std::move(config)),
        clock_(std::move(server_clock)),
        on_stimulus_(std::move(on_stimulus)) {
    config_.validate();
  }

  const std::string& id() const { return id_; }
  State state() const { return state_; }
  bool closed() const { return state_ == State::Done || state_ == State::Closed; }
  bool finished() const { return state_ == State::Done; }
  const Session* session() const { return session_ ? &*session_ : nullptr; }
  std::optional<double> clock_offset_us() const { return offset_; }
  const std::optional<std::string>& error() const { return error_; }

  /// Session log so far; without SessionEnd when the session did not finish.
  std::vector<EventRecord> log() const { return session_ ? session_->events() : std::vector<EventRecord>{}; }

  std::vector<WireMessage> handle(std::string_view frame) {
    std::vector<WireMessage> out;
    if (closed()) return out;
    WireMessage in;
    try {
      in = parse_wire(frame);
    } catch (const Error& e) {
      return fail(out, std::nullopt, "ParseError", e.what());
    }
    if (last_client_seq_ && in.seq <= *last_client_seq_)
      return fail(out, in.seq, "OutOfOrderSeq", "client seq must increase");
    last_client_seq_ = in.seq;
    if (in.session_id != id_) return fail(out, in.seq, "WrongSession", "session_id does not match this connection");

    try {
      dispatch(in, out);
    } catch (const ProtocolFault& e) {
      return fail(out, in.seq, e.name, e.what());
    } catch (const Error& e) {
      return fail(out, in.seq, std::string(errc_name(e.code())), e.what());
    } catch (const nlohmann::json::exception& e) {
      return fail(out, in.seq, "InvalidMessage", e.what());
    }
    return out;
  }

  void disconnect() {
    if (!closed()) state_ = State::Closed;
  }

 private:
  struct ProtocolFault : Error {
    ProtocolFault(std::string fault, const std::string& what)
        : Error(Errc::ContractViolation, what), name(std::move(fault)) {}
    std::string name;
  };

  void dispatch(const WireMessage& in, std::vector<WireMessage>& out) {
    if (in.type == "ping") {
      emit(out, in.seq, "pong", {{"client_t_us", in.body.value("client_t_us", std::int64_t{0})},
                                 {"server_t_us", clock_()}});
      return;
    }
    switch (state_) {
      case State::AwaitHello:
        expect(in, "hello");
        state_ = State::Calibrating;
        send_ping(out, in.seq);
        return;
      case State::Calibrating:
        on_pong(in, out);
        return;
      case State::Running:
        if (in.type == "tap") return on_tap(in, out);
        if (in.type == "response") return on_response(in, out);
        expect(in, "");
        return;
      default:
        return;
    }
  }

  void expect(const WireMessage& in, std::string_view type) {
    static constexpr std::string_view kKnown[] = {"hello", "pong", "tap", "response", "ping"};
    if (std::find(std::begin(kKnown), std::end(kKnown), in.type) == std::end(kKnown))
      throw ProtocolFault("UnknownType", "unknown message type '" + in.type + "'");
    if (in.type != type) throw ProtocolFault("UnexpectedMessage", "'" + in.type + "' not valid in this state");
  }

  void send_ping(std::vector<WireMessage>& out, std::uint64_t ack) {
    ping_sent_us_ = clock_();
    emit(out, ack, "ping", {{"ping", pings_.size()}, {"server_t_us", *ping_sent_us_}});
  }

  void on_pong(const WireMessage& in, std::vector<WireMessage>& out) {
    if (in.type != "pong" || in.body.value("ping", std::size_t{~0u}) != pings_.size() ||
        !in.body.contains("client_t_us") || !in.body["client_t_us"].is_number_integer())
      throw Error(Errc::CalibrationFailed,
                  "expected pong " + std::to_string(pings_.size()) + " of " + std::to_string(config_.ping_count));
    pings_.push_back({*ping_sent_us_, clock_(), in.body["client_t_us"].get<std::int64_t>()});
    if (static_cast<int>(pings_.size()) < config_.ping_count) return send_ping(out, in.seq);

    offset_ = estimate_clock_offset(pings_);
    session_.emplace(config_.session, config_.materials, 0,
                     nlohmann::json{{"session_id", id_}, {"clock_offset_us", *offset_}});
    state_ = State::Running;
    emit(out, in.seq, "config",
         {{"session", to_json(config_.session)},
          {"clock_offset_us", *offset_},
          {"blocks", {block_name(session_->blocks()[0]), block_name(session_->blocks()[1]),
                      block_name(session_->blocks()[2])}},
          {"tap_velocity", {{"min", config_.tap_velocity_min}, {"max", config_.tap_velocity_max}}},
          {"keys", {{"r", "rubber"}, {"a", "aluminum"}}}});
    emit_trial_start(out, in.seq);
  }

  void on_tap(const WireMessage& in, std::vector<WireMessage>& out) {
    const auto trial = in.body.at("trial").get<std::size_t>();
    const auto velocity = in.body.at("velocity").get<double>();
    const auto t_us = in.body.at("t_us").get<std::int64_t>();
    if (trial != *session_->active_index())
      throw Error(Errc::IgnoredContact, "tap for trial " + std::to_string(trial) + " while trial " +
                                            std::to_string(*session_->active_index()) + " is active");
    const auto a = session_->on_contact({t_us, velocity, t_us / 100});
    nlohmann::json tactile = nullptr;
    if (a.tactile) {
      const auto n = transient_length(*a.tactile, config_.synthesis);
      tactile = to_json(*a.tactile);
      tactile["velocity"] = a.velocity;
      tactile["sample_rate"] = config_.synthesis.sample_rate;
      tactile["samples"] = a.velocity > 0.0 ? n : 0;
      tactile["href"] = "/session/" + id_ + "/transient/" + std::to_string(a.trial);
      if (on_stimulus_) on_stimulus_({a.trial, *a.tactile, a.velocity});
    }
    emit(out, in.seq, "stimulus", {{"trial", a.trial}, {"texture", material_name(a.visual_texture)}, {"tactile", tactile}});
  }

  void on_response(const WireMessage& in, std::vector<WireMessage>& out) {
    const auto trial = in.body.at("trial").get<std::size_t>();
    const auto key = material_from_json(in.body.at("key"));
    const auto t_us = in.body.at("t_us").get<std::int64_t>();
    const auto displayed = in.body.at("displayed_us").get<std::int64_t>();
    const auto r = session_->on_response(key, t_us, displayed, trial);
    emit(out, in.seq, "trial_result",
         {{"trial", r.trial}, {"block", block_name(r.block)}, {"rt_ms", r.rt_ms}, {"correct", r.correct}});
    if (r.block_complete) emit(out, in.seq, "block_end", {{"block", block_name(r.block)}});
    if (!r.session_complete) return emit_trial_start(out, in.seq);

    nlohmann::json body;
    try {
      body = to_json(session_->summarize());
    } catch (const Error& e) {
      body = {{"error", errc_name(e.code())}, {"detail", e.what()}};
    }
    emit(out, in.seq, "session_summary", std::move(body));
    state_ = State::Done;
  }

  void emit_trial_start(std::vector<WireMessage>& out, std::uint64_t ack) {
    const Trial& t = *session_->active_trial();
    emit(out, ack, "trial_start", {{"trial", t.index}, {"block", block_name(t.block)}, {"visual", material_name(t.visual)}});
  }

  void emit(std::vector<WireMessage>& out, std::optional<std::uint64_t> ack, std::string type, nlohmann::json body) {
    out.push_back({std::move(type), id_, ++server_seq_, ack, std::move(body)});
  }

  std::vector<WireMessage>& fail(std::vector<WireMessage>& out, std::optional<std::uint64_t> ack, std::string name,
                                 const std::string& detail) {
    error_ = name;
    emit(out, ack, "protocol_error", {{"error", name}, {"detail", detail}});
    state_ = State::Closed;
    return out;
  }

  std::string id_;
  ServiceConfig config_;
  Clock clock_;
  StimulusSink on_stimulus_;
  State state_ = State::AwaitHello;
  std::optional<std::uint64_t> last_client_seq_;
  std::uint64_t server_seq_ = 0;
  std::optional<std::int64_t> ping_sent_us_;
  std::vector<PingSample> pings_;
  std::optional<double> offset_;
  std::optional<Session> session_;
  std::optional<std::string> error_;
};

// ---------------------------------------------------------------------------

/// Sessions issued by one server process. Tokens are possession-based: a
/// connection naming an issued, unused token gets that session. Finished or
/// abandoned sessions are finalized to `<logs_dir>/<id>.jsonl`.
class SessionRegistry {
 public:
  SessionRegistry(ServiceConfig config, std::filesystem::path logs_dir = {}, std::size_t max_active = 1)
      : config_(std::move(config)), logs_dir_(std::move(logs_dir)), max_active_(max_active) {
    config_.validate();
    if (!logs_dir_.empty()) std::filesystem::create_directories(logs_dir_);
  }

  std::string issue_token() {
    std::lock_guard lock(mutex_);
    std::random_device rd;
    std::string token;
    static constexpr char kHex[] = "0123456789abcdef";
    for (int i = 0; i < 32; ++i) token += kHex[rd() & 0xF];
    records_[token].seed = derive_seed(config_.session.seed, 0x53455353ULL, issued_++);
    return token;
  }

  /// Host for a token, or nullptr when the token is unknown, already used, or
  /// the active-session limit is reached.
  std::unique_ptr<SessionHost> open(const std::string& token, SessionHost::Clock clock) {
    std::lock_guard lock(mutex_);
    const auto it = records_.find(token);
    if (it == records_.end() || it->second.opened || active_ >= max_active_) return nullptr;
    it->second.opened = true;
    ++active_;
    auto cfg = config_;
    cfg.session.seed = it->second.seed;
    return std::make_unique<SessionHost>(token, cfg, std::move(clock), [this, token](const RenderedStimulus& s) {
      std::lock_guard lock(mutex_);
      records_[token].stimuli[s.trial] = s;
    });
  }

  /// Stores the host's log (partial if unfinished) and releases its slot.
  void finalize(SessionHost& host) {
    host.disconnect();
    const auto text = write_log_string(host.log());
    std::lock_guard lock(mutex_);
    auto& rec = records_[host.id()];
    if (rec.finalized) return;
    rec.finalized = true;
    rec.finished = host.finished();
    rec.log = text;
    --active_;
    if (!logs_dir_.empty()) {
      std::ofstream out(logs_dir_ / (host.id() + ".jsonl"), std::ios::binary | std::ios::trunc);
      out << text;
    }
  }

  /// JSONL of a finished session.
  std::optional<std::string> log_for(const std::string& id) const {
    std::lock_guard lock(mutex_);
    const auto it = records_.find(id);
    if (it == records_.end() || !it->second.finalized || !it->second.finished) return std::nullopt;
    return it->second.log;
  }

  std::optional<std::vector<std::uint8_t>> transient_wav(const std::string& id, std::size_t trial) const {
    std::unique_lock lock(mutex_);
    const auto it = records_.find(id);
    if (it == records_.end()) return std::nullopt;
    const auto s = it->second.stimuli.find(trial);
    if (s == it->second.stimuli.end()) return std::nullopt;
    const auto stim = s->second;
    lock.unlock();
    const auto buffer = render_transient(stim.params, stim.velocity, config_.synthesis);
    if (buffer.empty()) return std::nullopt;
    return encode_wav(buffer);
  }

  const ServiceConfig& config() const { return config_; }
  std::size_t active() const {
    std::lock_guard lock(mutex_);
    return active_;
  }

 private:
  struct Record {
    std::uint64_t seed = 0;
    bool opened = false;
    bool finalized = false;
    bool finished = false;
    std::string log;
    std::map<std::size_t, RenderedStimulus> stimuli;
  };

  ServiceConfig config_;
  std::filesystem::path logs_dir_;
  std::size_t max_active_;
  mutable std::mutex mutex_;
  std::map<std::string, Record> records_;
  std::size_t active_ = 0;
  std::uint64_t issued_ = 0;
};

}  // namespace tapstroop
