#pragma once

// Test stand-in for the browser frontend: a scripted client that speaks the
// wire protocol, and a discrete-event link that delivers frames between it
// and a SessionHost with configurable one-way delays.

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <queue>
#include <string>
#include <vector>

#include <json.hpp>

#include "tapstroop/participant.hpp"
#include "tapstroop/service.hpp"

namespace tapstroop::testing {

struct ClientBehavior {
  enum class Fault { None, ResponseBeforeTap, DuplicateResponse, DoubleTap, DisconnectAfterTrials };

  std::uint64_t seed = 1;
  ResponderModel model{};
  double velocity_min = 0.3;
  double velocity_max = 0.9;
  std::int64_t think_us = 400000;           // trial_start -> tap
  std::int64_t display_latency_us = 16000;  // stimulus arrival -> texture painted
  Fault fault = Fault::None;
  std::size_t disconnect_after = 0;  // with DisconnectAfterTrials
};

struct Outgoing {
  std::int64_t at_client_us;
  std::string text;
};

class ScriptedClient {
 public:
  ScriptedClient(std::string session_id, ClientBehavior behavior)
      : id_(std::move(session_id)),
        behavior_(behavior),
        responder_([&] {
          auto m = behavior.model;
          m.seed = derive_seed(behavior.seed, 1);
          return m;
        }()),
        rng_(derive_seed(behavior.seed, 2)) {}

  Outgoing hello(std::int64_t now) { return send(now, "hello", {{"client", "scripted"}}); }

  std::vector<Outgoing> receive(const WireMessage& m, std::int64_t now) {
    received_.push_back(m);
    std::vector<Outgoing> out;
    if (done_) return out;
    if (m.type == "ping") {
      out.push_back(send(now, "pong", {{"ping", m.body.at("ping")}, {"client_t_us", now}}));
    } else if (m.type == "trial_start") {
      const auto trial = m.body.at("trial").get<std::size_t>();
      blocks_[trial] = *parse_block(m.body.at("block").get<std::string>());
      visuals_[trial] = *parse_material(m.body.at("visual").get<std::string>());
      if (behavior_.fault == ClientBehavior::Fault::DisconnectAfterTrials && trial >= behavior_.disconnect_after) {
        done_ = disconnected_ = true;
        return out;
      }
      const std::int64_t t_tap = now + behavior_.think_us;
      if (behavior_.fault == ClientBehavior::Fault::ResponseBeforeTap && trial == 0) {
        out.push_back(send(t_tap, "response",
                           {{"trial", trial}, {"key", "rubber"}, {"t_us", t_tap}, {"displayed_us", t_tap - 1}}));
        return out;
      }
      const double v = rng_.uniform(behavior_.velocity_min, behavior_.velocity_max);
      out.push_back(send(t_tap, "tap", {{"trial", trial}, {"velocity", v}, {"t_us", t_tap}}));
      if (behavior_.fault == ClientBehavior::Fault::DoubleTap)
        out.push_back(send(t_tap + 5000, "tap", {{"trial", trial}, {"velocity", v}, {"t_us", t_tap + 5000}}));
    } else if (m.type == "stimulus") {
      const auto trial = m.body.at("trial").get<std::size_t>();
      const std::int64_t displayed = now + behavior_.display_latency_us;
      const auto answer = responder_.sample(blocks_.at(trial), visuals_.at(trial));
      const std::int64_t t_resp = displayed + std::max<std::int64_t>(1, std::llround(answer.rt_ms * 1000.0));
      client_rt_ms_[trial] = static_cast<double>(t_resp - displayed) / 1000.0;
      nlohmann::json body{{"trial", trial}, {"key", material_name(answer.key)}, {"t_us", t_resp}, {"displayed_us", displayed}};
      out.push_back(send(t_resp, "response", body));
      if (behavior_.fault == ClientBehavior::Fault::DuplicateResponse) {
        body["t_us"] = t_resp + 1000;
        out.push_back(send(t_resp + 1000, "response", body));
      }
    } else if (m.type == "session_summary") {
      summary_ = m.body;
      done_ = true;
    } else if (m.type == "protocol_error") {
      protocol_error_ = m.body;
      done_ = true;
    }
    return out;
  }

  bool done() const { return done_; }
  bool disconnected() const { return disconnected_; }
  const std::map<std::size_t, double>& client_rt_ms() const { return client_rt_ms_; }
  const std::optional<nlohmann::json>& summary() const { return summary_; }
  const std::optional<nlohmann::json>& protocol_error() const { return protocol_error_; }
  const std::vector<WireMessage>& received() const { return received_; }

 private:
  Outgoing send(std::int64_t at, std::string type, nlohmann::json body) {
    return {at, to_text(WireMessage{std::move(type), id_, ++seq_, std::nullopt, std::move(body)})};
  }

  std::string id_;
  ClientBehavior behavior_;
  Responder responder_;
  Rng rng_;
  std::uint64_t seq_ = 0;
  std::map<std::size_t, Block> blocks_;
  std::map<std::size_t, Material> visuals_;
  std::map<std::size_t, double> client_rt_ms_;
  std::optional<nlohmann::json> summary_;
  std::optional<nlohmann::json> protocol_error_;
  std::vector<WireMessage> received_;
  bool done_ = false;
  bool disconnected_ = false;
};

/// Ordered, delayed, bidirectional link between a ScriptedClient and a
/// SessionHost on a shared virtual timeline. The server clock reads true
/// time; the client clock reads true time minus `client_behind_us`.
class SimulatedLink {
 public:
  using Delay = std::function<std::int64_t()>;

  SimulatedLink(Delay up, Delay down, std::int64_t client_behind_us = 0)
      : up_(std::move(up)), down_(std::move(down)), skew_(client_behind_us) {}

  std::int64_t now() const { return now_; }
  SessionHost::Clock server_clock() {
    return [this] { return now_; };
  }

  /// Runs until the client is done, the host closes, or nothing is in flight.
  void run(SessionHost& host, ScriptedClient& client, std::int64_t start_true_us = 1000000) {
    now_ = start_true_us;
    client_send(client.hello(now_ - skew_));
    while (!queue_.empty()) {
      const auto ev = queue_.top();
      queue_.pop();
      now_ = ev.at;
      if (ev.to_server) {
        if (host.closed()) continue;
        for (const auto& reply : host.handle(ev.text)) {
          down_last_ = std::max(down_last_, now_ + down_());
          queue_.push({down_last_, order_++, false, to_text(reply)});
        }
      } else {
        if (client.done()) continue;
        for (auto& out : client.receive(parse_wire(ev.text), now_ - skew_)) client_send(std::move(out));
      }
      if (client.disconnected()) {
        host.disconnect();
        break;
      }
    }
  }

 private:
  struct Event {
    std::int64_t at;
    std::uint64_t order;
    bool to_server;
    std::string text;
    bool operator>(const Event& o) const { return at != o.at ? at > o.at : order > o.order; }
  };

  void client_send(Outgoing out) {
    const std::int64_t sent_true = std::max(out.at_client_us + skew_, now_);
    up_last_ = std::max(up_last_, sent_true + up_());
    queue_.push({up_last_, order_++, true, std::move(out.text)});
  }

  Delay up_, down_;
  std::int64_t skew_;
  std::int64_t now_ = 0;
  std::int64_t up_last_ = 0;
  std::int64_t down_last_ = 0;
  std::uint64_t order_ = 0;
  std::priority_queue<Event, std::vector<Event>, std::greater<>> queue_;
};

}  // namespace tapstroop::testing
