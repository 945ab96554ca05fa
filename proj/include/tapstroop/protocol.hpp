#pragma once

// Stroop session state machine. A session is three blocks (practice,
// congruent, incongruent); each trial waits for one contact, presents the
// stimulus, then waits for one keypad response. Every accepted event is
// appended to the session's event log; rejected events leave the state
// untouched and are recorded as diagnostics.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "tapstroop/device.hpp"
#include "tapstroop/error.hpp"
#include "tapstroop/events.hpp"
#include "tapstroop/rng.hpp"
#include "tapstroop/signal.hpp"

namespace tapstroop {

enum class Block { Practice, Congruent, Incongruent };
enum class BlockOrder { PracticeCongruentIncongruent, PracticeIncongruentCongruent };
enum class RtPolicy { CorrectOnly, AllResponses };

constexpr std::string_view block_name(Block b) {
  switch (b) {
    case Block::Practice: return "practice";
    case Block::Congruent: return "congruent";
    case Block::Incongruent: return "incongruent";
  }
  return "";
}

inline std::optional<Block> parse_block(std::string_view s) {
  if (s == "practice") return Block::Practice;
  if (s == "congruent") return Block::Congruent;
  if (s == "incongruent") return Block::Incongruent;
  return std::nullopt;
}

constexpr std::array<Block, 3> block_sequence(BlockOrder order) {
  return order == BlockOrder::PracticeCongruentIncongruent
             ? std::array{Block::Practice, Block::Congruent, Block::Incongruent}
             : std::array{Block::Practice, Block::Incongruent, Block::Congruent};
}

struct SessionConfig {
  std::uint64_t seed = 0;
  int trials_per_condition = 6;
  double velocity_limit = 1.0;  // m/s; faster taps are rendered at the limit
  BlockOrder block_order = BlockOrder::PracticeCongruentIncongruent;
  RtPolicy rt_policy = RtPolicy::CorrectOnly;

  void validate() const {
    require(trials_per_condition >= 2 && trials_per_condition % 2 == 0,
            "SessionConfig: trials_per_condition must be even and >= 2", Errc::InvalidConfig);
    require(velocity_limit > 0.0 && std::isfinite(velocity_limit), "SessionConfig: velocity_limit must be > 0",
            Errc::InvalidConfig);
  }

  friend bool operator==(const SessionConfig&, const SessionConfig&) = default;
};

struct Response {
  Material key = Material::Rubber;
  std::int64_t timestamp_us = 0;

  friend bool operator==(const Response&, const Response&) = default;
};

struct Trial {
  std::size_t index = 0;
  Block block = Block::Practice;
  Material visual = Material::Rubber;
  std::optional<Material> tactile;  // absent in practice
  std::optional<ContactEvent> contact;
  std::optional<double> rendered_velocity;
  std::optional<std::int64_t> stimulus_onset_us;
  std::optional<Response> response;
  std::optional<double> rt_ms;
  std::optional<bool> correct;

  bool complete() const { return response.has_value(); }

  friend bool operator==(const Trial&, const Trial&) = default;
};

struct Schedule {
  std::array<Block, 3> blocks{};
  std::vector<Trial> trials;

  std::size_t block_size() const { return trials.size() / 3; }
};

/// Balanced, seeded schedule: every block shows each visual material exactly
/// trials_per_condition / 2 times in shuffled order.
inline Schedule build_schedule(const SessionConfig& config) {
  config.validate();
  Schedule s;
  s.blocks = block_sequence(config.block_order);
  Rng rng(derive_seed(config.seed, /*stream=*/0x5343484544ULL));
  const auto per_block = static_cast<std::size_t>(config.trials_per_condition);
  for (Block block : s.blocks) {
    std::vector<Material> visuals(per_block, Material::Rubber);
    std::fill(visuals.begin() + static_cast<std::ptrdiff_t>(per_block / 2), visuals.end(), Material::Aluminum);
    rng.shuffle(std::span(visuals));
    for (Material visual : visuals) {
      Trial t;
      t.index = s.trials.size();
      t.block = block;
      t.visual = visual;
      if (block == Block::Congruent) t.tactile = visual;
      if (block == Block::Incongruent) t.tactile = other_material(visual);
      s.trials.push_back(t);
    }
  }
  return s;
}

struct StimulusAssignment {
  std::size_t trial = 0;
  Material visual_texture = Material::Rubber;
  std::optional<MaterialParams> tactile;  // none: vibrator not driven
  double velocity = 0.0;                  // rendering velocity after the limit
  std::int64_t onset_us = 0;
};

struct TrialResult {
  std::size_t trial = 0;
  Block block = Block::Practice;
  double rt_ms = 0.0;
  bool correct = false;
  bool block_complete = false;
  bool session_complete = false;
};

struct SessionSummary {
  double mean_rt_congruent_ms = 0.0;
  double mean_rt_incongruent_ms = 0.0;
  double stroop_delta_ms = 0.0;
  double accuracy_congruent = 0.0;
  double accuracy_incongruent = 0.0;
  std::size_t n_used_congruent = 0;
  std::size_t n_used_incongruent = 0;
  bool partial = false;

  friend bool operator==(const SessionSummary&, const SessionSummary&) = default;
};

/// Condition means over completed trials; practice is ignored. RTs are summed
/// in sorted order so the result does not depend on trial order.
inline SessionSummary summarize(std::span<const Trial> trials, RtPolicy policy, bool partial = false) {
  struct Acc {
    std::vector<double> rts;
    std::size_t answered = 0;
    std::size_t correct = 0;
  } congruent, incongruent;

  for (const auto& t : trials) {
    if (t.block == Block::Practice || !t.rt_ms || !t.correct) continue;
    Acc& acc = t.block == Block::Congruent ? congruent : incongruent;
    ++acc.answered;
    if (*t.correct) ++acc.correct;
    if (*t.correct || policy == RtPolicy::AllResponses) acc.rts.push_back(*t.rt_ms);
  }

  auto mean = [](std::vector<double>& rts, std::string_view cond) {
    if (rts.empty()) throw Error(Errc::InsufficientData, "no includable trials in " + std::string(cond) + " condition");
    std::sort(rts.begin(), rts.end());
    double sum = 0.0;
    for (double r : rts) sum += r;
    return sum / static_cast<double>(rts.size());
  };

  SessionSummary s;
  s.mean_rt_congruent_ms = mean(congruent.rts, "congruent");
  s.mean_rt_incongruent_ms = mean(incongruent.rts, "incongruent");
  s.stroop_delta_ms = s.mean_rt_incongruent_ms - s.mean_rt_congruent_ms;
  s.accuracy_congruent = static_cast<double>(congruent.correct) / static_cast<double>(congruent.answered);
  s.accuracy_incongruent = static_cast<double>(incongruent.correct) / static_cast<double>(incongruent.answered);
  s.n_used_congruent = congruent.rts.size();
  s.n_used_incongruent = incongruent.rts.size();
  s.partial = partial;
  return s;
}

// ---------------------------------------------------------------------------
// JSON forms shared by the log, the wire protocol and the CLI

inline std::string_view block_order_name(BlockOrder o) {
  return o == BlockOrder::PracticeCongruentIncongruent ? "practice-congruent-incongruent"
                                                       : "practice-incongruent-congruent";
}

inline std::string_view rt_policy_name(RtPolicy p) {
  return p == RtPolicy::CorrectOnly ? "correct-only" : "all-responses";
}

inline nlohmann::json to_json(const SessionConfig& c) {
  return {{"seed", c.seed},
          {"trials_per_condition", c.trials_per_condition},
          {"velocity_limit", c.velocity_limit},
          {"block_order", block_order_name(c.block_order)},
          {"rt_policy", rt_policy_name(c.rt_policy)}};
}

inline SessionConfig session_config_from_json(const nlohmann::json& j) {
  SessionConfig c;
  c.seed = j.value("seed", std::uint64_t{0});
  c.trials_per_condition = j.value("trials_per_condition", 6);
  c.velocity_limit = j.value("velocity_limit", 1.0);
  const auto order = j.value("block_order", std::string(block_order_name(c.block_order)));
  if (order == block_order_name(BlockOrder::PracticeCongruentIncongruent))
    c.block_order = BlockOrder::PracticeCongruentIncongruent;
  else if (order == block_order_name(BlockOrder::PracticeIncongruentCongruent))
    c.block_order = BlockOrder::PracticeIncongruentCongruent;
  else
    throw Error(Errc::InvalidConfig, "unknown block_order '" + order + "'");
  const auto policy = j.value("rt_policy", std::string(rt_policy_name(c.rt_policy)));
  if (policy == rt_policy_name(RtPolicy::CorrectOnly))
    c.rt_policy = RtPolicy::CorrectOnly;
  else if (policy == rt_policy_name(RtPolicy::AllResponses))
    c.rt_policy = RtPolicy::AllResponses;
  else
    throw Error(Errc::InvalidConfig, "unknown rt_policy '" + policy + "'");
  return c;
}

inline nlohmann::json to_json(const MaterialParams& p) {
  return {{"material", material_name(p.material)}, {"A", p.amplitude}, {"B", p.decay_rate}, {"f", p.frequency}};
}

inline nlohmann::json to_json(const SessionSummary& s) {
  return {{"mean_rt_congruent_ms", s.mean_rt_congruent_ms},
          {"mean_rt_incongruent_ms", s.mean_rt_incongruent_ms},
          {"stroop_delta_ms", s.stroop_delta_ms},
          {"accuracy_congruent", s.accuracy_congruent},
          {"accuracy_incongruent", s.accuracy_incongruent},
          {"n_used_congruent", s.n_used_congruent},
          {"n_used_incongruent", s.n_used_incongruent},
          {"partial", s.partial}};
}

inline nlohmann::json optional_material(const std::optional<Material>& m) {
  return m ? nlohmann::json(material_name(*m)) : nlohmann::json(nullptr);
}

/// Full trial record as written in TrialResult payloads.
inline nlohmann::json to_json(const Trial& t) {
  nlohmann::json j{{"trial", t.index},
                   {"block", block_name(t.block)},
                   {"visual", material_name(t.visual)},
                   {"tactile", optional_material(t.tactile)}};
  if (t.contact)
    j["contact"] = {{"t_us", t.contact->timestamp_us}, {"velocity", t.contact->velocity}, {"tick", t.contact->tick_index}};
  if (t.rendered_velocity) j["rendered_velocity"] = *t.rendered_velocity;
  if (t.stimulus_onset_us) j["onset_us"] = *t.stimulus_onset_us;
  if (t.response) {
    j["key"] = material_name(t.response->key);
    j["response_us"] = t.response->timestamp_us;
  }
  if (t.rt_ms) j["rt_ms"] = *t.rt_ms;
  if (t.correct) j["correct"] = *t.correct;
  return j;
}

inline Material material_from_json(const nlohmann::json& j) {
  const auto m = parse_material(j.get<std::string>());
  if (!m) throw Error(Errc::ParseError, "unknown material '" + j.get<std::string>() + "'");
  return *m;
}

inline Trial trial_from_json(const nlohmann::json& j) {
  Trial t;
  t.index = j.at("trial").get<std::size_t>();
  const auto block = parse_block(j.at("block").get<std::string>());
  if (!block) throw Error(Errc::ParseError, "unknown block");
  t.block = *block;
  t.visual = material_from_json(j.at("visual"));
  if (!j.at("tactile").is_null()) t.tactile = material_from_json(j.at("tactile"));
  if (j.contains("contact")) {
    const auto& c = j.at("contact");
    t.contact = ContactEvent{c.at("t_us").get<std::int64_t>(), c.at("velocity").get<double>(),
                             c.at("tick").get<std::int64_t>()};
  }
  if (j.contains("rendered_velocity")) t.rendered_velocity = j.at("rendered_velocity").get<double>();
  if (j.contains("onset_us")) t.stimulus_onset_us = j.at("onset_us").get<std::int64_t>();
  if (j.contains("key")) t.response = Response{material_from_json(j.at("key")), j.at("response_us").get<std::int64_t>()};
  if (j.contains("rt_ms")) t.rt_ms = j.at("rt_ms").get<double>();
  if (j.contains("correct")) t.correct = j.at("correct").get<bool>();
  return t;
}

// ---------------------------------------------------------------------------

struct Diagnostic {
  Errc code;
  std::int64_t t_us;
  std::string detail;
};

class Session {
 public:
  /// `meta` is attached to the session header of the first TrialStart record.
  explicit Session(SessionConfig config, MaterialTable materials = placeholder_materials(), std::int64_t start_us = 0,
                   nlohmann::json meta = nullptr)
      : config_(config), materials_(materials), schedule_(build_schedule(config_)) {
    auto header = to_json(config_);
    if (!meta.is_null()) header["meta"] = std::move(meta);
    start_trial(start_us, std::move(header));
  }

  const SessionConfig& config() const { return config_; }
  const MaterialTable& materials() const { return materials_; }
  const std::array<Block, 3>& blocks() const { return schedule_.blocks; }
  const std::vector<Trial>& trials() const { return schedule_.trials; }
  const std::vector<EventRecord>& events() const { return events_; }
  const std::vector<Diagnostic>& diagnostics() const { return diagnostics_; }

  bool finished() const { return active_ >= schedule_.trials.size(); }
  std::optional<std::size_t> active_index() const {
    return finished() ? std::nullopt : std::optional<std::size_t>(active_);
  }
  const Trial* active_trial() const { return finished() ? nullptr : &schedule_.trials[active_]; }
  std::int64_t last_timestamp_us() const { return events_.empty() ? 0 : events_.back().t_us; }

  StimulusAssignment on_contact(const ContactEvent& event) {
    if (finished()) reject(Errc::IgnoredContact, event.timestamp_us, "contact with no active trial");
    Trial& trial = schedule_.trials[active_];
    if (trial.contact)
      reject(Errc::IgnoredContact, event.timestamp_us,
             "second contact in trial " + std::to_string(trial.index) + " before response");
    if (!(event.velocity >= 0.0) || !std::isfinite(event.velocity))
      reject(Errc::ContractViolation, event.timestamp_us, "contact velocity must be finite and >= 0");
    if (event.timestamp_us < last_timestamp_us())
      reject(Errc::ContractViolation, event.timestamp_us, "contact timestamp precedes the previous event");

    StimulusAssignment a;
    a.trial = trial.index;
    a.visual_texture = trial.visual;
    a.velocity = std::min(event.velocity, config_.velocity_limit);
    a.onset_us = event.timestamp_us;
    if (trial.tactile) a.tactile = materials_[*trial.tactile];

    trial.contact = event;
    trial.rendered_velocity = a.velocity;
    trial.stimulus_onset_us = a.onset_us;

    append(event.timestamp_us, EventKind::Contact,
           {{"trial", trial.index}, {"velocity", event.velocity}, {"tick", event.tick_index}});
    nlohmann::json tactile = nullptr;
    if (a.tactile) {
      tactile = to_json(*a.tactile);
      tactile["velocity"] = a.velocity;
    }
    append(a.onset_us, EventKind::Stimulus,
           {{"trial", trial.index}, {"texture", material_name(a.visual_texture)}, {"tactile", tactile}});
    return a;
  }

  /// `onset_us` overrides the stimulus onset recorded at contact (used when
  /// the stimulus is displayed on a remote client). `trial_index`, when given,
  /// names the trial the response is meant for.
  TrialResult on_response(Material key, std::int64_t timestamp_us, std::optional<std::int64_t> onset_us = std::nullopt,
                          std::optional<std::size_t> trial_index = std::nullopt) {
    if (trial_index && *trial_index < active_ && *trial_index < schedule_.trials.size())
      reject(Errc::DuplicateResponse, timestamp_us, "trial " + std::to_string(*trial_index) + " already answered");
    if (finished()) reject(Errc::DuplicateResponse, timestamp_us, "session already complete");
    Trial& trial = schedule_.trials[active_];
    if (trial_index && *trial_index != trial.index)
      reject(Errc::EarlyResponse, timestamp_us, "response for trial " + std::to_string(*trial_index) + " not yet started");
    if (!trial.contact) reject(Errc::EarlyResponse, timestamp_us, "response before contact");
    const std::int64_t onset = onset_us.value_or(*trial.stimulus_onset_us);
    if (onset < trial.contact->timestamp_us)
      reject(Errc::ContractViolation, timestamp_us, "stimulus onset precedes contact");
    if (timestamp_us <= onset) reject(Errc::EarlyResponse, timestamp_us, "response not after stimulus onset");

    trial.stimulus_onset_us = onset;
    trial.response = Response{key, timestamp_us};
    trial.rt_ms = static_cast<double>(timestamp_us - onset) / 1000.0;
    trial.correct = key == trial.visual;

    TrialResult r;
    r.trial = trial.index;
    r.block = trial.block;
    r.rt_ms = *trial.rt_ms;
    r.correct = *trial.correct;

    append(timestamp_us, EventKind::Response,
           {{"trial", trial.index}, {"key", material_name(key)}, {"onset_us", onset}});
    append(timestamp_us, EventKind::TrialResult, to_json(trial));

    ++active_;
    r.block_complete = finished() || schedule_.trials[active_].block != trial.block;
    r.session_complete = finished();
    if (r.block_complete) append(timestamp_us, EventKind::BlockEnd, {{"block", block_name(trial.block)}});
    if (r.session_complete)
      append(timestamp_us, EventKind::SessionEnd, {{"trials", schedule_.trials.size()}});
    else
      start_trial(timestamp_us, nullptr);
    return r;
  }

  SessionSummary summarize() const { return tapstroop::summarize(schedule_.trials, config_.rt_policy, !finished()); }

 private:
  [[noreturn]] void reject(Errc code, std::int64_t t_us, const std::string& detail) {
    diagnostics_.push_back({code, t_us, detail});
    throw Error(code, detail);
  }

  void start_trial(std::int64_t t_us, nlohmann::json header) {
    const Trial& t = schedule_.trials[active_];
    nlohmann::json payload{{"trial", t.index},
                           {"block", block_name(t.block)},
                           {"visual", material_name(t.visual)},
                           {"tactile", optional_material(t.tactile)}};
    if (!header.is_null()) payload["session"] = std::move(header);
    append(t_us, EventKind::TrialStart, std::move(payload));
  }

  void append(std::int64_t t_us, EventKind kind, nlohmann::json payload) {
    events_.push_back({events_.size() + 1, t_us, kind, std::move(payload)});
  }

  SessionConfig config_;
  MaterialTable materials_;
  Schedule schedule_;
  std::size_t active_ = 0;
  std::vector<EventRecord> events_;
  std::vector<Diagnostic> diagnostics_;
};

}  // namespace tapstroop
