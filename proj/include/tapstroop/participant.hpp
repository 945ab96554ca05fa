#pragma once

// Synthetic participant: taps the cube through the simulated device and
// answers with a lognormal reaction time that is shifted on incongruent
// trials, plus a per-condition error rate.

#include <cmath>
#include <cstdint>
#include <vector>

#include <json.hpp>

#include "tapstroop/device.hpp"
#include "tapstroop/error.hpp"
#include "tapstroop/events.hpp"
#include "tapstroop/protocol.hpp"
#include "tapstroop/rng.hpp"
#include "tapstroop/signal.hpp"

namespace tapstroop {

struct ResponderModel {
  double base_rt_ms = 500.0;      // congruent mean
  double rt_sigma_ms = 50.0;      // standard deviation, ms
  double stroop_delta_ms = 60.0;  // added to the incongruent mean
  double p_error_congruent = 0.02;
  double p_error_incongruent = 0.08;
  std::uint64_t seed = 0;

  void validate() const {
    auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
    require(base_rt_ms > 0.0 && rt_sigma_ms >= 0.0 && stroop_delta_ms >= 0.0 && prob(p_error_congruent) &&
                prob(p_error_incongruent),
            "ResponderModel: invalid parameters", Errc::InvalidConfig);
  }
};

inline nlohmann::json to_json(const ResponderModel& m) {
  return {{"base_rt_ms", m.base_rt_ms},
          {"rt_sigma_ms", m.rt_sigma_ms},
          {"stroop_delta_ms", m.stroop_delta_ms},
          {"p_error_congruent", m.p_error_congruent},
          {"p_error_incongruent", m.p_error_incongruent},
          {"seed", m.seed}};
}

inline ResponderModel responder_model_from_json(const nlohmann::json& j) {
  ResponderModel m;
  try {
    m.base_rt_ms = j.value("base_rt_ms", m.base_rt_ms);
    m.rt_sigma_ms = j.value("rt_sigma_ms", m.rt_sigma_ms);
    m.stroop_delta_ms = j.value("stroop_delta_ms", m.stroop_delta_ms);
    m.p_error_congruent = j.value("p_error_congruent", m.p_error_congruent);
    m.p_error_incongruent = j.value("p_error_incongruent", m.p_error_incongruent);
    m.seed = j.value("seed", m.seed);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::ParseError, std::string("responder model: ") + e.what());
  }
  m.validate();
  return m;
}

struct SampledResponse {
  Material key = Material::Rubber;
  double rt_ms = 0.0;
};

/// Stateful response generator. Each call consumes the same number of draws
/// whatever the condition, so a null model yields identical RT streams for
/// congruent and incongruent trials.
class Responder {
 public:
  explicit Responder(ResponderModel model) : model_(model), rng_(derive_seed(model.seed, 0x5245535000ULL)) {
    model_.validate();
  }

  SampledResponse sample(Block condition, Material visual) {
    const double mean = model_.base_rt_ms + (condition == Block::Incongruent ? model_.stroop_delta_ms : 0.0);
    // Lognormal with the requested mean and standard deviation.
    const double sigma2 = std::log1p((model_.rt_sigma_ms * model_.rt_sigma_ms) / (mean * mean));
    const double mu = std::log(mean) - 0.5 * sigma2;
    const double z = rng_.normal();
    const double p_error = condition == Block::Incongruent ? model_.p_error_incongruent : model_.p_error_congruent;
    const bool wrong = rng_.uniform01() < p_error;
    return {wrong ? other_material(visual) : visual, std::exp(mu + std::sqrt(sigma2) * z)};
  }

  const ResponderModel& model() const { return model_; }

 private:
  ResponderModel model_;
  Rng rng_;
};

inline SampledResponse sample_response(Responder& responder, Block condition, Material visual) {
  return responder.sample(condition, visual);
}

/// How the simulated hand moves the stylus for each tap.
struct TapProfile {
  double min_velocity = 0.3;  // m/s, tip speed drawn uniformly per tap
  double max_velocity = 0.9;
  double approach_rad = 0.05;      // travel from rest to the cube face
  double press_rad = 0.002;        // foam compression past the face
  std::int64_t retreat_us = 30000;     // lift-off duration after contact
  std::int64_t inter_trial_us = 300000;  // pause between response and next tap
  std::uint64_t seed = 0;

  void validate() const {
    require(min_velocity > 0.0 && max_velocity >= min_velocity && approach_rad > 0.0 && press_rad >= 0.0 &&
                retreat_us > 0 && inter_trial_us > 0,
            "TapProfile: invalid parameters", Errc::InvalidConfig);
  }
};

struct SimulatedSession {
  std::vector<EventRecord> events;
  SessionSummary summary;  // engine summary; partial/InsufficientData surfaces as summary_error
  bool has_summary = false;
  std::string summary_error;
};

/// Runs one complete session: for every scheduled trial the participant taps
/// the cube through the device loop and answers after a sampled delay.
inline SimulatedSession run_simulated_session(const SessionConfig& config, const ResponderModel& model,
                                              const TapProfile& taps = {}, const StylusGeometry& geometry = {},
                                              const DeviceConfig& device_config = {},
                                              const MaterialTable& materials = placeholder_materials()) {
  taps.validate();
  Session session(config, materials);
  Responder responder(model);
  Rng tap_rng(derive_seed(taps.seed ^ model.seed, 0x544150ULL, config.seed));

  const double rest = geometry.contact_angle - taps.approach_rad;
  DeviceSim device(Trajectory({{0, rest}}), geometry, device_config);

  std::int64_t next_tap_us = taps.inter_trial_us;
  while (!session.finished()) {
    const double v = tap_rng.uniform(taps.min_velocity, taps.max_velocity);
    const double omega = v / geometry.arm_length;
    auto us_for = [&](double rad) { return std::max<std::int64_t>(1, std::llround(rad / omega * 1e6)); };
    const std::int64_t t_face = next_tap_us + us_for(taps.approach_rad);
    const std::int64_t t_press = t_face + us_for(taps.press_rad);
    auto& traj = device.trajectory();
    traj.append(next_tap_us, rest);
    traj.append(t_face, geometry.contact_angle);
    traj.append(t_press, geometry.contact_angle + taps.press_rad);
    traj.append(t_press + taps.retreat_us, rest);

    const auto contact = device.run_until_contact(t_press + taps.retreat_us);
    if (!contact) throw Error(Errc::ContractViolation, "simulated tap produced no contact");
    session.on_contact(*contact);

    const Trial& trial = *session.active_trial();
    const auto answer = responder.sample(trial.block, trial.visual);
    const std::int64_t t_response = contact->timestamp_us + std::max<std::int64_t>(1, std::llround(answer.rt_ms * 1000.0));
    // Keep the 10 kHz loop running through the answer period.
    if (device.run_until(t_response).size() != 0)
      throw Error(Errc::ContractViolation, "unexpected second contact during response period");
    session.on_response(answer.key, t_response);
    next_tap_us = std::max(t_response, t_press + taps.retreat_us) + taps.inter_trial_us;
  }

  SimulatedSession out;
  out.events = session.events();
  try {
    out.summary = session.summarize();
    out.has_summary = true;
  } catch (const Error& e) {
    out.summary_error = e.what();
  }
  return out;
}

}  // namespace tapstroop
