#pragma once

// Reference kinematics for device-loop tests: analytic tap trajectories and a
// brute-force scan that finds contacts directly from the sampled angle,
// without the encoder model, count window or loop state of DeviceSim.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

#include "tapstroop/device.hpp"

namespace tapstroop::testing {

/// Rest -> constant-speed approach to the face -> press -> retreat to rest.
inline Trajectory approach(const StylusGeometry& g, double tip_speed, double approach_rad, double press_rad,
                           std::int64_t retreat_us, std::int64_t start_us = 5000) {
  const double omega = tip_speed / g.arm_length;
  const double rest = g.contact_angle - approach_rad;
  const auto t_face = start_us + static_cast<std::int64_t>(std::llround(approach_rad / omega * 1e6));
  const auto t_press = t_face + std::max<std::int64_t>(1, std::llround(press_rad / omega * 1e6));
  // Extend the constant-rate segment through the face so the press keeps the
  // same slope.
  return Trajectory({{0, rest}, {start_us, rest}, {t_press, rest + omega * 1e-6 * static_cast<double>(t_press - start_us)},
                     {t_press + retreat_us, rest}});
}

inline Trajectory random_trajectory(std::mt19937_64& gen, const StylusGeometry& g) {
  std::uniform_int_distribution<int> nseg(3, 14);
  std::uniform_int_distribution<std::int64_t> dur(500, 80000);
  std::uniform_real_distribution<double> angle(g.contact_angle - 0.03, g.contact_angle + 0.01);
  std::vector<Trajectory::Point> pts;
  std::int64_t t = 0;
  const int n = nseg(gen);
  for (int i = 0; i <= n; ++i) {
    pts.push_back({t, angle(gen)});
    t += dur(gen);
  }
  return Trajectory(pts);
}

inline double max_tip_speed(const Trajectory& traj, const StylusGeometry& g) {
  double vmax = 0;
  const auto& p = traj.points();
  for (std::size_t i = 1; i < p.size(); ++i)
    vmax = std::max(vmax, std::fabs(p[i].angle_rad - p[i - 1].angle_rad) /
                              (static_cast<double>(p[i].t_us - p[i - 1].t_us) * 1e-6) * g.arm_length);
  return vmax;
}

/// Tick indices of approach-direction crossings of the contact angle, kept
/// only when at least the refractory period after the previous kept one.
inline std::vector<std::int64_t> brute_force_contacts(const Trajectory& traj, const StylusGeometry& g,
                                                      const DeviceConfig& cfg, std::int64_t until_us) {
  const double per_count = 2.0 * std::numbers::pi / 8000.0;
  const auto tick_us = static_cast<std::int64_t>(1e6 / cfg.loop_rate);
  const auto threshold = static_cast<std::int64_t>(std::ceil(g.contact_angle / per_count));
  std::vector<std::int64_t> counts;
  for (std::int64_t k = 0; k * tick_us <= until_us; ++k)
    counts.push_back(static_cast<std::int64_t>(std::floor(traj.angle_at(k * tick_us) / per_count)));

  std::vector<std::int64_t> crossings;
  bool away = counts.front() < threshold;
  for (std::size_t k = 0; k < counts.size(); ++k) {
    if (away && counts[k] >= threshold) {
      crossings.push_back(static_cast<std::int64_t>(k));
      away = false;
    } else if (!away && counts[k] < threshold - cfg.hysteresis_counts) {
      away = true;
    }
  }

  std::vector<std::int64_t> kept;
  for (auto k : crossings)
    if (kept.empty() || (k - kept.back()) * tick_us >= cfg.refractory_us) kept.push_back(k);
  return kept;
}

}  // namespace tapstroop::testing
