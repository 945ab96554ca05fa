#pragma once

// Fixed-step simulation of the stylus firmware loop: a rotary encoder on the
// stylus pivot is read every tick, contact with the cube face is detected by
// an angle threshold, and the tip speed at impact is estimated from the count
// history.

#include <cmath>
#include <cstdint>
#include <deque>
#include <istream>
#include <numbers>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "tapstroop/error.hpp"

namespace tapstroop {

// ---------------------------------------------------------------------------
// Quadrature decoding

/// Phase states are two-bit AB values visited in the Gray order
/// 00 -> 01 -> 11 -> 10 -> 00 when turning forward.
constexpr int gray_position(std::uint8_t ab) {
  switch (ab & 0b11) {
    case 0b00: return 0;
    case 0b01: return 1;
    case 0b11: return 2;
    default: return 3;  // 0b10
  }
}

constexpr std::uint8_t gray_phase(std::int64_t count) {
  constexpr std::uint8_t kPhases[4] = {0b00, 0b01, 0b11, 0b10};
  return kPhases[((count % 4) + 4) % 4];
}

/// x4 decode of one sampled transition. A two-step jump means at least one
/// edge was missed and the direction is unknowable.
inline int decode_quadrature(std::uint8_t prev_ab, std::uint8_t next_ab) {
  require(prev_ab <= 0b11 && next_ab <= 0b11, "decode_quadrature: phase state must be two bits");
  switch ((gray_position(next_ab) - gray_position(prev_ab) + 4) % 4) {
    case 0: return 0;
    case 1: return +1;
    case 3: return -1;
    default:
      throw Error(Errc::InvalidTransition, "decode_quadrature: two-step phase jump (missed sample)");
  }
}

struct EncoderModel {
  static constexpr int pulses_per_rev = 2000;
  static constexpr int counts_per_rev = 4 * pulses_per_rev;

  std::int64_t count = 0;
  std::uint8_t last_ab = 0;

  static EncoderModel homed_at(std::int64_t count) { return {count, gray_phase(count)}; }

  /// Applies one sampled phase state. On InvalidTransition the model is left
  /// untouched and the error propagates.
  int feed(std::uint8_t ab) {
    const int delta = decode_quadrature(last_ab, ab);
    count += delta;
    last_ab = ab;
    return delta;
  }

  /// Walks every edge between the current count and `physical_count`, the way
  /// a hardware pulse counter sees them regardless of the loop rate.
  void follow(std::int64_t physical_count) {
    while (count != physical_count) feed(gray_phase(count < physical_count ? count + 1 : count - 1));
  }
};

// ---------------------------------------------------------------------------
// Geometry and kinematics

struct StylusGeometry {
  double arm_length = 0.10;     // m, pivot to tip
  double contact_angle = 0.30;  // rad, tip meets the cube face

  bool valid() const { return arm_length > 0.0 && std::isfinite(contact_angle); }
};

/// Encoder count corresponding to an angle (floor of the continuous position).
inline std::int64_t angle_to_count(double angle_rad, int counts_per_rev = EncoderModel::counts_per_rev) {
  return static_cast<std::int64_t>(std::floor(angle_rad * counts_per_rev / (2.0 * std::numbers::pi)));
}

/// Tip speed from the count difference across `window` (oldest first), whose
/// samples are 1/sample_rate apart.
inline double estimate_velocity(std::span<const std::int64_t> window, const StylusGeometry& geometry,
                                double sample_rate, int counts_per_rev = EncoderModel::counts_per_rev) {
  if (window.size() < 2) throw Error(Errc::InsufficientHistory, "estimate_velocity: need at least two samples");
  require(geometry.valid() && sample_rate > 0.0, "estimate_velocity: invalid geometry or rate");
  const double delta = std::fabs(static_cast<double>(window.back() - window.front()));
  const double elapsed = static_cast<double>(window.size() - 1) / sample_rate;
  const double omega = delta / counts_per_rev * 2.0 * std::numbers::pi / elapsed;
  return omega * geometry.arm_length;
}

// ---------------------------------------------------------------------------
// Trajectories

/// Piecewise-linear stylus angle over time. Before the first point and after
/// the last, the nearest endpoint is held.
class Trajectory {
 public:
  struct Point {
    std::int64_t t_us;
    double angle_rad;
  };

  Trajectory() = default;
  explicit Trajectory(std::vector<Point> points) {
    for (const auto& p : points) append(p.t_us, p.angle_rad);
  }

  void append(std::int64_t t_us, double angle_rad) {
    require(std::isfinite(angle_rad), "Trajectory: angle must be finite");
    require(points_.empty() || t_us > points_.back().t_us, "Trajectory: times must be strictly increasing");
    points_.push_back({t_us, angle_rad});
  }

  bool empty() const { return points_.empty(); }
  const std::vector<Point>& points() const { return points_; }
  std::int64_t end_us() const { return points_.empty() ? 0 : points_.back().t_us; }

  double angle_at(std::int64_t t_us) const {
    std::size_t hint = 0;
    return angle_at(t_us, hint);
  }

  /// Lookup with a caller-owned cursor; O(1) amortized for monotone queries.
  double angle_at(std::int64_t t_us, std::size_t& cursor) const {
    if (points_.empty()) return 0.0;
    if (t_us <= points_.front().t_us) return points_.front().angle_rad;
    if (t_us >= points_.back().t_us) return points_.back().angle_rad;
    if (cursor >= points_.size() - 1 || points_[cursor].t_us > t_us) cursor = 0;
    while (points_[cursor + 1].t_us < t_us) ++cursor;
    const auto& a = points_[cursor];
    const auto& b = points_[cursor + 1];
    const double u = static_cast<double>(t_us - a.t_us) / static_cast<double>(b.t_us - a.t_us);
    return a.angle_rad + u * (b.angle_rad - a.angle_rad);
  }

  /// Rows of `t_us,angle_rad`; a non-numeric first line is taken as a header.
  static Trajectory from_csv(std::istream& in) {
    Trajectory out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.find_first_not_of(" \t") == std::string::npos) continue;
      const auto comma = line.find(',');
      try {
        if (comma == std::string::npos) throw std::invalid_argument("missing comma");
        const auto t = std::stoll(line.substr(0, comma));
        const auto angle = std::stod(line.substr(comma + 1));
        if (!out.points_.empty() && t <= out.points_.back().t_us)
          throw LogError(Errc::ParseError, line_no, "trajectory times must be strictly increasing");
        out.append(t, angle);
      } catch (const LogError&) {
        throw;
      } catch (const std::exception&) {
        if (line_no == 1 && out.empty()) continue;
        throw LogError(Errc::ParseError, line_no, "malformed trajectory row '" + line + "'");
      }
    }
    return out;
  }

  void write_csv(std::ostream& out) const {
    std::ostringstream row;
    row.precision(17);
    out << "t_us,angle_rad\n";
    for (const auto& p : points_) {
      row.str("");
      row << p.t_us << ',' << p.angle_rad << '\n';
      out << row.str();
    }
  }

 private:
  std::vector<Point> points_;
};

// ---------------------------------------------------------------------------
// Firmware loop

struct ContactEvent {
  std::int64_t timestamp_us = 0;
  double velocity = 0.0;  // m/s at the tip
  std::int64_t tick_index = 0;

  friend bool operator==(const ContactEvent&, const ContactEvent&) = default;
};

enum class DecodeMode {
  EdgeCounter,     // every edge counted between ticks (hardware pulse counter)
  PerTickSampling  // phase sampled once per tick; fast motion loses edges
};

struct DeviceConfig {
  double loop_rate = 10000.0;          // Hz
  std::size_t velocity_window = 10;    // ticks spanned by the speed estimate
  std::int64_t refractory_us = 50000;  // debounce after an emitted contact
  std::int64_t hysteresis_counts = 2;  // retreat needed before re-arming
  DecodeMode decode = DecodeMode::EdgeCounter;

  std::int64_t tick_us() const { return static_cast<std::int64_t>(std::llround(1e6 / loop_rate)); }
  bool valid() const {
    return loop_rate > 0.0 && std::fabs(1e6 / loop_rate - static_cast<double>(tick_us())) < 1e-9 &&
           velocity_window >= 1 && refractory_us >= 0 && hysteresis_counts >= 0;
  }
};

class DeviceSim {
 public:
  explicit DeviceSim(Trajectory trajectory, StylusGeometry geometry = {}, DeviceConfig config = {})
      : trajectory_(std::move(trajectory)), geometry_(geometry), config_(config) {
    require(geometry_.valid(), "DeviceSim: invalid stylus geometry", Errc::InvalidConfig);
    require(config_.valid(), "DeviceSim: loop period must be a whole number of microseconds", Errc::InvalidConfig);
    threshold_ = static_cast<std::int64_t>(
        std::ceil(geometry_.contact_angle * EncoderModel::counts_per_rev / (2.0 * std::numbers::pi)));
    const auto start = angle_to_count(trajectory_.angle_at(0, cursor_));
    encoder_ = EncoderModel::homed_at(start);
    // The stylus has been resting at its start position before t = 0.
    history_.assign(config_.velocity_window + 1, start);
    armed_ = start < threshold_;
  }

  /// Runs one loop iteration at time tick() * tick_us and advances the tick.
  std::optional<ContactEvent> step() {
    const std::int64_t tick = tick_++;
    const std::int64_t t_us = tick * config_.tick_us();
    const auto physical = angle_to_count(trajectory_.angle_at(t_us, cursor_));
    read_encoder(physical, tick);

    history_.pop_front();
    history_.push_back(encoder_.count);

    const std::int64_t count = encoder_.count;
    if (!armed_) {
      if (count < threshold_ - config_.hysteresis_counts) armed_ = true;
      return std::nullopt;
    }
    if (count < threshold_) return std::nullopt;

    armed_ = false;
    if (last_event_tick_ && (tick - *last_event_tick_) * config_.tick_us() < config_.refractory_us) {
      ++suppressed_;
      return std::nullopt;
    }
    last_event_tick_ = tick;
    const std::vector<std::int64_t> window(history_.begin(), history_.end());
    return ContactEvent{t_us, estimate_velocity(window, geometry_, config_.loop_rate), tick};
  }

  /// Steps while now_us() <= t_us and collects every contact.
  std::vector<ContactEvent> run_until(std::int64_t t_us) {
    std::vector<ContactEvent> events;
    while (now_us() <= t_us)
      if (auto ev = step()) events.push_back(*ev);
    return events;
  }

  /// Steps until the next contact or until now_us() passes t_limit_us.
  std::optional<ContactEvent> run_until_contact(std::int64_t t_limit_us) {
    while (now_us() <= t_limit_us)
      if (auto ev = step()) return ev;
    return std::nullopt;
  }

  Trajectory& trajectory() { return trajectory_; }
  const Trajectory& trajectory() const { return trajectory_; }
  const StylusGeometry& geometry() const { return geometry_; }
  const DeviceConfig& config() const { return config_; }
  const EncoderModel& encoder() const { return encoder_; }

  std::int64_t tick() const { return tick_; }
  std::int64_t now_us() const { return tick_ * config_.tick_us(); }
  std::int64_t threshold_count() const { return threshold_; }
  std::size_t suppressed_contacts() const { return suppressed_; }
  /// Ticks at which a sampled phase jump lost edges (PerTickSampling only).
  const std::vector<std::int64_t>& invalid_transitions() const { return invalid_transitions_; }

 private:
  void read_encoder(std::int64_t physical, std::int64_t tick) {
    if (config_.decode == DecodeMode::EdgeCounter) {
      encoder_.follow(physical);
      return;
    }
    try {
      encoder_.feed(gray_phase(physical));
    } catch (const Error& e) {
      if (e.code() != Errc::InvalidTransition) throw;
      invalid_transitions_.push_back(tick);
      encoder_.last_ab = gray_phase(physical);
    }
  }

  Trajectory trajectory_;
  StylusGeometry geometry_;
  DeviceConfig config_;
  EncoderModel encoder_;
  std::deque<std::int64_t> history_;
  std::size_t cursor_ = 0;
  std::int64_t tick_ = 0;
  std::int64_t threshold_ = 0;
  bool armed_ = true;
  std::optional<std::int64_t> last_event_tick_;
  std::size_t suppressed_ = 0;
  std::vector<std::int64_t> invalid_transitions_;
};

}  // namespace tapstroop
