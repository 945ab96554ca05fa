#pragma once

// Contact transient synthesis, DAC quantization and masking noise.
//
// The transient is a decaying sinusoid scaled by impact velocity:
//
//   V(t) = A * v * exp(-B * t) * sin(2 * pi * f * t)
//
// with A the amplitude coefficient (output units per m/s), B the decay rate
// (1/s) and f the frequency (Hz). Everything here is a pure function.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tapstroop/error.hpp"
#include "tapstroop/rng.hpp"

namespace tapstroop {

enum class Material { Rubber, Aluminum };

inline constexpr std::array<Material, 2> kMaterials{Material::Rubber, Material::Aluminum};

constexpr std::string_view material_name(Material m) {
  return m == Material::Rubber ? "rubber" : "aluminum";
}

constexpr Material other_material(Material m) {
  return m == Material::Rubber ? Material::Aluminum : Material::Rubber;
}

inline std::optional<Material> parse_material(std::string_view name) {
  if (name == "rubber" || name == "Rubber") return Material::Rubber;
  if (name == "aluminum" || name == "Aluminum" || name == "aluminium") return Material::Aluminum;
  return std::nullopt;
}

struct MaterialParams {
  Material material = Material::Rubber;
  double amplitude = 0.0;   // A
  double decay_rate = 0.0;  // B
  double frequency = 1.0;   // f

  bool valid() const {
    return std::isfinite(amplitude) && std::isfinite(decay_rate) && std::isfinite(frequency) &&
           amplitude >= 0.0 && decay_rate >= 0.0 && frequency > 0.0;
  }

  friend bool operator==(const MaterialParams&, const MaterialParams&) = default;
};

/// Parameter set for both materials, indexed by Material.
struct MaterialTable {
  MaterialParams rubber{Material::Rubber, 0.0, 0.0, 1.0};
  MaterialParams aluminum{Material::Aluminum, 0.0, 0.0, 1.0};

  const MaterialParams& operator[](Material m) const { return m == Material::Rubber ? rubber : aluminum; }
  MaterialParams& operator[](Material m) { return m == Material::Rubber ? rubber : aluminum; }

  friend bool operator==(const MaterialTable&, const MaterialTable&) = default;
};

/// Placeholder values for the built-in table. They are NOT measured constants;
/// experiments should load a calibrated materials.json instead.
inline MaterialTable placeholder_materials() {
  MaterialTable t;
  t.rubber = {Material::Rubber, 0.6, 90.0, 80.0};
  t.aluminum = {Material::Aluminum, 1.0, 30.0, 300.0};
  return t;
}

struct SynthesisConfig {
  double sample_rate = 10000.0;
  double envelope_cutoff = 0.01;  // fraction of the initial envelope
  double max_duration = 1.0;      // s
  double output_clamp = 1.0;

  bool valid() const {
    return sample_rate > 0.0 && envelope_cutoff > 0.0 && envelope_cutoff < 1.0 && max_duration > 0.0 &&
           output_clamp > 0.0 && output_clamp <= 1.0;
  }
};

struct WaveformBuffer {
  double sample_rate = 10000.0;
  std::vector<double> samples;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
  double duration() const { return static_cast<double>(samples.size()) / sample_rate; }
};

namespace detail {

// sin(2*pi*f*t) with the phase reduced in half-cycles before the multiply by
// pi. f*t is split into an exact hi+lo pair so the result keeps full relative
// precision next to zero crossings, even hundreds of cycles in.
inline double sin_two_pi_ft(double f, double t) {
  const double p = f * t;
  const double p_err = std::fma(f, t, -p);
  const double half_cycles = 2.0 * p;
  const double n = std::nearbyint(half_cycles);
  const double r = (half_cycles - n) + 2.0 * p_err;
  const double s = std::sin(std::numbers::pi * r);
  return std::fmod(n, 2.0) != 0.0 ? -s : s;
}

}  // namespace detail

/// One unclamped sample of the transient at time t (s) for impact speed v (m/s).
inline double synth_sample(const MaterialParams& params, double v, double t) {
  require(v >= 0.0 && std::isfinite(v), "synth_sample: velocity must be finite and >= 0");
  require(t >= 0.0 && std::isfinite(t), "synth_sample: time must be finite and >= 0");
  if (v == 0.0 || params.amplitude == 0.0 || t == 0.0) return 0.0;
  return params.amplitude * v * std::exp(-params.decay_rate * t) * detail::sin_two_pi_ft(params.frequency, t);
}

/// Number of samples the transient occupies: until the envelope falls to
/// envelope_cutoff of its initial value, capped at max_duration.
inline std::size_t transient_length(const MaterialParams& params, const SynthesisConfig& config) {
  const double cap = std::ceil(config.max_duration * config.sample_rate);
  if (params.decay_rate == 0.0) return static_cast<std::size_t>(cap);
  const double decay_time = std::log(1.0 / config.envelope_cutoff) / params.decay_rate;
  return static_cast<std::size_t>(std::min(std::ceil(decay_time * config.sample_rate), cap));
}

inline WaveformBuffer render_transient(const MaterialParams& params, double v, const SynthesisConfig& config = {}) {
  require(config.valid(), "render_transient: invalid synthesis config", Errc::InvalidConfig);
  require(params.valid(), "render_transient: invalid material params", Errc::InvalidConfig);
  require(params.frequency < config.sample_rate / 2.0, "render_transient: frequency at or above Nyquist",
          Errc::InvalidConfig);
  require(v >= 0.0 && std::isfinite(v), "render_transient: velocity must be finite and >= 0");

  WaveformBuffer out{config.sample_rate, {}};
  if (v == 0.0) return out;

  const std::size_t n = transient_length(params, config);
  out.samples.resize(n);
  const double lim = config.output_clamp;
  for (std::size_t k = 0; k < n; ++k) {
    // k / rate rather than k * (1 / rate): keeps shared time points of
    // renders at different rates bit-identical.
    const double t = static_cast<double>(k) / config.sample_rate;
    out.samples[k] = std::clamp(synth_sample(params, v, t), -lim, lim);
  }
  return out;
}

inline constexpr int kDacBits = 12;
inline constexpr std::uint16_t kDacMaxCode = (1u << kDacBits) - 1;  // 4095

/// Offset-binary 12-bit code; ties round away from zero (0.0 -> 2048).
inline std::uint16_t quantize_dac(double x) {
  require(x >= -1.0 && x <= 1.0, "quantize_dac: sample outside [-1, 1]");
  return static_cast<std::uint16_t>(std::round((x + 1.0) / 2.0 * kDacMaxCode));
}

inline double dequantize_dac(std::uint16_t code) {
  return 2.0 * static_cast<double>(code) / kDacMaxCode - 1.0;
}

/// White masking noise, i.i.d. uniform on [-a, a].
inline WaveformBuffer gen_masking_noise(std::uint64_t seed, std::size_t n, double amplitude,
                                        double sample_rate = 10000.0) {
  require(amplitude >= 0.0 && amplitude <= 1.0, "gen_masking_noise: amplitude outside [0, 1]");
  WaveformBuffer out{sample_rate, std::vector<double>(n)};
  Rng rng(seed);
  for (auto& s : out.samples) s = amplitude * (2.0 * rng.uniform01() - 1.0);
  return out;
}

}  // namespace tapstroop
