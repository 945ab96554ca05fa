#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string_view>

#include <json.hpp>

namespace tapstroop {

enum class EventKind { TrialStart, Contact, Stimulus, Response, TrialResult, BlockEnd, SessionEnd };

inline constexpr std::array<std::string_view, 7> kEventKindNames{
    "TrialStart", "Contact", "Stimulus", "Response", "TrialResult", "BlockEnd", "SessionEnd"};

constexpr std::string_view event_kind_name(EventKind k) { return kEventKindNames[static_cast<std::size_t>(k)]; }

inline std::optional<EventKind> parse_event_kind(std::string_view name) {
  for (std::size_t i = 0; i < kEventKindNames.size(); ++i)
    if (kEventKindNames[i] == name) return static_cast<EventKind>(i);
  return std::nullopt;
}

/// One line of a session log. `seq` starts at 1 and increases by one per
/// record; `t_us` never decreases.
struct EventRecord {
  std::uint64_t seq = 0;
  std::int64_t t_us = 0;
  EventKind kind = EventKind::TrialStart;
  nlohmann::json payload = nlohmann::json::object();

  friend bool operator==(const EventRecord&, const EventRecord&) = default;
};

}  // namespace tapstroop
