#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string_view>

namespace blm {

enum class Voice : std::uint8_t { Act = 0, Pass = 1, Caus = 2, CausPass = 3 };

inline constexpr std::size_t kVoiceCount = 4;
inline constexpr std::array<Voice, kVoiceCount> kAllVoices = {Voice::Act, Voice::Pass,
                                                             Voice::Caus, Voice::CausPass};

constexpr std::size_t index_of(Voice v) noexcept { return static_cast<std::size_t>(v); }

constexpr std::string_view to_string(Voice v) noexcept {
  switch (v) {
    case Voice::Act: return "Act";
    case Voice::Pass: return "Pass";
    case Voice::Caus: return "Caus";
    case Voice::CausPass: return "CausPass";
  }
  return "?";
}

constexpr std::optional<Voice> parse_voice(std::string_view s) noexcept {
  for (Voice v : kAllVoices) {
    if (to_string(v) == s) return v;
  }
  return std::nullopt;
}

}  // namespace blm
