#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace pcvault::manifest {

inline constexpr std::string_view kIndexToken = "$Index$";
inline constexpr std::string_view kLevelNone = "NONE";
inline constexpr std::string_view kLevelFull = "FULL";

struct Manifest {
  std::uint32_t frame_rate = 24;
  std::uint64_t frame_count = 1;
  std::string media_template;
  std::string encryption_level{kLevelNone};  // NONE | FULL | pattern text
  std::optional<std::string> policy;
  std::optional<std::string> license_url;

  bool encrypted() const { return encryption_level != kLevelNone; }
  double duration_s() const { return static_cast<double>(frame_count) / frame_rate; }
  bool operator==(const Manifest&) const = default;
};

// Throws SchemaViolation or BadTemplate.
void validate(const Manifest& m);

// <MPD frameRate frameCount encryptionLevel [policy] [licenseUrl]>
//   <SegmentTemplate media="..."/>
// </MPD>
std::string generate_mpd(const Manifest& m);
Manifest parse_mpd(std::string_view text);

// Template with $Index$ replaced by the index, zero-padded to the width of
// frame_count - 1. Throws IndexOutOfRange.
std::string frame_url(const Manifest& m, std::uint64_t index);

}  // namespace pcvault::manifest
