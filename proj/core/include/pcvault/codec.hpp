#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "pcvault/abe.hpp"
#include "pcvault/bytes.hpp"
#include "pcvault/pattern.hpp"
#include "pcvault/ply.hpp"

namespace pcvault::codec {

inline constexpr std::string_view kMarkerMagic = "ABEV";
inline constexpr std::uint16_t kMarkerVersion = 1;
inline constexpr std::string_view kEncryptedExtension = ".eply";

enum class Mode : std::uint8_t { Selective = 0, Full = 1 };

// Trailer written after the reduced body (or at offset 0 for FULL frames):
// "ABEV", u16 version, u8 mode, u16 pattern length, pattern, u64 blob length.
struct Marker {
  Mode mode = Mode::Selective;
  std::string pattern;
  std::uint64_t blob_length = 0;

  std::size_t size() const { return 4 + 2 + 1 + 2 + pattern.size() + 8; }
};

// A located encrypted frame. `header` is absent for FULL frames.
struct FrameView {
  std::optional<ply::Header> header;
  Marker marker;
  std::size_t marker_offset = 0;
  ByteView reduced_body;
  ByteView blob;
};

// Finds and validates the marker of an encrypted frame.
FrameView inspect_frame(ByteView encrypted);

// Coordinates targeted by `pattern`, as raw little-endian doubles in
// (vertex ascending, X then Y then Z) order.
Bytes removal_buffer(ByteView ply, const Pattern& pattern);

// Selective mode: original header, records with targeted coordinates
// removed, marker, blob over the removal buffer. FULL: marker, blob over the
// whole file.
Bytes encrypt_frame(ByteView ply, const Granularity& granularity, const abe::PublicParams& pp,
                    const abe::PolicyTree& policy, RandomSource& rng = system_random());

// Inverse of encrypt_frame; byte-exact.
Bytes decrypt_frame(ByteView encrypted, const abe::UserKey& key);

// What an unauthorised viewer can rebuild: the original layout with every
// targeted coordinate set to 0.0.
Bytes zero_fill(ByteView encrypted);

// |encrypted| for a given frame, granularity and policy, without encrypting.
std::size_t encrypted_size(ByteView ply, const Granularity& granularity, const abe::PolicyTree& policy);

}  // namespace pcvault::codec
