#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pcvault/abe.hpp"
#include "pcvault/manifest.hpp"

namespace pcvault::player {

struct PlayerConfig {
  std::string mpd_url;
  double buffer_seconds = 1.0;  // playback buffer and startup threshold
  bool decrypt = false;
  std::optional<abe::PublicParams> public_params;
  std::optional<abe::UserKey> user_key;
  std::size_t download_queue = 1;
};

// All times are milliseconds since stream() was entered.
struct FrameRecord {
  std::uint64_t index = 0;
  double download_ms = 0.0;
  double decrypt_ms = 0.0;
  double enqueue_ms = 0.0;
  double dequeue_ms = 0.0;
  bool operator==(const FrameRecord&) const = default;
};

struct StallRecord {
  double start_ms = 0.0;
  double duration_ms = 0.0;
  bool operator==(const StallRecord&) const = default;
};

struct OccupancySample {
  double t_ms = 0.0;
  std::size_t frames = 0;
  bool operator==(const OccupancySample&) const = default;
};

struct SessionLog {
  manifest::Manifest manifest;
  std::size_t buffer_capacity = 0;  // frames
  double playback_start_ms = 0.0;
  std::vector<FrameRecord> frames;  // index order
  std::vector<StallRecord> stalls;
  std::vector<OccupancySample> occupancy;
};

// Plays the stream on a virtual clock. Playback starts once the buffer is
// full (or holds every frame); each tick dequeues one frame; a tick that
// finds the buffer empty opens a stall that closes when the next frame
// arrives, and the clock restarts from that arrival.
//
// Throws ManifestError, HttpError (detail = status, 0 if unreachable),
// DecryptError, LevelMismatch, or InvalidArgument for a bad config.
SessionLog stream(const PlayerConfig& cfg);

// 100 * total stall time / media duration. May exceed 100.
double compute_rebuffering(std::span<const StallRecord> stalls, double media_duration_s);
double compute_rebuffering(const SessionLog& log, double media_duration_s);

// Cumulative exponential gaps with mean `lambda_s`; the first offset is 0.
std::vector<double> schedule_poisson(std::size_t n_clients, double lambda_s, std::uint64_t seed);

// "index,download_ms,decrypt_ms,enqueue_ms,dequeue_ms"
std::string frames_csv(std::span<const FrameRecord> frames);
std::vector<FrameRecord> parse_frames_csv(std::string_view text);
// "start_ms,duration_ms"
std::string stalls_csv(std::span<const StallRecord> stalls);
std::vector<StallRecord> parse_stalls_csv(std::string_view text);
// "t_ms,frames"
std::string occupancy_csv(std::span<const OccupancySample> samples);

// Writes <prefix>.frames.csv, <prefix>.stalls.csv and <prefix>.occupancy.csv.
void write_session(const SessionLog& log, const std::filesystem::path& prefix);

}  // namespace pcvault::player
