#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pcvault/delivery.hpp"
#include "pcvault/pattern.hpp"

namespace pcvault::harness {

// ---------------------------------------------------------------- datasets
//
// DIR/dataset.txt                  points, frames, fps, seed
// DIR/keys/public.key              authority-side public parameters
// DIR/keys/public.client.key       the same, as handed to players
// DIR/keys/master.key
// DIR/NONE/manifest.mpd            + frames/f_NNNN.ply
// DIR/<LEVEL>/manifest.mpd         + frames/f_NNNN.eply, LEVEL canonical

struct DatasetOptions {
  std::size_t points_per_frame = 10000;
  std::uint64_t frame_count = 120;
  std::uint32_t frame_rate = 24;
  std::filesystem::path out_dir;
  std::uint64_t seed = 1;
  std::vector<std::string> levels;  // encrypted variants to produce
  std::string policy = "subscriber";
};

struct DatasetInfo {
  std::size_t points_per_frame = 0;
  std::uint64_t frame_count = 0;
  std::uint32_t frame_rate = 0;
  std::uint64_t seed = 0;
};

// Throws IoError or InvalidArgument.
void gen_dataset(const DatasetOptions& opts);
DatasetInfo read_dataset_info(const std::filesystem::path& dir);

// Directory name for a level: "NONE" or the canonical granularity text.
std::string level_dir(std::string_view level);

// Encrypts DIR/NONE into DIR/<level> unless a variant with the same policy
// already exists. Returns the variant directory.
std::filesystem::path ensure_level(const std::filesystem::path& dir, std::string_view level, std::string_view policy);

// ---------------------------------------------------------------- benches

struct BenchRow {
  std::string pattern;
  std::string op;  // "encrypt" | "decrypt"
  double mean_ms = 0.0;
  double median_ms = 0.0;
  double p95_ms = 0.0;
  double reduction_vs_full_pct = 0.0;  // median-based
  bool operator==(const BenchRow&) const = default;
};

// Default benchmark access structure: the shape content carries in
// deployment, a subscription tag plus an expiry clause.
inline constexpr std::string_view kBenchPolicy = "subscriber and exp >= 20260101";
inline constexpr std::string_view kBenchAttributes = "subscriber;exp=20991231";

// Times encrypt_frame and decrypt_frame per granularity under `policy`,
// decrypting with a key for `attributes`. FULL is measured as the baseline
// even when not requested. Throws InvalidArgument for repetitions < 1 or
// attributes that do not satisfy the policy.
std::vector<BenchRow> bench_codec(ByteView ply, std::span<const Granularity> granularities, std::size_t repetitions,
                                  std::string_view policy = kBenchPolicy,
                                  std::string_view attributes = kBenchAttributes);
std::string bench_csv(std::span<const BenchRow> rows);
std::vector<BenchRow> parse_bench_csv(std::string_view text);

struct Stats {
  double mean = 0.0;
  double median = 0.0;
  double p95 = 0.0;
};
// Nearest-rank percentiles. Throws InvalidArgument on empty input.
Stats summarize(std::vector<double> samples);

// geometry::obfuscation_report as CSV.
std::string quality_report(ByteView ply, std::span<const Pattern> patterns);

// ---------------------------------------------------------------- experiments

struct Scenario {
  std::size_t clients = 3;
  double lambda_s = 5.0;
  double buffer_s = 1.0;
  std::size_t queue = 1;
  std::string level = "NONE";
  std::optional<std::string> policy;
  double cache_mb = 0.0;  // MiB
  bool warmup = false;
  std::filesystem::path dataset;
  std::uint64_t seed = 1;
  std::string client_attrs = "subscriber";
  std::uint32_t today = 0;  // license date; 0 = current UTC date

  std::uint64_t cache_bytes() const;
};

// key=value lines, '#' comments. A relative dataset path is resolved
// against `base_dir`. Throws ScenarioError with the line in detail().
Scenario parse_scenario(std::string_view text, const std::filesystem::path& base_dir = {});
Scenario load_scenario(const std::filesystem::path& path);

struct SummaryRow {
  std::string metric;
  std::string scope;
  double value = 0.0;
  bool operator==(const SummaryRow&) const = default;
};
std::string summary_csv(std::span<const SummaryRow> rows);
std::vector<SummaryRow> parse_summary_csv(std::string_view text);

struct ClientResult {
  std::string id;
  double start_offset_s = 0.0;
  int exit_code = 0;
  std::optional<double> rebuffering_pct;  // absent when the client failed
  std::vector<std::uint64_t> frame_sequence;
  double cpu_s = 0.0;
};

struct PassResult {
  std::string name;  // "warmup" | "measured"
  std::vector<ClientResult> clients;
  std::vector<delivery::AccessRecord> records;
};

struct ExperimentReport {
  Scenario scenario;
  std::optional<PassResult> warmup;
  PassResult measured;
  std::map<std::string, double> service_cpu_s;  // origin, license, cache
  std::vector<SummaryRow> summary;

  // Measured cache paths with the level directory stripped, sorted.
  std::vector<std::string> normalized_requests() const;
};

struct ExperimentOptions {
  std::filesystem::path executable;  // the pcvault CLI
  std::filesystem::path out_dir;
  std::chrono::milliseconds service_timeout{10000};
};

// Launches origin, license and cache as child processes on loopback, runs
// clients at Poisson offsets (after an optional warm-up pass), then writes
// summary.csv, per-client session CSVs, the cache access log and a 1 s CPU
// trace into out_dir. Client failures are counted, not fatal.
// Throws ScenarioError, ServiceStartFailure or IoError.
ExperimentReport run_experiment(const Scenario& scenario, const ExperimentOptions& opts);

}  // namespace pcvault::harness
